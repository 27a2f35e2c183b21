"""Layer decoder: reconstruct an sRGB image from a layer feature map.

Each layer gets its own decoder instance; there is no weight sharing between
the transmission and reflection heads.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class ResidualBlock(nn.Module):
    """Two 3x3 convs with GELU, added back to the input."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, kernel_size=3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, kernel_size=3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = F.gelu(self.conv1(x))
        y = F.gelu(self.conv2(y))
        return x + y


class LayerDecoder(nn.Module):
    """Upsample a (B, C, h, w) layer feature to a (B, 3, 2h, 2w) image.

    Transposed conv (2x2, stride 2, C -> C/2) with GELU, a residual
    refinement block, then a 1x1 projection to RGB with sigmoid, so outputs
    always lie in (0, 1).
    """

    def __init__(self, channels: int):
        super().__init__()
        if channels % 2:
            raise ValueError(f"channels must be even, got {channels}")
        half = channels // 2
        self.up = nn.ConvTranspose2d(channels, half, kernel_size=2, stride=2)
        self.refine = ResidualBlock(half)
        self.to_rgb = nn.Conv2d(half, 3, kernel_size=1)

    def forward(self, f_layer: torch.Tensor) -> torch.Tensor:
        x = F.gelu(self.up(f_layer))
        x = self.refine(x)
        return torch.sigmoid(self.to_rgb(x))
