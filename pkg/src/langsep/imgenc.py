"""Convolutional image encoder producing a fused hypercolumn feature map.

A five-stage strided backbone extracts features at 1/2 through 1/32
resolution; all stages are bilinearly resized to the half-resolution grid and
concatenated into a hypercolumn, which a small fusion head projects to the
working channel width.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

BACKBONE_CHANNELS = (16, 32, 64, 128, 256)


class LeFF(nn.Module):
    """Locally-enhanced feed-forward block (pointwise, depthwise 3x3, pointwise).

    Operates on (B, C, H, W) maps.  The residual connection is added by the
    caller, so the block can sit after either a plain feature or a normalized
    one.

    Args:
        channels: input/output channel width.
        expansion: hidden width multiplier.
    """

    def __init__(self, channels: int, expansion: int = 4):
        super().__init__()
        hidden = channels * expansion
        self.expand = nn.Conv2d(channels, hidden, kernel_size=1)
        self.depthwise = nn.Conv2d(hidden, hidden, kernel_size=3, padding=1, groups=hidden)
        self.project = nn.Conv2d(hidden, channels, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.gelu(self.expand(x))
        x = F.gelu(self.depthwise(x))
        return self.project(x)


class ConvStage(nn.Module):
    """Stride-2 downsampling conv followed by a refinement conv."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.down = nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=2, padding=1)
        self.refine = nn.Conv2d(out_ch, out_ch, kernel_size=3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.gelu(self.down(x))
        return F.gelu(self.refine(x))


class ImageEncoder(nn.Module):
    """Backbone + hypercolumn fusion.

    Input images must have height and width divisible by 32 (five stride-2
    stages).  The output feature map lives at half the input resolution.

    Args:
        out_channels: fused feature width C.
        channels: per-stage backbone widths.
    """

    def __init__(
        self,
        out_channels: int = 256,
        channels: tuple[int, ...] = BACKBONE_CHANNELS,
    ):
        super().__init__()
        stages = []
        in_ch = 3
        for out_ch in channels:
            stages.append(ConvStage(in_ch, out_ch))
            in_ch = out_ch
        self.stages = nn.ModuleList(stages)
        self.hyper_channels = sum(channels)
        self.fuse_proj = nn.Conv2d(self.hyper_channels, out_channels, kernel_size=1)
        self.fuse_leff = LeFF(out_channels)
        self.out_channels = out_channels

    def backbone_features(self, img: torch.Tensor) -> list[torch.Tensor]:
        """Per-stage feature maps at 1/2 .. 1/32 resolution."""
        if img.shape[-2] % 32 or img.shape[-1] % 32:
            raise ValueError(
                f"input size {tuple(img.shape[-2:])} not divisible by 32"
            )
        feats = []
        x = img * 2.0 - 1.0  # [0,1] pixels -> zero-centred input
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        """Encode (B, 3, H, W) images into (B, C, H/2, W/2) fused features."""
        feats = self.backbone_features(img)
        target = feats[0].shape[-2:]
        cols = [feats[0]]
        for f in feats[1:]:
            cols.append(F.interpolate(f, size=target, mode="bilinear", align_corners=False))
        hyper = torch.cat(cols, dim=1)  # (B, sum(channels), H/2, W/2)
        x = F.gelu(self.fuse_proj(hyper))
        return x + self.fuse_leff(x)
