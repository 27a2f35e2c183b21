"""Full separation network: image encoder, text encoder, interaction, decoders.

The model consumes a mixture image plus up to two caption token batches and
produces both layer estimates.  It also owns two loss-time components: a
dedicated global-aggregation head used to embed images for the
correspondence losses, and a frozen copy of the initial backbone that serves
as the perceptual-loss feature extractor.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .decoder import LayerDecoder
from .imgenc import BACKBONE_CHANNELS, ImageEncoder
from .interact import AGAM, InteractionStage, SeparationResult
from .textenc import MAX_CAPTION_LEN, TextEncoder


@dataclass
class ModelConfig:
    """Architecture hyperparameters; defaults match the desk-scale setup."""

    channels: int = 256
    num_groups: int = 4  # interaction groups per layer
    num_refinements: int = 2  # LeFF refinement blocks per group
    backbone_channels: tuple[int, ...] = field(default_factory=lambda: BACKBONE_CHANNELS)
    text_model_dim: int = 128
    text_num_layers: int = 2
    text_num_heads: int = 4
    max_caption_len: int = MAX_CAPTION_LEN
    s_mode: str = "cos"
    use_channel_attention: bool = True  # False swaps AGIMs for concat fusion
    use_language: bool = True  # False ignores all captions (self-attention only)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone_channels"] = list(self.backbone_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["backbone_channels"] = tuple(d["backbone_channels"])
        return cls(**d)


class SeparationOutput(NamedTuple):
    t_hat: torch.Tensor  # (B, 3, H, W) transmission estimate
    r_hat: torch.Tensor  # (B, 3, H, W) reflection estimate
    separation: SeparationResult


class SeparationModel(nn.Module):
    """Mixture image + optional captions -> two layer estimates.

    Args:
        vocab_size: text vocabulary size (including special tokens).
        config: architecture settings.
    """

    def __init__(self, vocab_size: int, config: Optional[ModelConfig] = None):
        super().__init__()
        config = config or ModelConfig()
        self.config = config
        self.encoder = ImageEncoder(config.channels, config.backbone_channels)
        self.text_encoder = TextEncoder(
            vocab_size,
            out_dim=config.channels,
            model_dim=config.text_model_dim,
            num_layers=config.text_num_layers,
            num_heads=config.text_num_heads,
            max_len=config.max_caption_len,
        )
        self.stage = InteractionStage(
            config.channels,
            num_groups=config.num_groups,
            num_refinements=config.num_refinements,
            s_mode=config.s_mode,
            use_channel_attention=config.use_channel_attention,
        )
        self.decoder_t = LayerDecoder(config.channels)
        self.decoder_r = LayerDecoder(config.channels)
        # Dedicated aggregation head for loss-side image embeddings; trained
        # jointly but separate from the in-network AGAMs.
        self.loss_embedder = AGAM(config.channels)
        # Frozen copy of the freshly initialized encoder; its stages 2-4
        # provide perceptual-loss features and never receive updates.
        perceptual = copy.deepcopy(self.encoder)
        for p in perceptual.parameters():
            p.requires_grad_(False)
        self.perceptual_encoder = perceptual

    def forward(
        self,
        mixture: torch.Tensor,
        ids_t: Optional[torch.Tensor] = None,
        avail_t: Optional[torch.Tensor] = None,
        ids_r: Optional[torch.Tensor] = None,
        avail_r: Optional[torch.Tensor] = None,
    ) -> SeparationOutput:
        """Separate a batch of mixtures.

        Args:
            mixture: (B, 3, H, W) images in [0, 1], H and W divisible by 32.
            ids_t, ids_r: (B, L) caption token ids per layer, or None.
            avail_t, avail_r: (B,) bool masks; rows with False fall back to
                self-attention regardless of the id content.
        """
        f_m = self.encoder(mixture)
        f_l_t = f_l_r = None
        if self.config.use_language:
            if ids_t is not None:
                f_l_t = self.text_encoder(ids_t)
            if ids_r is not None:
                f_l_r = self.text_encoder(ids_r)
        else:
            avail_t = avail_r = None
        sep = self.stage(f_m, f_l_t, f_l_r, avail_t, avail_r)
        return SeparationOutput(
            t_hat=self.decoder_t(sep.f_t),
            r_hat=self.decoder_r(sep.f_r),
            separation=sep,
        )

    def embed_image(self, image: torch.Tensor) -> torch.Tensor:
        """Global embedding of an image for correspondence losses: (B, C)."""
        f_glo, _ = self.loss_embedder(self.encoder(image))
        return f_glo

    def perceptual_features(self, image: torch.Tensor) -> list[torch.Tensor]:
        """Frozen mid-level backbone features (stages 2-4) for perceptual loss."""
        return self.perceptual_encoder.backbone_features(image)[1:4]

    def count_parameters(self, trainable_only: bool = True) -> int:
        return sum(
            p.numel() for p in self.parameters()
            if p.requires_grad or not trainable_only
        )


def image_to_tensor(img: np.ndarray) -> torch.Tensor:
    """(H, W, 3) float array in [0, 1] -> (1, 3, H, W) float32 tensor."""
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {img.shape}")
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1))[None]).float()


def tensor_to_image(t: torch.Tensor) -> np.ndarray:
    """(1, 3, H, W) or (3, H, W) tensor -> (H, W, 3) float64 array."""
    if t.ndim == 4:
        t = t.squeeze(0)
    return t.detach().cpu().double().numpy().transpose(1, 2, 0)


def pad_to_multiple(t: torch.Tensor, multiple: int = 32) -> tuple[torch.Tensor, tuple[int, int]]:
    """Pad (B, C, H, W) on the bottom/right so H, W divide ``multiple``.

    Returns the padded tensor and the original (H, W) for cropping back.
    Reflection padding is used when the image is large enough, replication
    otherwise.
    """
    h, w = t.shape[-2:]
    pad_h = (-h) % multiple
    pad_w = (-w) % multiple
    if pad_h == 0 and pad_w == 0:
        return t, (h, w)
    mode = "reflect" if pad_h < h and pad_w < w else "replicate"
    return F.pad(t, (0, pad_w, 0, pad_h), mode=mode), (h, w)


def separate_image(
    model: SeparationModel,
    vocab,
    mixture: np.ndarray,
    cap_t: Optional[str] = None,
    cap_r: Optional[str] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Run eval-mode separation on one numpy mixture image.

    Arbitrary sizes are handled by padding to a multiple of 32 and cropping
    the estimates back.  Returns (t_hat, r_hat) as (H, W, 3) arrays.
    """
    from .textenc import encode_batch

    model.eval()
    device = next(model.parameters()).device
    x, (h, w) = pad_to_multiple(image_to_tensor(mixture))
    x = x.to(device)
    ids_t, avail_t = encode_batch(vocab, [cap_t], model.config.max_caption_len)
    ids_r, avail_r = encode_batch(vocab, [cap_r], model.config.max_caption_len)
    ids_t, avail_t = ids_t.to(device), avail_t.to(device)
    ids_r, avail_r = ids_r.to(device), avail_r.to(device)
    with torch.no_grad():
        out = model(x, ids_t, avail_t, ids_r, avail_r)
    t_hat = tensor_to_image(out.t_hat)[:h, :w]
    r_hat = tensor_to_image(out.r_hat)[:h, :w]
    return t_hat, r_hat
