"""Gated cross-modal interaction: separating layer features under language guidance.

Two cascades of interaction groups split a fused mixture feature into a
transmission feature and a reflection feature.  Each group aggregates its
input into a global visual vector (AGAM), gates between that vector and the
layer's language embedding, rearranges channels by cross-attention against
the gated query (AGIM), and refines with LeFF blocks.  When a description is
missing the gate substitutes the visual global, so the same weights run as
channel-wise self-attention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .imgenc import LeFF

NUM_GROUPS_PER_LAYER = 4
NUM_REFINEMENTS = 2


class ChannelLayerNorm(nn.Module):
    """LayerNorm over the channel dimension of a (B, C, H, W) map."""

    def __init__(self, channels: int):
        super().__init__()
        self.norm = nn.LayerNorm(channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.norm(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)


class VectorProjection(nn.Module):
    """LayerNorm followed by a linear map, applied to the trailing dim."""

    def __init__(self, channels: int):
        super().__init__()
        self.norm = nn.LayerNorm(channels)
        self.linear = nn.Linear(channels, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.linear(self.norm(x))


class AGAM(nn.Module):
    """Adaptive global aggregation: pool a feature map into one C-vector.

    The average-pooled feature queries the hw+1 tokens formed by the map and
    its average; attention uses a learnable positive temperature stored in
    log-space.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.query = VectorProjection(channels)
        self.key = VectorProjection(channels)
        self.value = VectorProjection(channels)
        self.log_tau = nn.Parameter(torch.tensor(math.log(math.sqrt(channels))))

    def forward(self, f_in: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Aggregate (B, C, H, W) into (B, C); also returns the attention row.

        Returns:
            f_glo: (B, C) global visual feature.
            attn: (B, 1, hw+1) attention weights, rows summing to 1.
        """
        b, c = f_in.shape[:2]
        tokens = f_in.flatten(2).transpose(1, 2)  # (B, hw, C)
        f_avg = tokens.mean(dim=1, keepdim=True)  # (B, 1, C)
        tokens = torch.cat([tokens, f_avg], dim=1)  # (B, hw+1, C)
        q = self.query(f_avg)  # (B, 1, C)
        k = self.key(tokens)  # (B, hw+1, C)
        v = self.value(tokens)  # (B, hw+1, C)
        attn = torch.softmax(q @ k.transpose(1, 2) / self.log_tau.exp(), dim=-1)
        f_glo = (attn @ v).squeeze(1)  # (B, C)
        return f_glo, attn


def language_gate(
    f_l: Optional[torch.Tensor],
    available: Optional[torch.Tensor],
    f_glo: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Select the language feature where available, else the visual global.

    The fallback rows carry ``f_glo`` values unchanged, so a missing
    description reproduces the pure self-attention path exactly.

    Args:
        f_l: (B, C) language embeddings, or None when no captions exist.
        available: (B,) bool mask; None means all rows of ``f_l`` are valid.
        f_glo: (B, C) visual global features.

    Returns:
        query: (B, C) gated query source.
        decisions: (B,) bool, True where language was used.
    """
    if f_l is None:
        decisions = torch.zeros(f_glo.shape[0], dtype=torch.bool, device=f_glo.device)
        return f_glo, decisions
    if available is None:
        available = torch.ones(f_glo.shape[0], dtype=torch.bool, device=f_glo.device)
    query = torch.where(available.unsqueeze(-1), f_l, f_glo)
    return query, available


class AgimOutput(NamedTuple):
    feature: torch.Tensor  # (B, C, H, W) residual output
    s: torch.Tensor  # (B,) guidance scale
    interaction: torch.Tensor  # (B, C, H, W) pre-scale interaction branch
    attention: Optional[torch.Tensor]  # (B, C, C) channel attention, rows sum to 1


class AGIM(nn.Module):
    """Adaptive global interaction: channel-wise cross-attention with residual.

    The gated query vector and the visual global are projected to C-vectors
    whose outer product (tempered by a learnable eta) gives a C x C channel
    attention; applying it to the projected input channels yields the
    interaction map, added back scaled by the cosine between query and key.

    The value projection starts at zero, so a freshly initialized module is
    an exact identity.

    Args:
        channels: feature width C.
        s_mode: "cos" scales by cosine similarity (default); "one_minus_cos"
            uses 1 - cosine instead.
    """

    def __init__(self, channels: int, s_mode: str = "cos"):
        super().__init__()
        if s_mode not in ("cos", "one_minus_cos"):
            raise ValueError(f"unknown s_mode {s_mode!r}")
        self.query = VectorProjection(channels)
        self.key = VectorProjection(channels)
        self.value = VectorProjection(channels)
        nn.init.zeros_(self.value.linear.weight)
        nn.init.zeros_(self.value.linear.bias)
        self.log_eta = nn.Parameter(torch.tensor(math.log(math.sqrt(channels))))
        self.s_mode = s_mode

    def forward(
        self,
        f_in: torch.Tensor,
        query_vec: torch.Tensor,
        f_glo: torch.Tensor,
    ) -> AgimOutput:
        b, c, h, w = f_in.shape
        q = self.query(query_vec)  # (B, C)
        k = self.key(f_glo)  # (B, C)
        tokens = f_in.flatten(2).transpose(1, 2)  # (B, hw, C)
        v = self.value(tokens).transpose(1, 2)  # (B, C, hw)
        logits = q.unsqueeze(2) * k.unsqueeze(1) / self.log_eta.exp()  # (B, C, C)
        attn = torch.softmax(logits, dim=-1)
        interaction = (attn @ v).reshape(b, c, h, w)
        s = F.cosine_similarity(q, k, dim=-1).clamp(-1.0, 1.0)  # (B,)
        if self.s_mode == "one_minus_cos":
            s = 1.0 - s
        feature = f_in + s.view(b, 1, 1, 1) * interaction
        return AgimOutput(feature, s, interaction, attn)


class ConcatFusion(nn.Module):
    """Ablation substitute for AGIM: tile the gated query and fuse by 1x1 conv.

    Keeps the residual form and zero-init identity of AGIM but drops the
    channel attention; the guidance scale s is fixed at 1.
    """

    def __init__(self, channels: int, s_mode: str = "cos"):
        super().__init__()
        self.fuse = nn.Conv2d(2 * channels, channels, kernel_size=1)
        nn.init.zeros_(self.fuse.weight)
        nn.init.zeros_(self.fuse.bias)

    def forward(
        self,
        f_in: torch.Tensor,
        query_vec: torch.Tensor,
        f_glo: torch.Tensor,
    ) -> AgimOutput:
        b, c, h, w = f_in.shape
        tiled = query_vec.view(b, c, 1, 1).expand(b, c, h, w)
        interaction = self.fuse(torch.cat([f_in, tiled], dim=1))
        s = f_in.new_ones(b)
        return AgimOutput(f_in + interaction, s, interaction, None)


class RefinementBlock(nn.Module):
    """Pre-norm LeFF refinement: x + LeFF(LN(x)).

    The LeFF projection starts at zero so the block (and with it the whole
    interaction group) is an exact identity at initialization; cascading 2N
    groups then leaves early optimization as shallow as the encoder/decoder
    pair, and the refinements fade in as their weights grow.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.norm = ChannelLayerNorm(channels)
        self.leff = LeFF(channels)
        nn.init.zeros_(self.leff.project.weight)
        nn.init.zeros_(self.leff.project.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.leff(self.norm(x))


class GroupRecord(NamedTuple):
    f_glo: torch.Tensor  # (B, C) the group's AGAM output
    gate_decision: torch.Tensor  # (B,) bool
    s: torch.Tensor  # (B,)


class InteractionGroup(nn.Module):
    """One interaction group: AGAM -> language gate -> AGIM -> refinements."""

    def __init__(
        self,
        channels: int,
        num_refinements: int = NUM_REFINEMENTS,
        s_mode: str = "cos",
        use_channel_attention: bool = True,
    ):
        super().__init__()
        self.agam = AGAM(channels)
        if use_channel_attention:
            self.agim = AGIM(channels, s_mode=s_mode)
        else:
            self.agim = ConcatFusion(channels, s_mode=s_mode)
        self.refinements = nn.ModuleList(
            RefinementBlock(channels) for _ in range(num_refinements)
        )

    def forward(
        self,
        f_in: torch.Tensor,
        f_l: Optional[torch.Tensor],
        available: Optional[torch.Tensor],
    ) -> tuple[torch.Tensor, GroupRecord]:
        f_glo, _ = self.agam(f_in)
        query, decisions = language_gate(f_l, available, f_glo)
        out = self.agim(f_in, query, f_glo)
        x = out.feature
        for block in self.refinements:
            x = block(x)
        return x, GroupRecord(f_glo, decisions, out.s)


@dataclass
class SeparationResult:
    """Layer features plus per-group introspection signals."""

    f_t: torch.Tensor  # (B, C, h, w) transmission feature
    f_r: torch.Tensor  # (B, C, h, w) reflection feature
    globals_t: list[torch.Tensor]  # per-group (B, C), first cascade
    globals_r: list[torch.Tensor]  # per-group (B, C), second cascade
    gate_decisions: torch.Tensor  # (B, 2N) bool
    s_values: torch.Tensor  # (B, 2N)

    def introspection(self) -> dict:
        """JSON-serializable gate decisions and guidance scales."""
        return {
            "gate_decisions": self.gate_decisions.detach().cpu().tolist(),
            "s_values": self.s_values.detach().cpu().tolist(),
        }


class InteractionStage(nn.Module):
    """Full separation stage: 2N groups splitting F_M into layer features.

    The first N groups transform the mixture feature under the transmission
    description; the second N start from a 1x1-conv fusion of the mixture
    feature with the transmission feature and run under the reflection
    description.  Group parameters are not shared.

    Args:
        channels: feature width C.
        num_groups: groups per layer (N).
        num_refinements: LeFF refinement blocks per group (K).
        s_mode: AGIM guidance-scale mode.
        use_channel_attention: False swaps AGIMs for concat fusion blocks.
    """

    def __init__(
        self,
        channels: int,
        num_groups: int = NUM_GROUPS_PER_LAYER,
        num_refinements: int = NUM_REFINEMENTS,
        s_mode: str = "cos",
        use_channel_attention: bool = True,
    ):
        super().__init__()

        def make_groups():
            return nn.ModuleList(
                InteractionGroup(
                    channels,
                    num_refinements=num_refinements,
                    s_mode=s_mode,
                    use_channel_attention=use_channel_attention,
                )
                for _ in range(num_groups)
            )

        self.groups_t = make_groups()
        self.groups_r = make_groups()
        self.bridge = nn.Conv2d(2 * channels, channels, kernel_size=1)
        self.num_groups = num_groups

    def forward(
        self,
        f_m: torch.Tensor,
        f_l_t: Optional[torch.Tensor] = None,
        f_l_r: Optional[torch.Tensor] = None,
        avail_t: Optional[torch.Tensor] = None,
        avail_r: Optional[torch.Tensor] = None,
    ) -> SeparationResult:
        """Separate a fused mixture feature into layer features.

        Args:
            f_m: (B, C, h, w) fused mixture feature.
            f_l_t, f_l_r: (B, C) language embeddings per layer, or None.
            avail_t, avail_r: (B,) bool masks for per-sample availability.
        """
        records: list[GroupRecord] = []
        globals_t = []
        x = f_m
        for group in self.groups_t:
            x, record = group(x, f_l_t, avail_t)
            records.append(record)
            globals_t.append(record.f_glo)
        f_t = x

        x = self.bridge(torch.cat([f_m, f_t], dim=1))
        globals_r = []
        for group in self.groups_r:
            x, record = group(x, f_l_r, avail_r)
            records.append(record)
            globals_r.append(record.f_glo)
        f_r = x

        return SeparationResult(
            f_t=f_t,
            f_r=f_r,
            globals_t=globals_t,
            globals_r=globals_r,
            gate_decisions=torch.stack([r.gate_decision for r in records], dim=1),
            s_values=torch.stack([r.s for r in records], dim=1),
        )
