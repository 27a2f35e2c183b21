"""Caption tokenization and the transformer text encoder.

Captions are lowercased and split on alphanumeric runs, mapped through a
corpus-built vocabulary, and encoded by a small transformer.  The pooled
embedding (taken at the BOS position) is projected to the image feature
width so it can stand in as the query of the cross-modal attention.
"""

from __future__ import annotations

import re
from pathlib import Path
from typing import Iterable, Sequence

import torch
import torch.nn as nn

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
BOS_TOKEN = "<bos>"
PAD_ID = 0
UNK_ID = 1
BOS_ID = 2

MAX_CAPTION_LEN = 32  # token positions including BOS

_WORD_RE = re.compile(r"[a-z0-9]+")


def tokenize(caption: str) -> list[str]:
    """Lowercase and split into alphanumeric word tokens.

    Null descriptions are handled upstream (an absent caption is never
    tokenized), so an empty string here is a caller bug.
    """
    if not caption:
        raise ValueError("cannot tokenize an empty caption")
    return _WORD_RE.findall(caption.lower())


class Vocab:
    """Token <-> id mapping with fixed special tokens at ids 0..2."""

    def __init__(self, tokens: Sequence[str]):
        specials = (PAD_TOKEN, UNK_TOKEN, BOS_TOKEN)
        for tok in specials:
            if tok in tokens:
                raise ValueError(f"special token {tok!r} cannot appear in vocab body")
        self.itos = list(specials) + list(tokens)
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def encode(self, caption: str, max_len: int = MAX_CAPTION_LEN) -> list[int]:
        """BOS + token ids, truncated/padded to exactly ``max_len``."""
        ids = [BOS_ID]
        for tok in tokenize(caption):
            ids.append(self.stoi.get(tok, UNK_ID))
        ids = ids[:max_len]
        ids.extend([PAD_ID] * (max_len - len(ids)))
        return ids

    @classmethod
    def build(cls, captions: Iterable[str], min_freq: int = 2) -> "Vocab":
        """Corpus vocabulary: tokens seen at least ``min_freq`` times, sorted."""
        counts: dict[str, int] = {}
        for caption in captions:
            for tok in tokenize(caption):
                counts[tok] = counts.get(tok, 0) + 1
        kept = sorted(tok for tok, n in counts.items() if n >= min_freq)
        return cls(kept)

    def save(self, path: str | Path) -> None:
        """One token per line, in id order (specials included)."""
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        tokens = [line for line in lines if line]
        if tokens[:3] != [PAD_TOKEN, UNK_TOKEN, BOS_TOKEN]:
            raise ValueError(f"vocab file {path} does not start with the special tokens")
        return cls(tokens[3:])


def encode_batch(
    vocab: Vocab,
    captions: Sequence[str | None],
    max_len: int = MAX_CAPTION_LEN,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Batch of caption id tensors plus an availability mask.

    Missing captions (None) are encoded as all-PAD rows and flagged False in
    the mask; the encoder output for those rows is meaningless and must be
    gated out downstream.

    Returns:
        ids: (B, L) int64
        available: (B,) bool
    """
    ids = torch.zeros(len(captions), max_len, dtype=torch.int64)
    available = torch.zeros(len(captions), dtype=torch.bool)
    for i, caption in enumerate(captions):
        if caption is None:
            continue
        ids[i] = torch.tensor(vocab.encode(caption, max_len), dtype=torch.int64)
        available[i] = True
    return ids, available


class TextEncoder(nn.Module):
    """Transformer encoder over caption tokens, pooled at the BOS position.

    Args:
        vocab_size: vocabulary size including special tokens.
        out_dim: width of the projected embedding (image feature channels).
        model_dim: transformer width.
        num_layers: encoder depth.
        num_heads: attention heads per layer.
        max_len: maximum caption length in tokens.
    """

    def __init__(
        self,
        vocab_size: int,
        out_dim: int,
        model_dim: int = 128,
        num_layers: int = 2,
        num_heads: int = 4,
        max_len: int = MAX_CAPTION_LEN,
    ):
        super().__init__()
        self.token_embed = nn.Embedding(vocab_size, model_dim, padding_idx=PAD_ID)
        self.pos_embed = nn.Parameter(torch.zeros(1, max_len, model_dim))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        layer = nn.TransformerEncoderLayer(
            d_model=model_dim,
            nhead=num_heads,
            dim_feedforward=4 * model_dim,
            dropout=0.0,
            batch_first=True,
            norm_first=True,
        )
        self.encoder = nn.TransformerEncoder(
            layer, num_layers=num_layers, enable_nested_tensor=False
        )
        self.norm = nn.LayerNorm(model_dim)
        self.proj = nn.Linear(model_dim, out_dim)
        self.max_len = max_len

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        """Encode token ids (B, L) into caption embeddings (B, out_dim)."""
        if ids.shape[1] > self.max_len:
            raise ValueError(f"caption length {ids.shape[1]} exceeds max {self.max_len}")
        x = self.token_embed(ids) + self.pos_embed[:, : ids.shape[1]]  # (B, L, D)
        pad_mask = ids == PAD_ID  # (B, L) True where padded
        # All-pad rows (missing captions) would make attention degenerate;
        # unmask their BOS slot so the encoder stays finite everywhere.
        pad_mask = pad_mask.clone()
        pad_mask[:, 0] = False
        x = self.encoder(x, src_key_padding_mask=pad_mask)
        pooled = self.norm(x[:, 0])  # (B, D) BOS position
        return self.proj(pooled)  # (B, out_dim)
