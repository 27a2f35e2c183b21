"""Training loop: batching, description dropout, schedule, checkpoints.

Determinism policy: every stochastic choice (shuffle order, crop, flip,
caption dropout) draws from a numpy stream keyed by (seed, role, epoch,
index), and the model contains no dropout layers, so a fixed seed reproduces
the loss curve exactly and resuming from a checkpoint is bit-exact.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .losses import LossReport, LossWeights, image_layer_loss, batch_correspondence, total_loss
from .model import ModelConfig, SeparationModel
from .synthdata import ManifestRecord, MixtureSample, load_record, read_manifest, with_dropped_caption
from .textenc import Vocab, encode_batch

CHECKPOINT_FORMAT_VERSION = 1
ABLATIONS = ("none", "no_language", "no_agim", "img_loss_only")

# Stream roles keeping the per-purpose RNG keys disjoint.
_ROLE_SHUFFLE = 1
_ROLE_SAMPLE = 2


@dataclass
class TrainConfig:
    """Optimization settings; full-scale defaults, desk values via desk_config()."""

    epochs: int = 40
    batch_size: int = 16
    lr_initial: float = 1e-4
    lr_drop_epoch: int = 30  # lr drops at the START of this epoch (0-indexed)
    lr_final: float = 1e-5
    drop_ratio: float = 0.3
    seed: int = 0
    ablation: str = "none"
    crop_size: int = 96
    hflip: bool = True
    channels: int = 256
    num_groups: int = 4
    num_refinements: int = 2
    s_mode: str = "cos"
    vocab_min_freq: int = 2
    log_every: int = 10

    def __post_init__(self):
        if not 0.0 <= self.drop_ratio <= 1.0:
            raise ValueError(f"drop_ratio must be in [0, 1], got {self.drop_ratio}")
        if self.lr_final > self.lr_initial:
            raise ValueError("lr_final must not exceed lr_initial")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")


def desk_config(**overrides) -> TrainConfig:
    """Desk-scale defaults: 10 epochs, batch 8, 96x96 crops."""
    settings = {"epochs": 10, "batch_size": 8}
    settings.update(overrides)
    return TrainConfig(**settings)


def config_hash(config: TrainConfig) -> str:
    payload = json.dumps(asdict(config), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


def load_train_config(path: str | Path) -> TrainConfig:
    """Parse a key=value config file; unknown keys are rejected."""
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in fields:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        ftype = fields[key].type
        if ftype == "int":
            values[key] = int(raw)
        elif ftype == "float":
            values[key] = float(raw)
        elif ftype == "bool":
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(f"{path}:{lineno}: bad bool {raw!r}")
            values[key] = raw.lower() in ("true", "1")
        else:
            values[key] = raw
    return TrainConfig(**values)


def save_train_config(config: TrainConfig, path: str | Path) -> None:
    lines = [f"{key}={value}" for key, value in asdict(config).items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def lr_for_epoch(config: TrainConfig, epoch: int) -> float:
    return config.lr_initial if epoch < config.lr_drop_epoch else config.lr_final


def model_config_for(config: TrainConfig) -> ModelConfig:
    return ModelConfig(
        channels=config.channels,
        num_groups=config.num_groups,
        num_refinements=config.num_refinements,
        s_mode=config.s_mode,
        use_channel_attention=config.ablation != "no_agim",
        use_language=config.ablation != "no_language",
    )


def loss_weights_for(config: TrainConfig) -> LossWeights:
    if config.ablation == "img_loss_only":
        return LossWeights(gamma_ctr=0.0, gamma_lcr=0.0)
    return LossWeights()


def drop_descriptions(
    sample: MixtureSample, rng: np.random.Generator, ratio: float
) -> MixtureSample:
    """Randomly null one caption of a dual-caption sample.

    Samples with a single caption pass through unchanged; when the drop
    fires, the side is chosen uniformly.
    """
    if sample.cap_t is None or sample.cap_r is None:
        return sample
    if rng.random() >= ratio:
        return sample
    side = "t" if rng.random() < 0.5 else "r"
    return with_dropped_caption(sample, side)


@dataclass
class Batch:
    """Collated training batch; caption masks flag per-sample availability."""

    m: torch.Tensor  # (B, 3, H, W)
    t: torch.Tensor
    r: torch.Tensor
    ids_t: torch.Tensor  # (B, L)
    avail_t: torch.Tensor  # (B,) bool
    ids_r: torch.Tensor
    avail_r: torch.Tensor


def _augment(
    images: tuple[np.ndarray, ...],
    rng: np.random.Generator,
    crop_size: int,
    hflip: bool,
) -> tuple[np.ndarray, ...]:
    """Shared random crop and horizontal flip across the m/t/r triplet."""
    h, w = images[0].shape[:2]
    if crop_size and (h > crop_size or w > crop_size):
        if h < crop_size or w < crop_size:
            raise ValueError(f"image {h}x{w} smaller than crop {crop_size}")
        top = int(rng.integers(h - crop_size + 1))
        left = int(rng.integers(w - crop_size + 1))
        images = tuple(
            img[top : top + crop_size, left : left + crop_size] for img in images
        )
    if hflip and rng.random() < 0.5:
        images = tuple(img[:, ::-1] for img in images)
    return images


def collate(
    samples: Sequence[MixtureSample],
    vocab: Vocab,
    max_caption_len: int,
) -> Batch:
    def stack(arrays: list[np.ndarray]) -> torch.Tensor:
        block = np.stack([np.ascontiguousarray(a.transpose(2, 0, 1)) for a in arrays])
        return torch.from_numpy(block).float()

    ids_t, avail_t = encode_batch(vocab, [s.cap_t for s in samples], max_caption_len)
    ids_r, avail_r = encode_batch(vocab, [s.cap_r for s in samples], max_caption_len)
    return Batch(
        m=stack([s.m for s in samples]),
        t=stack([s.t for s in samples]),
        r=stack([s.r for s in samples]),
        ids_t=ids_t, avail_t=avail_t, ids_r=ids_r, avail_r=avail_r,
    )


class TrainData:
    """Manifest records with preloaded images and deterministic epoch batches."""

    def __init__(self, manifest_path: str | Path, split: str = "train"):
        manifest_path = Path(manifest_path)
        self.root = manifest_path.parent
        records = [r for r in read_manifest(manifest_path) if r.split == split]
        if not records:
            raise ValueError(f"no {split!r} records in {manifest_path}")
        self.samples = [load_record(rec, self.root) for rec in records]

    def __len__(self) -> int:
        return len(self.samples)

    def captions(self) -> list[str]:
        caps = []
        for s in self.samples:
            caps.extend(c for c in (s.cap_t, s.cap_r) if c is not None)
        return caps

    def epoch_batches(
        self, config: TrainConfig, epoch: int, vocab: Vocab, max_caption_len: int
    ):
        """Yield collated batches for one epoch (full batches only)."""
        order = np.random.default_rng(
            (config.seed, _ROLE_SHUFFLE, epoch)
        ).permutation(len(self.samples))
        n_batches = len(self.samples) // config.batch_size
        for b in range(n_batches):
            chunk = order[b * config.batch_size : (b + 1) * config.batch_size]
            prepared = []
            for idx in chunk:
                sample = self.samples[idx]
                rng = np.random.default_rng((config.seed, _ROLE_SAMPLE, epoch, int(idx)))
                m, t, r = _augment(
                    (sample.m, sample.t, sample.r), rng, config.crop_size, config.hflip
                )
                sample = dataclasses.replace(sample, m=m, t=t, r=r)
                prepared.append(drop_descriptions(sample, rng, config.drop_ratio))
            yield collate(prepared, vocab, max_caption_len)


def train_step(
    batch: Batch,
    model: SeparationModel,
    weights: LossWeights,
    optimizer: torch.optim.Optimizer,
    max_grad_norm: Optional[float] = 1.0,
) -> LossReport:
    """One forward/backward/update pass; returns the detached loss breakdown.

    Gradients are clipped to ``max_grad_norm`` (None disables); the attention
    temperatures make early steps prone to spikes otherwise.
    """
    model.train()
    out = model(batch.m, batch.ids_t, batch.avail_t, batch.ids_r, batch.avail_r)
    _, parts = image_layer_loss(
        out.t_hat, out.r_hat, batch.t, batch.r, batch.m,
        weights, perceptual_fn=model.perceptual_features,
    )
    use_correspondence = (
        (weights.gamma_ctr > 0 or weights.gamma_lcr > 0)
        and model.config.use_language
        and bool(batch.avail_t.any() or batch.avail_r.any())
    )
    if use_correspondence:
        f_l_t = model.text_encoder(batch.ids_t)
        f_l_r = model.text_encoder(batch.ids_r)
        emb_est_t = model.embed_image(out.t_hat)
        emb_est_r = model.embed_image(out.r_hat)
        with torch.no_grad():
            emb_gt_t = model.embed_image(batch.t)
            emb_gt_r = model.embed_image(batch.r)
        ctr, lcr = batch_correspondence(
            f_l_t, batch.avail_t, f_l_r, batch.avail_r,
            emb_est_t, emb_est_r, emb_gt_t, emb_gt_r,
        )
        parts["ctr"] = ctr
        parts["lcr"] = lcr
    total, report = total_loss(parts, weights)
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    if max_grad_norm is not None:
        torch.nn.utils.clip_grad_norm_(model.parameters(), max_grad_norm)
    optimizer.step()
    return report


def save_checkpoint(
    path: str | Path,
    model: SeparationModel,
    optimizer: torch.optim.Optimizer,
    epoch: int,
    config: TrainConfig,
    vocab: Vocab,
) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict(),
        "epoch": epoch,  # number of completed epochs
        "train_config": asdict(config),
        "model_config": model.config.to_dict(),
        "config_hash": config_hash(config),
        "vocab": vocab.itos,
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(
            f"checkpoint format {version} unsupported (expected {CHECKPOINT_FORMAT_VERSION})"
        )
    return payload


def restore_model(payload: dict) -> tuple[SeparationModel, Vocab, TrainConfig]:
    """Rebuild the model, vocabulary, and config from a checkpoint payload."""
    vocab = Vocab(payload["vocab"][3:])
    model = SeparationModel(len(vocab), ModelConfig.from_dict(payload["model_config"]))
    model.load_state_dict(payload["model_state"])
    model.eval()
    config = TrainConfig(**payload["train_config"])
    return model, vocab, config


def fit(
    config: TrainConfig,
    manifest_path: str | Path,
    out_dir: str | Path,
    resume: Optional[str | Path] = None,
    stop_after: Optional[int] = None,
) -> Path:
    """Run the full training loop; returns the final checkpoint path.

    Writes per-step JSONL logs, per-epoch checkpoints, the vocabulary, the
    config, and a final held-out evaluation report under ``out_dir``.
    ``stop_after`` interrupts training once that many epochs have completed
    (counting from epoch 0), returning the latest checkpoint instead of
    running to ``config.epochs``; resuming from it continues seamlessly.
    """
    from . import evalkit

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = TrainData(manifest_path, split="train")
    weights = loss_weights_for(config)

    if resume is not None:
        payload = load_checkpoint(resume)
        if payload["config_hash"] != config_hash(config):
            raise ValueError("resume config does not match checkpoint config")
        model, vocab, _ = restore_model(payload)
        optimizer = torch.optim.Adam(
            [p for p in model.parameters() if p.requires_grad],
            lr=lr_for_epoch(config, payload["epoch"]),
            betas=(0.9, 0.999), eps=1e-8,
        )
        optimizer.load_state_dict(payload["optimizer_state"])
        start_epoch = payload["epoch"]
    else:
        vocab = Vocab.build(data.captions(), min_freq=config.vocab_min_freq)
        torch.manual_seed(config.seed)
        model = SeparationModel(len(vocab), model_config_for(config))
        optimizer = torch.optim.Adam(
            [p for p in model.parameters() if p.requires_grad],
            lr=config.lr_initial, betas=(0.9, 0.999), eps=1e-8,
        )
        start_epoch = 0

    vocab.save(out_dir / "vocab.txt")
    save_train_config(config, out_dir / "train.cfg")
    log_path = out_dir / "train_log.jsonl"
    n_params = model.count_parameters()

    with open(log_path, "a", encoding="utf-8") as log:
        log.write(json.dumps({
            "event": "start", "start_epoch": start_epoch,
            "trainable_parameters": n_params, "config_hash": config_hash(config),
            "train_samples": len(data), "ablation": config.ablation,
        }) + "\n")
        stop_epoch = config.epochs if stop_after is None else min(stop_after, config.epochs)
        for epoch in range(start_epoch, stop_epoch):
            lr = lr_for_epoch(config, epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr
            for step, batch in enumerate(
                data.epoch_batches(config, epoch, vocab, model.config.max_caption_len)
            ):
                report = train_step(batch, model, weights, optimizer)
                if step % config.log_every == 0:
                    log.write(json.dumps({
                        "epoch": epoch, "step": step, "lr": lr, **report.to_dict()
                    }) + "\n")
            save_checkpoint(
                out_dir / "ckpt_latest.pt", model, optimizer, epoch + 1, config, vocab
            )
            log.flush()

    if stop_epoch < config.epochs:
        return out_dir / "ckpt_latest.pt"

    final_path = out_dir / "ckpt_final.pt"
    save_checkpoint(final_path, model, optimizer, config.epochs, config, vocab)

    records = read_manifest(manifest_path)
    rows = evalkit.evaluate(
        evalkit.model_separator(model, vocab), records, Path(manifest_path).parent,
        which="both", split="test",
    )
    (out_dir / "final_eval.json").write_text(
        json.dumps([row.to_dict() for row in rows], indent=2), encoding="utf-8"
    )
    return final_path
