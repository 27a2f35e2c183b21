"""Synthetic mixture generation: linear blending of two captioned scenes.

A mixture is formed in inverse-gamma (linear intensity) space as the sum of an
attenuated transmission scene and an attenuated reflection scene.  Each layer
receives a caption only when it is bright enough relative to the mixture to be
visually recognizable, so generated samples carry zero, one, or two captions.

Images are exchanged as float arrays in [0, 1] (H, W, 3) and stored as 8-bit
sRGB PNGs plus a JSONL manifest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

GAMMA = 2.2
ALPHA_RANGE = (0.8, 1.0)
BETA_RANGE = (0.4, 1.0)
RECOGNIZABILITY_THRESHOLD = 0.3

# Linear-space ceiling kept below 1.0 so that 8-bit quantization of the layers
# can never push the mixture out of range; without it the layer additivity
# identity breaks on saturated pixels.
LINEAR_HEADROOM = 3.0 / 255.0

MANIFEST_NAME = "manifest.jsonl"
STATS_NAME = "stats.json"
MAX_SYNTHESIS_ATTEMPTS = 100


class UnrecognizableSampleError(RuntimeError):
    """Neither layer passed the recognizability test; caller should resample."""


@dataclass
class SourcePair:
    """A source scene image with at least one caption."""

    image: np.ndarray  # (H, W, 3) float in [0, 1]
    captions: tuple[str, ...]
    source_id: str = ""

    def __post_init__(self):
        if len(self.captions) == 0:
            raise ValueError("SourcePair requires at least one caption")
        if self.image.ndim != 3 or self.image.shape[-1] != 3:
            raise ValueError(f"expected (H, W, 3) image, got {self.image.shape}")
        self.image = np.clip(np.asarray(self.image, dtype=np.float64), 0.0, 1.0)


@dataclass
class MixtureSample:
    """A mixture image with ground-truth layers and optional per-layer captions.

    All three images live on the 8-bit grid (multiples of 1/255), so writing
    them to PNG and reading back is lossless.
    """

    m: np.ndarray
    t: np.ndarray
    r: np.ndarray
    cap_t: str | None
    cap_r: str | None
    alpha: float
    beta: float
    source_ids: tuple[str, str]
    clip_fraction: float = 0.0  # fraction of pixels attenuated by the headroom cap


@dataclass
class ManifestRecord:
    m: str
    t: str
    r: str
    cap_t: str | None
    cap_r: str | None
    alpha: float
    beta: float
    split: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "m": self.m,
                "t": self.t,
                "r": self.r,
                "cap_t": self.cap_t,
                "cap_r": self.cap_r,
                "alpha": self.alpha,
                "beta": self.beta,
                "split": self.split,
            }
        )

    @classmethod
    def from_json(cls, line: str) -> "ManifestRecord":
        d = json.loads(line)
        return cls(
            m=d["m"], t=d["t"], r=d["r"], cap_t=d["cap_t"], cap_r=d["cap_r"],
            alpha=d["alpha"], beta=d["beta"], split=d["split"],
        )


def inverse_gamma(img: np.ndarray) -> np.ndarray:
    """sRGB -> linear intensity, img ** GAMMA.  Values must lie in [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("inverse_gamma expects values in [0, 1]")
    return img ** GAMMA


def gamma_correct(img: np.ndarray) -> np.ndarray:
    """Linear intensity -> sRGB, img ** (1 / GAMMA)."""
    img = np.asarray(img, dtype=np.float64)
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("gamma_correct expects values in [0, 1]")
    return img ** (1.0 / GAMMA)


def quantize(img: np.ndarray) -> np.ndarray:
    """Snap a [0, 1] float image onto the 8-bit grid (round half to even)."""
    return np.round(np.asarray(img, dtype=np.float64) * 255.0) / 255.0


def hsv_value(img: np.ndarray) -> np.ndarray:
    """HSV brightness channel: per-pixel max over RGB."""
    return np.max(img, axis=-1)


def recognizable(
    layer_linear: np.ndarray,
    mixture_linear: np.ndarray,
    mu: float = RECOGNIZABILITY_THRESHOLD,
) -> bool:
    """True when the layer's mean brightness is at least ``mu`` times the mixture's.

    Both arrays are linear-space images; the threshold is inclusive.
    """
    if layer_linear.shape != mixture_linear.shape:
        raise ValueError("layer and mixture shapes differ")
    mixture_mean = float(np.mean(hsv_value(mixture_linear)))
    if mixture_mean <= 0.0:
        raise ValueError("mixture is all black; recognizability ratio undefined")
    ratio = float(np.mean(hsv_value(layer_linear))) / mixture_mean
    return ratio >= mu


def blend(
    t_source: np.ndarray,
    r_source: np.ndarray,
    alpha: float,
    beta: float,
    check_bounds: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Linear blend of two sRGB scenes: returns (mixture, transmission, reflection).

    The layers are attenuated copies of the sources in linear space and the
    mixture is their sum, clamped to [0, 1] before gamma correction.  Pass
    ``check_bounds=False`` to allow coefficients outside the sampling ranges
    (used for degenerate test blends).
    """
    if t_source.shape != r_source.shape:
        raise ValueError(f"source shapes differ: {t_source.shape} vs {r_source.shape}")
    if check_bounds:
        if not (ALPHA_RANGE[0] <= alpha <= ALPHA_RANGE[1]):
            raise ValueError(f"alpha={alpha} outside {ALPHA_RANGE}")
        if not (BETA_RANGE[0] <= beta <= BETA_RANGE[1]):
            raise ValueError(f"beta={beta} outside {BETA_RANGE}")
    t_lin = alpha * inverse_gamma(t_source)
    r_lin = beta * inverse_gamma(r_source)
    m_lin = np.clip(t_lin + r_lin, 0.0, 1.0)
    return gamma_correct(m_lin), gamma_correct(t_lin), gamma_correct(r_lin)


def synthesize_sample(
    pair_t: SourcePair,
    pair_r: SourcePair,
    rng: np.random.Generator,
    mu: float = RECOGNIZABILITY_THRESHOLD,
    blur_sigma_max: float = 0.0,
) -> MixtureSample:
    """Draw blending coefficients, blend, quantize, and assign captions.

    Layer images are quantized to the 8-bit grid first and the mixture is
    derived from the quantized layers, so the additivity identity
    ``ginv(M) = ginv(T) + ginv(R)`` survives the PNG round trip up to the
    mixture's own quantization error (< 2/255).  Caption availability is
    decided from the quantized images, i.e. from exactly what a reader of the
    stored files would recompute.

    Raises :class:`UnrecognizableSampleError` when neither layer passes the
    recognizability test (cannot happen for ``mu`` <= 0.5 since the two
    brightness ratios sum to at least 1).
    """
    if pair_t.image.shape != pair_r.image.shape:
        raise ValueError("source pair shapes differ")
    alpha = float(rng.uniform(*ALPHA_RANGE))
    beta = float(rng.uniform(*BETA_RANGE))

    t_lin = alpha * inverse_gamma(pair_t.image)
    r_lin = beta * inverse_gamma(pair_r.image)
    if blur_sigma_max > 0.0:
        sigma = float(rng.uniform(0.0, blur_sigma_max))
        if sigma > 0.0:
            r_lin = ndimage.gaussian_filter(r_lin, sigma=(sigma, sigma, 0.0))

    # Saturate against the display ceiling, attributing clipped energy to the
    # reflection layer so the sum stays an exact decomposition.
    ceiling = 1.0 - LINEAR_HEADROOM
    t_capped = np.minimum(t_lin, ceiling)
    r_capped = np.minimum(r_lin, ceiling - t_capped)
    clip_fraction = float(np.mean((t_capped < t_lin) | (r_capped < r_lin)))

    t = quantize(gamma_correct(t_capped))
    r = quantize(gamma_correct(r_capped))
    m_lin = inverse_gamma(t) + inverse_gamma(r)
    m = quantize(gamma_correct(m_lin))

    cap_t = str(rng.choice(pair_t.captions)) if recognizable(inverse_gamma(t), m_lin, mu) else None
    cap_r = str(rng.choice(pair_r.captions)) if recognizable(inverse_gamma(r), m_lin, mu) else None
    if cap_t is None and cap_r is None:
        raise UnrecognizableSampleError(
            f"neither layer recognizable at mu={mu} "
            f"(sources {pair_t.source_id!r}, {pair_r.source_id!r})"
        )

    return MixtureSample(
        m=m, t=t, r=r, cap_t=cap_t, cap_r=cap_r,
        alpha=alpha, beta=beta,
        source_ids=(pair_t.source_id, pair_r.source_id),
        clip_fraction=clip_fraction,
    )


def _sample_for_index(
    sources: Sequence[SourcePair],
    seed: int,
    index: int,
    mu: float,
    blur_sigma_max: float,
) -> MixtureSample:
    """Deterministic per-index synthesis with its own RNG stream.

    The stream depends only on (seed, index), so samples can be generated in
    any order or in parallel and the result matches serial execution.
    """
    rng = np.random.default_rng((seed, index))
    for _ in range(MAX_SYNTHESIS_ATTEMPTS):
        i = int(rng.integers(len(sources)))
        j = int(rng.integers(len(sources)))
        while j == i:
            j = int(rng.integers(len(sources)))
        try:
            return synthesize_sample(sources[i], sources[j], rng, mu=mu,
                                     blur_sigma_max=blur_sigma_max)
        except UnrecognizableSampleError:
            continue
    raise UnrecognizableSampleError(
        f"no recognizable sample after {MAX_SYNTHESIS_ATTEMPTS} attempts (index {index})"
    )


def _split_for_index(index: int, count: int, fractions: tuple[float, float, float]) -> str:
    train_end = int(round(fractions[0] * count))
    val_end = train_end + int(round(fractions[1] * count))
    if index < train_end:
        return "train"
    if index < val_end:
        return "val"
    return "test"


def build_dataset(
    sources: Sequence[SourcePair],
    count: int,
    seed: int,
    out_dir: str | Path,
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    mu: float = RECOGNIZABILITY_THRESHOLD,
    blur_sigma_max: float = 0.0,
) -> Path:
    """Generate ``count`` mixture triplets under ``out_dir`` and write the manifest.

    Returns the manifest path.  Re-running with the same arguments reproduces
    the manifest and the PNG files byte for byte.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    if count > 0 and len(sources) < 2:
        raise ValueError("need at least two source images")
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)

    records = []
    caption_t_present = 0
    caption_r_present = 0
    clip_fractions = []
    alphas = []
    betas = []
    for index in range(count):
        sample = _sample_for_index(sources, seed, index, mu, blur_sigma_max)
        rel = {}
        for key, img in (("m", sample.m), ("t", sample.t), ("r", sample.r)):
            rel[key] = f"images/{index:05d}_{key}.png"
            save_png(img, out_dir / rel[key])
        records.append(ManifestRecord(
            m=rel["m"], t=rel["t"], r=rel["r"],
            cap_t=sample.cap_t, cap_r=sample.cap_r,
            alpha=sample.alpha, beta=sample.beta,
            split=_split_for_index(index, count, split_fractions),
        ))
        caption_t_present += sample.cap_t is not None
        caption_r_present += sample.cap_r is not None
        clip_fractions.append(sample.clip_fraction)
        alphas.append(sample.alpha)
        betas.append(sample.beta)

    manifest_path = out_dir / MANIFEST_NAME
    with open(manifest_path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(record.to_json() + "\n")

    stats = {
        "count": count,
        "seed": seed,
        "cap_t_rate": caption_t_present / count if count else 0.0,
        "cap_r_rate": caption_r_present / count if count else 0.0,
        "dual_caption_rate": (
            sum(1 for rec in records if rec.cap_t and rec.cap_r) / count if count else 0.0
        ),
        "clip_fraction_mean": float(np.mean(clip_fractions)) if clip_fractions else 0.0,
        "alpha_mean": float(np.mean(alphas)) if alphas else 0.0,
        "beta_mean": float(np.mean(betas)) if betas else 0.0,
        "splits": {name: sum(1 for rec in records if rec.split == name)
                   for name in ("train", "val", "test")},
    }
    with open(out_dir / STATS_NAME, "w", encoding="utf-8") as f:
        json.dump(stats, f, indent=2)
    return manifest_path


def read_manifest(manifest_path: str | Path) -> list[ManifestRecord]:
    with open(manifest_path, encoding="utf-8") as f:
        return [ManifestRecord.from_json(line) for line in f if line.strip()]


def load_record(record: ManifestRecord, root: str | Path) -> MixtureSample:
    """Load a manifest record's images; missing files raise FileNotFoundError."""
    root = Path(root)
    return MixtureSample(
        m=load_png(root / record.m),
        t=load_png(root / record.t),
        r=load_png(root / record.r),
        cap_t=record.cap_t,
        cap_r=record.cap_r,
        alpha=record.alpha,
        beta=record.beta,
        source_ids=("", ""),
    )


def save_png(img: np.ndarray, path: str | Path) -> None:
    """Write a [0, 1] float image as 8-bit RGB PNG."""
    arr = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def load_png(path: str | Path) -> np.ndarray:
    """Read an 8-bit RGB PNG as a [0, 1] float array."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def load_source_pairs(sources_dir: str | Path) -> list[SourcePair]:
    """Load scene images plus captions from a directory.

    Each ``<stem>.png`` / ``<stem>.jpg`` must have a sibling ``<stem>.txt``
    with one caption per line.
    """
    sources_dir = Path(sources_dir)
    if not sources_dir.is_dir():
        raise FileNotFoundError(f"sources directory not found: {sources_dir}")
    pairs = []
    for path in sorted(sources_dir.iterdir()):
        if path.suffix.lower() not in (".png", ".jpg", ".jpeg"):
            continue
        caption_path = path.with_suffix(".txt")
        if not caption_path.exists():
            raise FileNotFoundError(f"missing caption file for {path.name}: {caption_path.name}")
        captions = tuple(
            line.strip() for line in caption_path.read_text(encoding="utf-8").splitlines()
            if line.strip()
        )
        pairs.append(SourcePair(image=load_png(path), captions=captions, source_id=path.stem))
    if not pairs:
        raise FileNotFoundError(f"no source images in {sources_dir}")
    return pairs


def with_dropped_caption(sample: MixtureSample, which: str) -> MixtureSample:
    """Copy of the sample with one caption set to null ('t' or 'r')."""
    if which == "t":
        return replace(sample, cap_t=None)
    if which == "r":
        return replace(sample, cap_r=None)
    raise ValueError(f"which must be 't' or 'r', got {which!r}")
