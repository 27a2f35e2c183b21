"""Evaluation: PSNR/SSIM metrics, dataset sweeps, and the ablation grid.

Metrics operate on numpy images in [0, 1].  The SSIM here mirrors the
differentiable torch version used in training: 11x11 Gaussian window,
sigma 1.5, standard constants, valid windows only, channel-averaged.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import signal

from .synthdata import ManifestRecord, load_png

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

Separator = Callable[[np.ndarray, Optional[str], Optional[str]], tuple[np.ndarray, np.ndarray]]


@dataclass
class MetricRow:
    dataset: str
    count: int
    psnr_mean: float
    ssim_mean: float

    def to_dict(self) -> dict:
        return asdict(self)


def psnr(x: np.ndarray, y: np.ndarray, peak: float = 1.0, cap: float = PSNR_CAP_DB) -> float:
    """10 log10(peak^2 / MSE) in dB; identical images return the cap sentinel."""
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    mse = float(np.mean((np.asarray(x, dtype=np.float64) - y) ** 2))
    if mse == 0.0:
        return cap
    return min(10.0 * math.log10(peak * peak / mse), cap)


def _window2d(size: int, sigma: float) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(
    x: np.ndarray,
    y: np.ndarray,
    window_size: int = SSIM_WINDOW,
    sigma: float = SSIM_SIGMA,
) -> float:
    """Mean SSIM over valid Gaussian windows, averaged across channels."""
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim == 2:
        x = x[..., None]
        y = y[..., None]
    if min(x.shape[0], x.shape[1]) < window_size:
        raise ValueError(f"image smaller than the {window_size}x{window_size} window")
    w = _window2d(window_size, sigma)
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2

    def filt(img: np.ndarray) -> np.ndarray:
        return signal.convolve(img, w, mode="valid")

    values = []
    for ch in range(x.shape[-1]):
        xc, yc = x[..., ch], y[..., ch]
        mu_x = filt(xc)
        mu_y = filt(yc)
        var_x = filt(xc * xc) - mu_x ** 2
        var_y = filt(yc * yc) - mu_y ** 2
        cov = filt(xc * yc) - mu_x * mu_y
        s = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
            (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
        )
        values.append(s.mean())
    return float(np.mean(values))


def model_separator(model, vocab) -> Separator:
    """Wrap a trained model as a (mixture, cap_t, cap_r) -> (t_hat, r_hat) callable."""
    from .model import separate_image

    def run(m: np.ndarray, cap_t: Optional[str], cap_r: Optional[str]):
        return separate_image(model, vocab, m, cap_t, cap_r)

    return run


def evaluate_samples(
    separator: Separator,
    records: Sequence[ManifestRecord],
    root: str | Path,
    which: str = "both",
    split: Optional[str] = None,
    max_samples: Optional[int] = None,
) -> list[dict]:
    """Per-sample metrics for the requested layers.

    Captions are used exactly as stored in the manifest; records whose image
    files are missing are skipped with a warning.

    Args:
        separator: mixture + captions -> layer estimates.
        which: "t", "r", or "both".
        split: restrict to one manifest split, or None for all records.
    """
    if which not in ("t", "r", "both"):
        raise ValueError(f"which must be 't', 'r', or 'both', got {which!r}")
    layers = ("t", "r") if which == "both" else (which,)
    root = Path(root)
    rows = []
    used = 0
    for index, rec in enumerate(records):
        if split is not None and rec.split != split:
            continue
        if max_samples is not None and used >= max_samples:
            break
        try:
            m = load_png(root / rec.m)
            gt = {"t": load_png(root / rec.t), "r": load_png(root / rec.r)}
        except FileNotFoundError as err:
            warnings.warn(f"skipping record {index}: {err}")
            continue
        used += 1
        t_hat, r_hat = separator(m, rec.cap_t, rec.cap_r)
        est = {"t": t_hat, "r": r_hat}
        for layer in layers:
            rows.append({
                "index": index,
                "layer": layer,
                "psnr": psnr(est[layer], gt[layer]),
                "ssim": ssim(est[layer], gt[layer]),
            })
    return rows


def evaluate(
    separator: Separator,
    records: Sequence[ManifestRecord],
    root: str | Path,
    which: str = "both",
    split: Optional[str] = None,
    max_samples: Optional[int] = None,
    dataset_name: str = "synthetic",
) -> list[MetricRow]:
    """Aggregate per-layer metric rows plus an average row.

    The aggregation is a plain mean over samples, so results are independent
    of record order.
    """
    samples = evaluate_samples(separator, records, root, which, split, max_samples)
    name = dataset_name if split is None else f"{dataset_name}/{split}"
    rows = []
    layers = ("t", "r") if which == "both" else (which,)
    for layer in layers:
        layer_rows = [s for s in samples if s["layer"] == layer]
        if not layer_rows:
            continue
        rows.append(MetricRow(
            dataset=f"{name}:{layer}",
            count=len(layer_rows),
            psnr_mean=float(np.mean([s["psnr"] for s in layer_rows])),
            ssim_mean=float(np.mean([s["ssim"] for s in layer_rows])),
        ))
    if len(rows) > 1:
        rows.append(MetricRow(
            dataset=f"{name}:average",
            count=sum(r.count for r in rows),
            psnr_mean=float(np.mean([r.psnr_mean for r in rows])),
            ssim_mean=float(np.mean([r.ssim_mean for r in rows])),
        ))
    return rows


def format_table(rows: Sequence[MetricRow]) -> str:
    """Aligned text table of metric rows."""
    header = f"{'dataset':<28} {'n':>5} {'PSNR (dB)':>10} {'SSIM':>7}"
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(
            f"{row.dataset:<28} {row.count:>5} {row.psnr_mean:>10.2f} {row.ssim_mean:>7.4f}"
        )
    return "\n".join(lines)


def ablation_grid(
    variants: dict[str, str | Path],
    manifest_path: str | Path,
    which: str = "t",
    split: str = "test",
    max_samples: Optional[int] = None,
) -> dict:
    """Evaluate checkpoints of ablation variants on the same held-out split.

    Missing checkpoints are skipped with a warning so partial grids still
    produce a report.
    """
    from .synthdata import read_manifest
    from .trainer import load_checkpoint, restore_model

    records = read_manifest(manifest_path)
    root = Path(manifest_path).parent
    report = {"split": split, "which": which, "rows": [], "skipped": []}
    for name, ckpt in variants.items():
        ckpt = Path(ckpt)
        if not ckpt.exists():
            warnings.warn(f"missing checkpoint for variant {name!r}: {ckpt}")
            report["skipped"].append(name)
            continue
        model, vocab, _ = restore_model(load_checkpoint(ckpt))
        rows = evaluate(
            model_separator(model, vocab), records, root,
            which=which, split=split, max_samples=max_samples,
        )
        report["rows"].append({
            "variant": name,
            "psnr": rows[0].psnr_mean,
            "ssim": rows[0].ssim_mean,
            "count": rows[0].count,
            "parameters": model.count_parameters(),
        })
    return report


def format_ablation_table(report: dict) -> str:
    header = f"{'variant':<16} {'PSNR (dB)':>10} {'SSIM':>7} {'params':>10}"
    lines = [header, "-" * len(header)]
    for row in report["rows"]:
        lines.append(
            f"{row['variant']:<16} {row['psnr']:>10.2f} {row['ssim']:>7.4f} "
            f"{row['parameters']:>10}"
        )
    for name in report.get("skipped", []):
        lines.append(f"{name:<16} {'(missing checkpoint)':>28}")
    return "\n".join(lines)
