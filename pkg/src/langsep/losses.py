"""Training objectives: cross-modal correspondence terms and image-layer terms.

The correspondence side scores sigmoid-cosine similarity D between a caption
embedding and a global image embedding.  Ground-truth-layer similarities are
treated as constants (no gradient), so only the estimate branch trains the
embedder.  The image side combines pixel, structural, perceptual, exclusion,
and linear-space reconstruction terms.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Optional

import torch
import torch.nn.functional as F

from .synthdata import GAMMA

EXCLUSION_LEVELS = 3
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class LossWeights:
    """Coefficients of the total objective; all non-negative."""

    gamma_ctr: float = 0.5
    gamma_lcr: float = 0.5
    lambda_pix: float = 1.0
    lambda_ssim: float = 0.3
    lambda_per: float = 0.1
    lambda_exc: float = 0.1
    lambda_rec: float = 0.2

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"loss weight {name} must be non-negative, got {value}")


@dataclass
class LossReport:
    """Detached per-term values plus the weighted total."""

    ctr: float
    lcr: float
    pix: float
    ssim: float
    per: float
    exc: float
    rec: float
    total: float

    def to_dict(self) -> dict:
        return asdict(self)


def similarity(f_l: torch.Tensor, f_glo: torch.Tensor) -> torch.Tensor:
    """Sigmoid of the cosine between caption and image embeddings, in (0, 1).

    Accepts (C,) or (B, C) tensors; zero-norm vectors are rejected.
    """
    if (torch.linalg.vector_norm(f_l, dim=-1) == 0).any():
        raise ValueError("zero-norm language feature in similarity")
    if (torch.linalg.vector_norm(f_glo, dim=-1) == 0).any():
        raise ValueError("zero-norm image feature in similarity")
    return torch.sigmoid(F.cosine_similarity(f_l, f_glo, dim=-1))


def contrastive_from_similarities(
    d_est: torch.Tensor, d_counter: torch.Tensor
) -> torch.Tensor:
    """-log(D_est / (D_est + D_counter)); zero when the counter layer scores 0."""
    return -torch.log(d_est / (d_est + d_counter))


def layer_correspondence_from_similarities(
    d_est: torch.Tensor, d_gt: torch.Tensor
) -> torch.Tensor:
    """|D_est - D_gt|, bounded by sigmoid(1) - sigmoid(-1)."""
    return torch.abs(d_est - d_gt)


def contrastive_correspondence(
    f_l: torch.Tensor,
    f_glo_est: torch.Tensor,
    f_glo_counter: torch.Tensor,
) -> torch.Tensor:
    """Contrastive correspondence of one description against the other layer.

    The counter similarity uses the ground-truth counter layer and is treated
    as a constant.
    """
    d_est = similarity(f_l, f_glo_est)
    with torch.no_grad():
        d_counter = similarity(f_l, f_glo_counter)
    return contrastive_from_similarities(d_est, d_counter)


def layer_correspondence(
    f_l: torch.Tensor,
    f_glo_est: torch.Tensor,
    f_glo_gt: torch.Tensor,
) -> torch.Tensor:
    """Match the estimate's description similarity to the ground-truth layer's."""
    d_est = similarity(f_l, f_glo_est)
    with torch.no_grad():
        d_gt = similarity(f_l, f_glo_gt)
    return layer_correspondence_from_similarities(d_est, d_gt)


def batch_correspondence(
    f_l_t: Optional[torch.Tensor],
    avail_t: Optional[torch.Tensor],
    f_l_r: Optional[torch.Tensor],
    avail_r: Optional[torch.Tensor],
    emb_est_t: torch.Tensor,
    emb_est_r: torch.Tensor,
    emb_gt_t: torch.Tensor,
    emb_gt_r: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Both correspondence losses over a batch.

    Terms are summed over the available descriptions of each sample (the
    counter layer of a description is always the other layer's ground truth)
    and averaged over the batch; samples without captions contribute zero.

    Returns:
        (ctr, lcr) scalar tensors.
    """
    b = emb_est_t.shape[0]
    ctr = emb_est_t.new_zeros(())
    lcr = emb_est_t.new_zeros(())
    sides = (
        (f_l_t, avail_t, emb_est_t, emb_gt_t, emb_gt_r),
        (f_l_r, avail_r, emb_est_r, emb_gt_r, emb_gt_t),
    )
    for f_l, avail, emb_est, emb_gt, emb_counter in sides:
        if f_l is None:
            continue
        mask = avail if avail is not None else torch.ones(
            b, dtype=torch.bool, device=f_l.device
        )
        if not mask.any():
            continue
        ctr_terms = contrastive_correspondence(f_l, emb_est, emb_counter)
        lcr_terms = layer_correspondence(f_l, emb_est, emb_gt)
        ctr = ctr + torch.where(mask, ctr_terms, torch.zeros_like(ctr_terms)).sum() / b
        lcr = lcr + torch.where(mask, lcr_terms, torch.zeros_like(lcr_terms)).sum() / b
    return ctr, lcr


def _gaussian_window(
    size: int, sigma: float, dtype: torch.dtype, device: torch.device
) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype, device=device) - (size - 1) / 2.0
    g = torch.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim_index(
    x: torch.Tensor,
    y: torch.Tensor,
    window_size: int = SSIM_WINDOW,
    sigma: float = SSIM_SIGMA,
) -> torch.Tensor:
    """Differentiable SSIM over valid windows, averaged per sample.

    Gaussian-weighted local statistics with the standard constants and unit
    peak; no padding, so only fully supported windows contribute.

    Args:
        x, y: (B, C, H, W) images in [0, 1], H, W >= window_size.

    Returns:
        (B,) per-sample mean SSIM.
    """
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape[-2:]) < window_size:
        raise ValueError(f"image smaller than the {window_size}x{window_size} window")
    c = x.shape[1]
    w = _gaussian_window(window_size, sigma, x.dtype, x.device)
    w = w.expand(c, 1, window_size, window_size)
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2

    mu_x = F.conv2d(x, w, groups=c)
    mu_y = F.conv2d(y, w, groups=c)
    var_x = F.conv2d(x * x, w, groups=c) - mu_x ** 2
    var_y = F.conv2d(y * y, w, groups=c) - mu_y ** 2
    cov = F.conv2d(x * y, w, groups=c) - mu_x * mu_y
    s = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    )
    return s.mean(dim=(1, 2, 3))


def _image_gradients(x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    gradx = x[:, :, :, 1:] - x[:, :, :, :-1]
    grady = x[:, :, 1:, :] - x[:, :, :-1, :]
    return gradx, grady


def exclusion_loss(
    t_hat: torch.Tensor,
    r_hat: torch.Tensor,
    levels: int = EXCLUSION_LEVELS,
) -> torch.Tensor:
    """Multi-scale gradient-product exclusion between the two layer estimates.

    At each dyadic scale the reflection gradients are rescaled so both layers
    contribute comparably, squashed through a shifted sigmoid, and penalized
    where both are simultaneously large.  Zero whenever either layer is flat.
    """
    eps = 1e-12
    gradx_terms = []
    grady_terms = []
    x1, x2 = t_hat, r_hat
    for level in range(levels):
        gradx1, grady1 = _image_gradients(x1)
        gradx2, grady2 = _image_gradients(x2)
        alphax = 2.0 * gradx1.abs().mean() / (gradx2.abs().mean() + eps)
        alphay = 2.0 * grady1.abs().mean() / (grady2.abs().mean() + eps)
        gradx1_s = torch.sigmoid(gradx1) * 2 - 1
        grady1_s = torch.sigmoid(grady1) * 2 - 1
        gradx2_s = torch.sigmoid(gradx2 * alphax) * 2 - 1
        grady2_s = torch.sigmoid(grady2 * alphay) * 2 - 1
        gradx_terms.append((gradx1_s.square() * gradx2_s.square()).mean() ** 0.25)
        grady_terms.append((grady1_s.square() * grady2_s.square()).mean() ** 0.25)
        if level + 1 < levels:
            x1 = F.avg_pool2d(x1, kernel_size=2, stride=2)
            x2 = F.avg_pool2d(x2, kernel_size=2, stride=2)
    gradx_total = sum(gradx_terms) / levels
    grady_total = sum(grady_terms) / levels
    return (gradx_total + grady_total) / 2.0


def to_linear(x: torch.Tensor) -> torch.Tensor:
    """sRGB [0, 1] -> linear intensity (torch mirror of the numpy version)."""
    return x ** GAMMA


def image_layer_loss(
    t_hat: torch.Tensor,
    r_hat: torch.Tensor,
    t: torch.Tensor,
    r: torch.Tensor,
    m: torch.Tensor,
    weights: Optional[LossWeights] = None,
    perceptual_fn: Optional[Callable[[torch.Tensor], list[torch.Tensor]]] = None,
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Weighted image-side objective plus the per-term breakdown.

    Args:
        t_hat, r_hat: layer estimates (B, 3, H, W) in [0, 1].
        t, r, m: ground-truth layers and the mixture.
        weights: term coefficients (defaults used if None).
        perceptual_fn: image -> list of feature maps; the perceptual term is
            zero when omitted.

    Returns:
        (weighted image loss, dict with keys pix/ssim/per/exc/rec).
    """
    for name, img in (("t_hat", t_hat), ("r_hat", r_hat), ("t", t), ("r", r), ("m", m)):
        if img.shape != t_hat.shape:
            raise ValueError(f"{name} shape {img.shape} != {t_hat.shape}")
    weights = weights or LossWeights()

    pix = F.l1_loss(t_hat, t) + F.l1_loss(r_hat, r)
    ssim = (1 - ssim_index(t_hat, t)).mean() + (1 - ssim_index(r_hat, r)).mean()
    exc = exclusion_loss(t_hat, r_hat)
    rec = F.l1_loss(to_linear(t_hat) + to_linear(r_hat), to_linear(m))

    if perceptual_fn is not None:
        per = t_hat.new_zeros(())
        for est, gt in ((t_hat, t), (r_hat, r)):
            est_feats = perceptual_fn(est)
            with torch.no_grad():
                gt_feats = perceptual_fn(gt)
            per = per + sum(
                F.l1_loss(fe, fg) for fe, fg in zip(est_feats, gt_feats)
            ) / len(est_feats)
    else:
        per = t_hat.new_zeros(())

    parts = {"pix": pix, "ssim": ssim, "per": per, "exc": exc, "rec": rec}
    total = (
        weights.lambda_pix * pix
        + weights.lambda_ssim * ssim
        + weights.lambda_per * per
        + weights.lambda_exc * exc
        + weights.lambda_rec * rec
    )
    return total, parts


def total_loss(
    parts: dict[str, torch.Tensor],
    weights: Optional[LossWeights] = None,
) -> tuple[torch.Tensor, LossReport]:
    """Weighted sum of all terms; non-finite terms abort with identification.

    Args:
        parts: scalar tensors keyed by ctr/lcr/pix/ssim/per/exc/rec (missing
            keys count as zero).

    Returns:
        (total tensor for backward, detached LossReport).
    """
    weights = weights or LossWeights()
    for name, value in parts.items():
        if not torch.isfinite(value).all():
            raise FloatingPointError(f"non-finite loss term {name!r}: {value}")

    def part(name: str) -> torch.Tensor:
        value = parts.get(name)
        if value is None:
            for have in parts.values():
                return have.new_zeros(())
            return torch.zeros(())
        return value

    coeffs = {
        "ctr": weights.gamma_ctr,
        "lcr": weights.gamma_lcr,
        "pix": weights.lambda_pix,
        "ssim": weights.lambda_ssim,
        "per": weights.lambda_per,
        "exc": weights.lambda_exc,
        "rec": weights.lambda_rec,
    }
    total = sum(coeffs[name] * part(name) for name in coeffs)

    def value(name: str) -> float:
        return float(part(name).detach())

    report = LossReport(
        ctr=value("ctr"), lcr=value("lcr"), pix=value("pix"), ssim=value("ssim"),
        per=value("per"), exc=value("exc"), rec=value("rec"),
        total=float(total.detach()),
    )
    return total, report
