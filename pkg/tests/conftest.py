from __future__ import annotations

import numpy as np
import pytest
import torch

from langsep import ModelConfig, SeparationModel, Vocab, make_toy_sources, synthesize_sample


def numeric_grad(fn, x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Central-difference gradient of a scalar function at 64-bit precision."""
    assert x.dtype == torch.float64
    grad = torch.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        up = float(fn())
        flat[i] = orig - eps
        down = float(fn())
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad


def assert_grad_matches(fn, x: torch.Tensor, rtol: float = 1e-3, eps: float = 1e-6):
    """Compare autograd against central differences for scalar fn of x."""
    x.grad = None
    out = fn()
    out.backward()
    analytic = x.grad.detach().clone()
    with torch.no_grad():
        numeric = numeric_grad(fn, x.detach(), eps=eps)
    denom = numeric.abs().max().clamp_min(1e-8)
    rel = (analytic - numeric).abs().max() / denom
    assert rel < rtol, f"gradient mismatch: rel err {rel:.3e}"


def ssim_reference(x: np.ndarray, y: np.ndarray) -> float:
    """Direct float64 transcription of the Gaussian-weighted SSIM formula.

    Channel-first (C, H, W) input, 11x11 window, sigma 1.5, valid windows
    only, averaged over windows then channels.
    """
    from numpy.lib.stride_tricks import sliding_window_view

    coords = np.arange(11, dtype=np.float64) - 5.0
    g = np.exp(-(coords ** 2) / (2 * 1.5 ** 2))
    g = np.outer(g, g) / np.outer(g, g).sum()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for c in range(x.shape[0]):
        wx = sliding_window_view(x[c], (11, 11))
        wy = sliding_window_view(y[c], (11, 11))
        mu_x = (wx * g).sum((-1, -2))
        mu_y = (wy * g).sum((-1, -2))
        var_x = (wx ** 2 * g).sum((-1, -2)) - mu_x ** 2
        var_y = (wy ** 2 * g).sum((-1, -2)) - mu_y ** 2
        cov = (wx * wy * g).sum((-1, -2)) - mu_x * mu_y
        s = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
            (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
        )
        vals.append(s.mean())
    return float(np.mean(vals))


@pytest.fixture(scope="session")
def toy_sources():
    return make_toy_sources(12, seed=11)


@pytest.fixture(scope="session")
def toy_samples(toy_sources):
    return [
        synthesize_sample(toy_sources[2 * i], toy_sources[2 * i + 1], np.random.default_rng((21, i)))
        for i in range(4)
    ]


@pytest.fixture(scope="session")
def toy_vocab(toy_sources):
    return Vocab.build([c for p in toy_sources for c in p.captions], min_freq=1)


@pytest.fixture()
def tiny_model(toy_vocab):
    torch.manual_seed(7)
    return SeparationModel(
        len(toy_vocab),
        ModelConfig(channels=16, num_groups=2, num_refinements=1, text_model_dim=32),
    )
