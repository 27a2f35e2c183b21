"""Release-gate checks, one test per criterion, one PASS line each.

Criteria 1-7 are analytic/statistical and run in seconds to minutes.
Criteria 8-10 train real models on CPU and dominate the suite's runtime
(roughly 20 minutes for the overfit run and 30-45 minutes for the three
desk trainings shared by the last two tests); they are marked slow.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the PASS lines.
"""

import json
import math

import numpy as np
import pytest
import torch
from scipy import stats

from langsep.evalkit import evaluate, model_separator, psnr, ssim
from langsep.interact import AGAM, AGIM, language_gate
from langsep.losses import (
    LossWeights,
    contrastive_from_similarities,
    exclusion_loss,
    image_layer_loss,
    layer_correspondence_from_similarities,
    similarity,
    ssim_index,
)
from langsep.model import ModelConfig, SeparationModel, separate_image
from langsep.synthdata import (
    build_dataset,
    inverse_gamma,
    read_manifest,
    recognizable,
    synthesize_sample,
)
from langsep.textenc import MAX_CAPTION_LEN, Vocab, encode_batch
from langsep.toydata import make_toy_sources
from langsep.trainer import collate, desk_config, drop_descriptions, fit, train_step

from conftest import assert_grad_matches, ssim_reference

SIGMA_1 = 0.7310585786300049  # sigmoid(1)
SIGMA_M1 = 0.2689414213699951  # sigmoid(-1)

# ---- criterion 8: overfit recipe (desk model at reduced C for CPU) ----
OVERFIT_CHANNELS = 96
OVERFIT_STEPS = 200
OVERFIT_PEAK_LR = 2e-3
OVERFIT_WARMUP = 20  # linear ramp, then flat at peak until the cosine tail
OVERFIT_FLAT = 100
OVERFIT_SOURCES = 12  # toy scenes; 8 samples re-draw pairs from these
OVERFIT_SOURCE_SEED = 3
OVERFIT_DATA_SEED = 9
OVERFIT_TORCH_SEED = 0
OVERFIT_TARGET_DB = 28.0

# ---- criteria 9/10: shared desk training grid ----
DESK_SAMPLES = 500
DESK_CHANNELS = 64
DESK_SOURCE_COUNT = 32
DESK_SOURCE_SEED = 1
DESK_DATA_SEED = 2
DESK_TRAIN_SEED = 0
DESK_LR = 2e-3


def _report(criterion: int, detail: str) -> None:
    print(f"\ncriterion {criterion}: PASS — {detail}")


# ---------------------------------------------------------------------------
# 1. analytic loss values


def test_criterion_1_analytic_loss_values():
    v = torch.tensor([[1.0, 0.0, 0.0]], dtype=torch.float64)
    w = torch.tensor([[0.0, 1.0, 0.0]], dtype=torch.float64)

    assert abs(similarity(v, v).item() - SIGMA_1) < 1e-6
    assert abs(similarity(v, w).item() - 0.5) < 1e-6
    assert abs(similarity(v, -v).item() - SIGMA_M1) < 1e-6

    # symmetric D: estimate and counterpart equally similar -> ln 2
    d = torch.tensor([0.37], dtype=torch.float64)
    ctr = contrastive_from_similarities(d, d)
    assert abs(ctr.item() - math.log(2.0)) < 1e-6

    # consistency term: zero at equality, bounded by sigma(1) - sigma(-1)
    assert layer_correspondence_from_similarities(d, d).item() == 0.0
    bound = SIGMA_1 - SIGMA_M1  # 0.46212 <= the stated 0.4624
    gen = torch.Generator().manual_seed(0)
    cosines = torch.rand(512, generator=gen, dtype=torch.float64) * 2.0 - 1.0
    d_all = torch.sigmoid(cosines)
    pairs = layer_correspondence_from_similarities(
        d_all.unsqueeze(1), d_all.unsqueeze(0))
    assert pairs.max().item() <= 0.4624
    extreme = layer_correspondence_from_similarities(
        torch.tensor([SIGMA_1], dtype=torch.float64),
        torch.tensor([SIGMA_M1], dtype=torch.float64),
    )
    assert abs(extreme.item() - bound) < 1e-6
    _report(1, "similarity/contrastive/consistency values match to 1e-6")


# ---------------------------------------------------------------------------
# 2. attention oracle equivalence


def _dense_agam(module: AGAM, f_in: torch.Tensor) -> torch.Tensor:
    """Brute-force AGAM: explicit loops over tokens, float64."""
    b, c, h, w = f_in.shape
    tau = module.log_tau.exp().item()
    out = torch.empty(b, c, dtype=f_in.dtype)
    for bi in range(b):
        tokens = [f_in[bi, :, i, j] for i in range(h) for j in range(w)]
        tokens.append(torch.stack(tokens).mean(dim=0))
        q = module.query(tokens[-1].unsqueeze(0))[0]
        logits = torch.stack(
            [(q * module.key(t.unsqueeze(0))[0]).sum() / tau for t in tokens]
        )
        attn = torch.softmax(logits, dim=0)
        vals = torch.stack([module.value(t.unsqueeze(0))[0] for t in tokens])
        out[bi] = (attn.unsqueeze(1) * vals).sum(dim=0)
    return out


def _dense_agim(
    module: AGIM, f_in: torch.Tensor, query_vec: torch.Tensor, f_glo: torch.Tensor
) -> torch.Tensor:
    """Brute-force AGIM: explicit loops over channel pairs, float64."""
    b, c, h, w = f_in.shape
    eta = module.log_eta.exp().item()
    out = torch.empty_like(f_in)
    for bi in range(b):
        q = module.query(query_vec[bi].unsqueeze(0))[0]
        k = module.key(f_glo[bi].unsqueeze(0))[0]
        tokens = f_in[bi].flatten(1).T  # (hw, C)
        v = module.value(tokens).T  # (C, hw)
        inter = torch.empty(c, h * w, dtype=f_in.dtype)
        for i in range(c):
            logits = torch.tensor([q[i] * k[j] / eta for j in range(c)])
            attn = torch.softmax(logits, dim=0)
            inter[i] = sum(attn[j] * v[j] for j in range(c))
        cos = torch.dot(q, k) / (q.norm() * k.norm())
        s = cos.clamp(-1.0, 1.0)
        out[bi] = f_in[bi] + s * inter.reshape(c, h, w)
    return out


def test_criterion_2_attention_oracles():
    torch.manual_seed(2)
    b, c, h, w = 2, 8, 4, 4  # hw = 16

    agam = AGAM(c).double()
    f_in = torch.randn(b, c, h, w, dtype=torch.float64)
    with torch.no_grad():
        fast, _ = agam(f_in)
        slow = _dense_agam(agam, f_in)
    agam_err = (fast - slow).abs().max().item()
    assert agam_err < 1e-5

    agim = AGIM(c).double()
    with torch.no_grad():  # un-zero the value path so the check is non-trivial
        agim.value.linear.weight.normal_(0.0, 0.5)
        agim.value.linear.bias.normal_(0.0, 0.5)
    query_vec = torch.randn(b, c, dtype=torch.float64)
    f_glo = torch.randn(b, c, dtype=torch.float64)
    with torch.no_grad():
        fast = agim(f_in, query_vec, f_glo).feature
        slow = _dense_agim(agim, f_in, query_vec, f_glo)
    agim_err = (fast - slow).abs().max().item()
    assert agim_err < 1e-5
    _report(2, f"dense-attention oracles match (AGAM {agam_err:.1e}, AGIM {agim_err:.1e})")


# ---------------------------------------------------------------------------
# 3. gate equivalence


def test_criterion_3_gate_bit_identity(tiny_model, toy_vocab):
    torch.manual_seed(3)
    model = tiny_model
    model.eval()
    m = torch.rand(2, 3, 32, 32)
    ids, _ = encode_batch(
        toy_vocab, ["a red circle", "a blue square"], MAX_CAPTION_LEN)
    none_avail = torch.zeros(2, dtype=torch.bool)

    with torch.no_grad():
        masked = model(m, ids, none_avail, ids, none_avail)
        selfpath = model(m)
    assert torch.equal(masked.t_hat, selfpath.t_hat)
    assert torch.equal(masked.r_hat, selfpath.r_hat)

    # stage level: explicit None language vs masked language rows
    f_m = torch.randn(2, model.config.channels, 16, 16)
    f_l = torch.randn(2, model.config.channels)
    with torch.no_grad():
        gated = model.stage(f_m, f_l, f_l, none_avail, none_avail)
        plain = model.stage(f_m, None, None, None, None)
    assert torch.equal(gated.f_t, plain.f_t)
    assert torch.equal(gated.f_r, plain.f_r)

    # gate primitive returns the visual global object itself on the null path
    query, decisions = language_gate(None, None, f_l)
    assert query is f_l and not decisions.any()
    _report(3, "NULL-description forward is bit-identical to self-attention path")


# ---------------------------------------------------------------------------
# 4. finite-difference gradient checks


def test_criterion_4_gradient_checks(tiny_model, toy_vocab):
    torch.manual_seed(4)
    rel_tol = 1e-3

    # each differentiable loss term, float64, tiny shapes
    t_hat = (torch.rand(1, 3, 12, 12, dtype=torch.float64) * 0.8 + 0.1).requires_grad_(True)
    r_hat = torch.rand(1, 3, 12, 12, dtype=torch.float64) * 0.8 + 0.1
    t = torch.rand(1, 3, 12, 12, dtype=torch.float64)
    r = torch.rand(1, 3, 12, 12, dtype=torch.float64)
    m = ((t + r) / 2).clamp(0.0, 1.0)
    weights = LossWeights()
    assert_grad_matches(
        lambda: image_layer_loss(t_hat, r_hat, t, r, m, weights)[0], t_hat, rtol=rel_tol)

    y11 = torch.rand(1, 1, 11, 11, dtype=torch.float64) * 0.6 + 0.2
    x11 = (y11 + torch.randn_like(y11) * 0.05).clamp(0.05, 0.95).requires_grad_(True)
    assert_grad_matches(lambda: ssim_index(x11, y11).mean(), x11, rtol=rel_tol)

    x8 = torch.rand(1, 3, 8, 8, dtype=torch.float64).requires_grad_(True)
    y8 = torch.rand(1, 3, 8, 8, dtype=torch.float64)
    assert_grad_matches(lambda: exclusion_loss(x8, y8), x8, rtol=2e-3)

    cos = (torch.rand(4, dtype=torch.float64) * 1.6 - 0.8).requires_grad_(True)
    counter = torch.sigmoid(torch.rand(4, dtype=torch.float64) * 1.6 - 0.8)
    assert_grad_matches(
        lambda: contrastive_from_similarities(torch.sigmoid(cos), counter).sum(),
        cos, rtol=rel_tol)
    assert_grad_matches(
        lambda: layer_correspondence_from_similarities(torch.sigmoid(cos), counter).sum(),
        cos, rtol=rel_tol)

    # embedding-level path (cosine + sigmoid + no-grad counter branch)
    f_l = torch.randn(4, 8, dtype=torch.float64)
    f_est = torch.randn(4, 8, dtype=torch.float64).requires_grad_(True)
    assert_grad_matches(lambda: similarity(f_l, f_est).sum(), f_est, rtol=rel_tol)

    # full separate() pass: d(scalar readout)/d(mixture) vs central differences
    model = tiny_model.double()
    model.eval()
    ids, avail = encode_batch(toy_vocab, ["a red circle"], MAX_CAPTION_LEN)
    proj_t = torch.randn(1, 3, 32, 32, dtype=torch.float64)
    proj_r = torch.randn(1, 3, 32, 32, dtype=torch.float64)

    def readout(mix: torch.Tensor) -> torch.Tensor:
        out = model(mix, ids, avail, ids, avail)
        return (out.t_hat * proj_t).sum() + 0.5 * (out.r_hat * proj_r).sum()

    mix = torch.rand(1, 3, 32, 32, dtype=torch.float64)
    leaf = mix.clone().requires_grad_(True)
    analytic = torch.autograd.grad(readout(leaf), leaf)[0]

    gen = np.random.default_rng(44)
    eps = 1e-6
    worst = 0.0
    for _ in range(12):
        idx = (0, int(gen.integers(3)), int(gen.integers(32)), int(gen.integers(32)))
        orig = mix[idx].item()
        with torch.no_grad():
            mix[idx] = orig + eps
            up = readout(mix).item()
            mix[idx] = orig - eps
            down = readout(mix).item()
            mix[idx] = orig
        numeric = (up - down) / (2 * eps)
        ana = analytic[idx].item()
        rel = abs(numeric - ana) / max(abs(numeric), abs(ana), 1e-8)
        worst = max(worst, rel)
    assert worst < rel_tol
    _report(4, f"loss terms and full forward match finite differences (worst {worst:.1e})")


# ---------------------------------------------------------------------------
# 5. data pipeline invariants


def test_criterion_5_data_pipeline():
    # additivity + caption nullness on 1000 samples
    sources = make_toy_sources(12, seed=5, size_px=48)
    worst = 0.0
    for i in range(1000):
        rng = np.random.default_rng((55, i))
        s = synthesize_sample(sources[i % 12], sources[(i * 7 + 1) % 12], rng)
        m_lin = inverse_gamma(s.t) + inverse_gamma(s.r)
        err = np.abs(inverse_gamma(s.m) - m_lin).max()
        worst = max(worst, err)
        assert (s.cap_t is not None) == recognizable(inverse_gamma(s.t), m_lin)
        assert (s.cap_r is not None) == recognizable(inverse_gamma(s.r), m_lin)
    assert worst <= 2.0 / 255.0

    # alpha/beta uniformity at n = 10^4 (tiny images keep this fast)
    small = make_toy_sources(8, seed=6, size_px=16)
    alphas, betas = [], []
    for i in range(10_000):
        rng = np.random.default_rng((66, i))
        s = synthesize_sample(small[i % 8], small[(i * 3 + 1) % 8], rng)
        alphas.append(s.alpha)
        betas.append(s.beta)
    p_alpha = stats.kstest(alphas, stats.uniform(loc=0.8, scale=0.2).cdf).pvalue
    p_beta = stats.kstest(betas, stats.uniform(loc=0.4, scale=0.6).cdf).pvalue
    assert p_alpha > 0.01 and p_beta > 0.01
    _report(5, f"additivity worst {worst * 255:.3f}/255; captions consistent; "
               f"KS p: alpha {p_alpha:.3f}, beta {p_beta:.3f}")


# ---------------------------------------------------------------------------
# 6. metric oracles


def test_criterion_6_metric_oracles():
    base = np.random.default_rng(60).random((24, 24, 3)) * 0.8 + 0.1
    assert abs(psnr(base + 0.1, base) - 20.0) < 1e-6
    flat = np.full((16, 16, 3), 0.5)
    assert ssim(flat, flat) == 1.0

    gen = np.random.default_rng(61)
    worst_p = worst_s = 0.0
    for _ in range(100):
        h, w = int(gen.integers(13, 33)), int(gen.integers(13, 33))
        x = gen.random((h, w, 3))
        y = np.clip(x + gen.normal(0.0, 0.08, x.shape), 0.0, 1.0)
        mse = float(np.mean((x - y) ** 2))
        worst_p = max(worst_p, abs(psnr(x, y) - 10.0 * math.log10(1.0 / mse)))
        ref = ssim_reference(x.transpose(2, 0, 1), y.transpose(2, 0, 1))
        worst_s = max(worst_s, abs(ssim(x, y) - ref))
    assert worst_p < 1e-6 and worst_s < 1e-6
    _report(6, f"PSNR/SSIM match reference formulas (worst {worst_p:.1e}/{worst_s:.1e})")


# ---------------------------------------------------------------------------
# 7. dropout statistics


def test_criterion_7_dropout_statistics():
    sources = make_toy_sources(2, seed=7, size_px=32)
    gen = np.random.default_rng(70)
    dual = synthesize_sample(sources[0], sources[1], gen)
    while not (dual.cap_t and dual.cap_r):
        dual = synthesize_sample(sources[0], sources[1], gen)

    rng = np.random.default_rng(71)
    n = 10_000
    dropped = dropped_t = 0
    for _ in range(n):
        out = drop_descriptions(dual, rng, 0.3)
        if out.cap_t is None:
            dropped += 1
            dropped_t += 1
        elif out.cap_r is None:
            dropped += 1
    rate = dropped / n
    side = dropped_t / dropped
    assert abs(rate - 0.30) <= 0.015
    assert abs(side - 0.5) <= 0.02

    from langsep.synthdata import with_dropped_caption

    single = with_dropped_caption(dual, "r")
    for _ in range(n):
        out = drop_descriptions(single, rng, 0.3)
        assert out.cap_t == single.cap_t and out.cap_r is None
    _report(7, f"drop rate {rate:.4f}, side split {side:.4f}, singles untouched")


# ---------------------------------------------------------------------------
# 8. overfit sanity (slow: ~20 min CPU)


@pytest.mark.slow
def test_criterion_8_overfit_sanity(tmp_path):
    torch.manual_seed(OVERFIT_TORCH_SEED)
    sources = make_toy_sources(OVERFIT_SOURCES, seed=OVERFIT_SOURCE_SEED, edge_px=8.0)
    manifest = build_dataset(
        sources, count=8, seed=OVERFIT_DATA_SEED, out_dir=tmp_path,
        split_fractions=(1.0, 0.0, 0.0), blur_sigma_max=2.0,
    )
    from langsep.synthdata import load_record

    samples = [load_record(rec, tmp_path) for rec in read_manifest(manifest)]
    captions = [c for s in samples for c in (s.cap_t, s.cap_r) if c]
    vocab = Vocab.build(captions, min_freq=1)
    batch = collate(samples, vocab, MAX_CAPTION_LEN)

    model = SeparationModel(len(vocab), ModelConfig(channels=OVERFIT_CHANNELS))
    weights = LossWeights()
    opt = torch.optim.Adam(model.parameters(), lr=OVERFIT_PEAK_LR, betas=(0.9, 0.99))
    warm = torch.optim.lr_scheduler.LinearLR(
        opt, start_factor=0.1, total_iters=OVERFIT_WARMUP)
    flat = torch.optim.lr_scheduler.ConstantLR(opt, factor=1.0, total_iters=OVERFIT_FLAT)
    cosine = torch.optim.lr_scheduler.CosineAnnealingLR(
        opt, T_max=OVERFIT_STEPS - OVERFIT_WARMUP - OVERFIT_FLAT,
        eta_min=OVERFIT_PEAK_LR / 10)
    sched = torch.optim.lr_scheduler.SequentialLR(
        opt, [warm, flat, cosine],
        milestones=[OVERFIT_WARMUP, OVERFIT_WARMUP + OVERFIT_FLAT])

    for _ in range(OVERFIT_STEPS):
        train_step(batch, model, weights, opt)
        sched.step()

    model.eval()
    with torch.no_grad():
        out = model(batch.m, batch.ids_t, batch.avail_t, batch.ids_r, batch.avail_r)
    values = [psnr(out.t_hat[i].permute(1, 2, 0).numpy(),
                   batch.t[i].permute(1, 2, 0).numpy())
              for i in range(len(samples))]
    mean_db = float(np.mean(values))
    assert mean_db >= OVERFIT_TARGET_DB, f"train T-PSNR {mean_db:.2f} dB < {OVERFIT_TARGET_DB}"
    _report(8, f"200-step overfit reached {mean_db:.2f} dB (>= {OVERFIT_TARGET_DB})")


# ---------------------------------------------------------------------------
# 9/10. desk training grid (slow: three 10-epoch runs shared by both tests)


@pytest.fixture(scope="session")
def desk_grid(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk_grid")
    sources = make_toy_sources(DESK_SOURCE_COUNT, seed=DESK_SOURCE_SEED, edge_px=8.0)
    manifest = build_dataset(
        sources, count=DESK_SAMPLES, seed=DESK_DATA_SEED, out_dir=root / "data")
    ckpts = {}
    for ablation in ("none", "no_agim", "no_language"):
        config = desk_config(
            channels=DESK_CHANNELS,
            lr_initial=DESK_LR,
            lr_drop_epoch=8,
            lr_final=DESK_LR / 10,
            vocab_min_freq=1,
            seed=DESK_TRAIN_SEED,
            ablation=ablation,
            log_every=25,
        )
        ckpts[ablation] = fit(config, manifest, root / ablation)
    return manifest, root / "data", ckpts


def _held_out_t_psnr(ckpt, manifest, data_dir) -> float:
    from langsep.trainer import load_checkpoint, restore_model

    model, vocab, _ = restore_model(load_checkpoint(ckpt))
    model.eval()
    rows = evaluate(model_separator(model, vocab), read_manifest(manifest),
                    data_dir, which="both", split="test")
    by_name = {row.dataset: row for row in rows}
    return by_name["synthetic/test:t"].psnr_mean


@pytest.mark.slow
def test_criterion_9_rank_order_ablation(desk_grid):
    manifest, data_dir, ckpts = desk_grid
    scores = {name: _held_out_t_psnr(ckpt, manifest, data_dir)
              for name, ckpt in ckpts.items()}
    full, no_agim, no_lang = scores["none"], scores["no_agim"], scores["no_language"]

    # sanity floor: the trained model must beat "return the mixture as T"
    identity_rows = evaluate(lambda m, cap_t, cap_r: (m, m),
                             read_manifest(manifest), data_dir,
                             which="t", split="test")
    identity = identity_rows[0].psnr_mean
    assert full > identity, f"full {full:.2f} <= identity baseline {identity:.2f}"

    assert full >= no_agim, f"full {full:.2f} < w/o-AGIM {no_agim:.2f}"
    assert full >= no_lang, f"full {full:.2f} < w/o-language {no_lang:.2f}"
    assert full - no_lang >= 0.3, f"language gap {full - no_lang:.2f} dB < 0.3"
    _report(9, f"full {full:.2f} >= w/o-AGIM {no_agim:.2f}, "
               f">= w/o-language {no_lang:.2f} (gap {full - no_lang:.2f} dB; "
               f"identity baseline {identity:.2f})")


@pytest.mark.slow
def test_criterion_10_description_sensitivity(desk_grid):
    manifest, data_dir, ckpts = desk_grid
    from langsep.synthdata import load_record
    from langsep.trainer import load_checkpoint, restore_model

    model, vocab, _ = restore_model(load_checkpoint(ckpts["none"]))
    model.eval()

    records = [rec for rec in read_manifest(manifest)
               if rec.split == "test" and rec.cap_t and rec.cap_r]
    assert len(records) >= 20, "need 20 dual-caption held-out mixtures"
    records = records[:20]

    def mean_t_psnr(mode: str) -> float:
        values = []
        for i, rec in enumerate(records):
            s = load_record(rec, data_dir)
            if mode == "both":
                caps = (s.cap_t, s.cap_r)
            elif mode == "one":  # alternate which side is described
                caps = (s.cap_t, None) if i % 2 == 0 else (None, s.cap_r)
            else:
                caps = (None, None)
            t_hat, _ = separate_image(model, vocab, s.m, caps[0], caps[1])
            values.append(psnr(t_hat, s.t))
        return float(np.mean(values))

    both, one, zero = mean_t_psnr("both"), mean_t_psnr("one"), mean_t_psnr("zero")
    assert both >= one, f"both {both:.2f} < one {one:.2f}"
    assert one >= zero, f"one {one:.2f} < zero {zero:.2f}"
    _report(10, f"T-PSNR both {both:.2f} >= one {one:.2f} >= zero {zero:.2f}")
