"""Overfit the separation network on a fixed 8-sample batch.

The fastest end-to-end health check: if the full model cannot drive
train-set transmission PSNR upward on eight fixed mixtures, something is
broken in the encoder, the interaction stage, the decoders, or the loss.
Defaults are sized for a quick look on CPU; raise --steps and --channels
for a serious run.
"""

import argparse
import time
from pathlib import Path

import numpy as np
import torch

from langsep import LossWeights, ModelConfig, SeparationModel, Vocab, build_dataset
from langsep.evalkit import psnr
from langsep.synthdata import load_record, read_manifest
from langsep.textenc import MAX_CAPTION_LEN
from langsep.toydata import make_toy_sources
from langsep.trainer import collate, train_step


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("runs/overfit_batch"))
    parser.add_argument("--steps", type=int, default=60)
    parser.add_argument("--channels", type=int, default=32)
    parser.add_argument("--lr", type=float, default=2e-3)
    parser.add_argument("--warmup", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    torch.manual_seed(args.seed)
    sources = make_toy_sources(12, seed=3, edge_px=8.0)
    manifest = build_dataset(sources, count=8, seed=9, out_dir=args.out,
                             split_fractions=(1.0, 0.0, 0.0), blur_sigma_max=2.0)
    samples = [load_record(rec, args.out) for rec in read_manifest(manifest)]
    captions = [c for s in samples for c in (s.cap_t, s.cap_r) if c]
    vocab = Vocab.build(captions, min_freq=1)
    batch = collate(samples, vocab, MAX_CAPTION_LEN)

    model = SeparationModel(len(vocab), ModelConfig(channels=args.channels))
    weights = LossWeights()
    opt = torch.optim.Adam(model.parameters(), lr=args.lr, betas=(0.9, 0.99))
    warm = torch.optim.lr_scheduler.LinearLR(
        opt, start_factor=0.1, total_iters=args.warmup)
    cosine = torch.optim.lr_scheduler.CosineAnnealingLR(
        opt, T_max=max(args.steps - args.warmup, 1), eta_min=args.lr * 0.1)
    sched = torch.optim.lr_scheduler.SequentialLR(
        opt, [warm, cosine], milestones=[args.warmup])

    def train_psnr() -> float:
        model.eval()
        with torch.no_grad():
            out = model(batch.m, batch.ids_t, batch.avail_t, batch.ids_r, batch.avail_r)
        vals = [psnr(out.t_hat[i].permute(1, 2, 0).numpy(),
                     batch.t[i].permute(1, 2, 0).numpy())
                for i in range(len(samples))]
        return float(np.mean(vals))

    print(f"{len(samples)} samples, vocab {len(vocab)}, "
          f"{model.count_parameters():,} trainable parameters")
    print(f"T-PSNR before training: {train_psnr():.2f} dB")
    t0 = time.time()
    for step in range(1, args.steps + 1):
        report = train_step(batch, model, weights, opt)
        sched.step()
        if step % max(args.steps // 6, 1) == 0 or step == args.steps:
            print(f"step {step:4d}: loss {report.total:.4f}  "
                  f"T-PSNR {train_psnr():.2f} dB  ({time.time() - t0:.0f}s)")
    print("expect a steady climb; plateauing near the start means trouble")


if __name__ == "__main__":
    main()
