"""Fit the unconditional GAN to one repeated beat and watch the DTW distance fall.

    python3 scripts/gan_sanity.py [--epochs 400] [--width 0.125] [--out runs/gan_sanity]

Writes the loss history and a checkpoint under ``--out`` and prints the mean
DTW distance of 50 generated beats to the target before and after training.
"""
import argparse
import logging
from pathlib import Path

import numpy as np

from ecgaug.beat import Beat
from ecgaug.gan import GanTrainConfig, generate, new_model, train
from ecgaug.screen import dtw_to_template


def target_beat(length=256):
    t = np.linspace(0, 1, length)
    b = np.exp(-0.5 * ((t - 0.5) / 0.03) ** 2) - 0.3 * np.exp(-0.5 * ((t - 0.3) / 0.05) ** 2)
    b += 0.2 * np.exp(-0.5 * ((t - 0.75) / 0.06) ** 2)
    return 2 * (b - b.min()) / (b.max() - b.min()) - 1


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--epochs", type=int, default=400)
    p.add_argument("--width", type=float, default=0.125)
    p.add_argument("--copies", type=int, default=160)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/gan_sanity")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")

    beat = target_beat()
    cfg = GanTrainConfig(epochs=args.epochs, width=args.width, seed=args.seed, checkpoint_dir=args.out)
    model = new_model(False, cfg, label="N")

    def mean_dtw():
        gen = np.stack([b.samples for b in generate(model.generator, 50, seed=1)])
        return float(dtw_to_template(gen, beat).mean())

    before = mean_dtw()
    train(model, [Beat(beat, "N")] * args.copies, cfg)
    after = mean_dtw()
    w = np.array([r["wasserstein_estimate"] for r in model.history])
    print(f"mean DTW to target: {before:.3f} -> {after:.3f} (ratio {after / before:.3f})")
    print(f"|Wasserstein estimate|: max {np.abs(w).max():.3f}, mean of last 20 steps {np.abs(w[-20:]).mean():.3f}")
    print(f"history and checkpoint under {Path(args.out)}")


if __name__ == "__main__":
    main()
