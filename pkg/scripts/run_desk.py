"""Desk-scale experiment: all five cases on the bundled synthetic dataset.

    python3 scripts/run_desk.py [--config configs/desk.yaml] [--out runs/desk] [--seed 0]

Prints each case's row-% confusion matrix, the minor-class diagonal sums and
the wall-clock time; reports land under ``--out``.
"""
import argparse
import logging
import time
from pathlib import Path

import numpy as np

from ecgaug.config import dump_config, load_config
from ecgaug.pipeline import CASES, run

ROOT = Path(__file__).resolve().parents[1]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(ROOT / "configs" / "desk.yaml"))
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--case", action="append", help="subset of cases (default: all)")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(args.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(cfg))

    t0 = time.perf_counter()
    bundle = run(cfg, args.case or CASES, out)
    minutes = (time.perf_counter() - t0) / 60

    np.set_printoptions(precision=1, suppress=True)
    for case, res in bundle.results.items():
        if not res.ok:
            print(f"{case}: FAILED at {res.error['stage']}: {res.error['message']}")
            continue
        m = res.matrix
        minor = sum(m.percent[m.classes.index(c), m.classes.index(c)] for c in cfg.minor_classes)
        print(f"\n{case} (classes {' '.join(m.classes)}): minor diagonal sum {minor:.1f}")
        print(m.percent)
    print(f"\nwall clock {minutes:.1f} min; reports under {out}")
    for name in ("net_improvement.csv", "quality.csv"):
        path = out / "summary" / name
        if path.exists():
            print(f"\n{name}\n{path.read_text()}")


if __name__ == "__main__":
    main()
