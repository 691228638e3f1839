#!/usr/bin/env python3
"""Bubble charts of client x class sample counts for alpha=0.1 and alpha=1.

    python scripts/partition_figure.py [--out runs/partition] [--seed 0]
"""
import argparse
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from fedgreed.data import dirichlet_partition, synthetic_blobs  # noqa: E402
from fedgreed.report import render_partition_svg  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/partition")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--clients", type=int, default=10)
    ap.add_argument("--samples", type=int, default=6000)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = synthetic_blobs(args.samples, 2, 10, 1.0, seed=args.seed)
    for alpha in (0.1, 1.0):
        plan = dirichlet_partition(data, args.clients, alpha, args.seed)
        path = out / f"partition_alpha{alpha:g}.svg"
        render_partition_svg(plan, data, path)
        print(f"alpha={alpha:g}: sizes {[len(a) for a in plan.assignments]} -> {path}")


if __name__ == "__main__":
    main()
