#!/usr/bin/env python3
"""Defense x attack x M grid: mean post-attack accuracy table plus accuracy curves.

    python scripts/reproduce_table.py [--config configs/acceptance_blobs.toml]
                                      [--malicious 3 5 8] [--out runs/table]

Cells whose preconditions fail (e.g. Krum with N < f+3) are written as "n/a".
"""
import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from fedgreed.aggregation import AGGREGATORS  # noqa: E402
from fedgreed.config import check_config, load_config  # noqa: E402
from fedgreed.engine import run_experiment  # noqa: E402
from fedgreed.report import render_accuracy_svg, summarize  # noqa: E402

ATTACKS = ("label_flip", "gaussian_noise")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "acceptance_blobs.toml"))
    ap.add_argument("--malicious", type=int, nargs="+", default=[3, 5, 8])
    ap.add_argument("--defenses", nargs="+", default=list(AGGREGATORS))
    ap.add_argument("--out", default="runs/table")
    args = ap.parse_args()

    cf = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for attack in ATTACKS:
        for m in args.malicious:
            curves = []
            for defense in args.defenses:
                exp = cf.experiment
                base = dataclasses.replace(
                    exp, defense=dataclasses.replace(exp.defense, kind=defense),
                    attack=dataclasses.replace(exp.attack, kind=attack, n_malicious=m, malicious=None),
                )
                if check_config(base):
                    rows.append([attack, m, defense, "n/a", "n/a"])
                    continue
                accs, per_round = [], []
                for seed in cf.seeds:
                    cfg = dataclasses.replace(base, seed=seed)
                    records = run_experiment(cfg).records
                    accs.append(summarize(records, cfg.attack.activation_round).mean_post_attack_accuracy)
                    per_round.append([r.centralized_accuracy for r in records])
                curve = np.mean(per_round, axis=0)
                curves.append((defense, range(len(curve)), curve))
                std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
                rows.append([attack, m, defense, f"{np.mean(accs):.4f}", f"{std:.4f}"])
                print(f"{attack:>15s} M={m} {defense:>12s} {np.mean(accs):.4f} +- {std:.4f}")
            if curves:
                render_accuracy_svg(curves, out / f"accuracy_{attack}_M{m}.svg",
                                    activation_round=cf.experiment.attack.activation_round,
                                    title=f"{attack}, M={m}")
    with open(out / "table.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["attack", "n_malicious", "defense", "mean_post_attack_accuracy", "std"])
        w.writerows(rows)
    print(f"wrote {out / 'table.csv'}")


if __name__ == "__main__":
    main()
