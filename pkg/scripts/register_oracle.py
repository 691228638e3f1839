#!/usr/bin/env python3
"""Pre-register the directional robustness margins on the fixed acceptance seeds.

Runs FedGreed and Mean on the blob harness under no attack, label flipping
and Gaussian noise, and freezes the per-seed post-attack accuracies into a
JSON file that the acceptance suite checks before asserting its thresholds.

    python scripts/register_oracle.py [--config configs/acceptance_blobs.toml]
                                      [--out tests/data/oracle_margins.json]
"""
import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from fedgreed.config import config_hash, load_config  # noqa: E402
from fedgreed.engine import run_experiment  # noqa: E402
from fedgreed.report import summarize  # noqa: E402

DEFENSES = ("fed_greed", "mean")
ATTACKS = ("none", "label_flip", "gaussian_noise")


def harness(cf, defense, attack, seed):
    exp = cf.experiment
    return dataclasses.replace(
        exp, seed=seed,
        defense=dataclasses.replace(exp.defense, kind=defense),
        attack=dataclasses.replace(exp.attack, kind=attack),
    )


def post_attack_accuracy(cfg):
    res = run_experiment(cfg)
    return summarize(res.records, cfg.attack.activation_round).mean_post_attack_accuracy


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "acceptance_blobs.toml"))
    ap.add_argument("--out", default=str(ROOT / "tests" / "data" / "oracle_margins.json"))
    args = ap.parse_args()

    cf = load_config(args.config)
    results = {}
    for attack in ATTACKS:
        for defense in DEFENSES:
            accs = [post_attack_accuracy(harness(cf, defense, attack, s)) for s in cf.seeds]
            results[f"{defense}/{attack}"] = {"per_seed": accs, "mean": float(np.mean(accs))}
            print(f"{defense:>10s} {attack:>15s} {np.round(accs, 4)} mean={np.mean(accs):.4f}")

    lf_gap = results["fed_greed/label_flip"]["mean"] - results["mean/label_flip"]["mean"]
    noise_drift = abs(results["fed_greed/gaussian_noise"]["mean"] - results["fed_greed/none"]["mean"])
    record = {
        "config_hash": config_hash(cf.experiment),
        "seeds": cf.seeds,
        "results": results,
        "label_flip_gap": lf_gap,
        "label_flip_gap_threshold": 0.15,
        "label_flip_confirmed": lf_gap >= 0.15,
        "noise_fedgreed_drift": noise_drift,
        "noise_fedgreed_drift_threshold": 0.05,
        "noise_mean_ceiling": 0.5,
        "noise_confirmed": noise_drift <= 0.05 and results["mean/gaussian_noise"]["mean"] < 0.5,
    }
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    print(f"label-flip gap {lf_gap:.4f}, noise drift {noise_drift:.4f} -> {args.out}")


if __name__ == "__main__":
    main()
