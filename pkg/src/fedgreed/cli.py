"""Command-line entry point: ``fedgreed {run,sweep,validate,report}``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .config import (ConfigFile, ExperimentConfig, check_config, config_from_dict, config_hash,
                     effective_config, load_config)
from .engine import Experiment
from .errors import ConfigError, FedGreedError
from .report import (RunSummary, combine_summaries, read_round_csv, read_summary,
                     render_accuracy_svg, render_partition_svg, summarize, write_round_csv,
                     write_summary)

OUTPUT_ROOT_ENV = "FEDGREED_OUTPUT_ROOT"


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_overrides(cf: ConfigFile, args) -> ConfigFile:
    raw = effective_config(cf)
    sets = list(getattr(args, "set", None) or [])
    shortcuts = {
        "defense": "defense.kind", "attack": "attack.kind", "malicious": "attack.n_malicious",
        "alpha": "data.alpha", "rounds": "rounds", "workers": "workers", "clients": "n_clients",
    }
    for flag, key in shortcuts.items():
        value = getattr(args, flag, None)
        if value is not None:
            sets.append(f"{key}={json.dumps(value)}")
    for item in sets:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        target = raw
        *parents, leaf = key.strip().split(".")
        for p in parents:
            if not isinstance(target.get(p), dict):
                raise ConfigError(f"unknown config key {key!r}")
            target = target[p]
        if leaf not in target:
            raise ConfigError(f"unknown config key {key!r}")
        target[leaf] = _parse_value(value)
    if getattr(args, "seed", None):
        raw["seeds"] = list(args.seed)
    if getattr(args, "out", None):
        raw["output_dir"] = args.out
    elif os.environ.get(OUTPUT_ROOT_ENV) and not Path(raw["output_dir"]).is_absolute():
        raw["output_dir"] = str(Path(os.environ[OUTPUT_ROOT_ENV]) / raw["output_dir"])
    return config_from_dict(raw)


def _load(args) -> ConfigFile:
    cf = load_config(args.config) if args.config else ConfigFile()
    return _apply_overrides(cf, args)


def run_seed(cfg: ExperimentConfig, out_dir: Path) -> RunSummary:
    """One simulation; writes round/summary/accuracy/partition artifacts tagged with the seed."""
    exp = Experiment(cfg)
    result = exp.run()
    s = cfg.seed
    write_round_csv(result.records, out_dir / f"round_s{s}.csv")
    summary = summarize(result.records, cfg.attack.activation_round, config_hash(cfg), result.warnings)
    notes = sorted({n for r in result.records for n in r.notes})
    summary.warnings.extend(notes)
    write_summary(summary, out_dir / f"summary_s{s}.json")
    rounds = [r.round for r in result.records]
    accs = [r.centralized_accuracy for r in result.records]
    activation = cfg.attack.activation_round if cfg.attack.kind != "none" else None
    render_accuracy_svg([(cfg.defense.kind, rounds, accs)], out_dir / f"accuracy_s{s}.svg",
                        activation_round=activation)
    render_partition_svg(exp.partition, exp.train_pool, out_dir / f"partition_s{s}.svg")
    return summary


def _echo(cf: ConfigFile, out_dir: Path) -> None:
    text = json.dumps(effective_config(cf), indent=2, sort_keys=True) + "\n"
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "effective_config.json").write_text(text)
    sys.stdout.write(text)


def cmd_run(args) -> int:
    cf = _load(args)
    problems = check_config(cf.experiment)
    if problems:
        for p in problems:
            print(f"error: {p}", file=sys.stderr)
        return 2
    out_dir = Path(cf.output_dir)
    _echo(cf, out_dir)
    for seed in cf.seeds:
        run_seed(dataclasses.replace(cf.experiment, seed=seed), out_dir)
    return 0


def cmd_sweep(args) -> int:
    cf = _load(args)
    if len(set(cf.seeds)) != len(cf.seeds):
        print(f"error: duplicate seeds in {cf.seeds}", file=sys.stderr)
        return 2
    problems = check_config(cf.experiment)
    if problems:
        for p in problems:
            print(f"error: {p}", file=sys.stderr)
        return 2
    out_dir = Path(cf.output_dir)
    _echo(cf, out_dir)
    summaries, labels, failed = [], [], []
    series = []
    for seed in cf.seeds:
        try:
            summary = run_seed(dataclasses.replace(cf.experiment, seed=seed), out_dir)
        except (FedGreedError, OSError) as exc:
            failed.append(seed)
            print(f"seed {seed}: FAILED ({exc})", file=sys.stderr)
            continue
        print(f"seed {seed}: ok mean_post_attack_accuracy={summary.mean_post_attack_accuracy:.6f}",
              file=sys.stderr)
        summaries.append(summary)
        labels.append(seed)
        rows = read_round_csv(out_dir / f"round_s{seed}.csv")
        series.append((f"seed {seed}", [r["round"] for r in rows], [r["accuracy"] for r in rows]))
    if summaries:
        combined = combine_summaries(summaries, labels)
        combined["failed_seeds"] = failed
        (out_dir / "combined_summary.json").write_text(json.dumps(combined, indent=2, sort_keys=True) + "\n")
        activation = cf.experiment.attack.activation_round if cf.experiment.attack.kind != "none" else None
        render_accuracy_svg(series, out_dir / "accuracy_combined.svg", activation_round=activation,
                            title=f"Centralized accuracy ({cf.experiment.defense.kind})")
    return 1 if failed else 0


def cmd_validate(args) -> int:
    cf = _load(args)
    problems = check_config(cf.experiment)
    if len(set(cf.seeds)) != len(cf.seeds):
        problems.append(f"cli-config: duplicate seeds {cf.seeds}")
    if problems:
        for p in problems:
            print(f"invalid: {p}")
        return 1
    print("ok")
    return 0


def cmd_report(args) -> int:
    paths = []
    for p in map(Path, args.summaries):
        if p.is_dir():
            paths.extend(sorted(p.glob("summary_s*.json")))
        else:
            paths.append(p)
    if not paths:
        print("error: no summary files found", file=sys.stderr)
        return 2
    combined = combine_summaries([read_summary(p) for p in paths], [p.name for p in paths])
    text = json.dumps(combined, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML (or effective-config JSON) experiment file")
    p.add_argument("--seed", type=int, action="append", help="seed to run; repeatable, replaces config seeds")
    p.add_argument("--out", help="output directory (overrides config and $%s)" % OUTPUT_ROOT_ENV)
    p.add_argument("--defense", choices=["mean", "trimmed_mean", "median", "krum", "multi_krum", "fed_greed"])
    p.add_argument("--attack", choices=["none", "label_flip", "gaussian_noise"])
    p.add_argument("--malicious", type=int, help="number of malicious clients")
    p.add_argument("--alpha", type=float, help="Dirichlet concentration")
    p.add_argument("--rounds", type=int)
    p.add_argument("--clients", type=int)
    p.add_argument("--workers", type=int, help="threads for client-parallel local training")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key, e.g. optimizer.lr=0.01")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedgreed", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, help_ in [
        ("run", cmd_run, "run one simulation per seed"),
        ("sweep", cmd_sweep, "run all seeds and combine their summaries"),
        ("validate", cmd_validate, "check configuration preconditions without training"),
    ]:
        p = sub.add_parser(name, help=help_)
        _add_config_args(p)
        p.set_defaults(func=fn)
    p = sub.add_parser("report", help="combine existing summary JSON files")
    p.add_argument("summaries", nargs="+", help="summary files or directories containing summary_s*.json")
    p.add_argument("--out", help="write the combined JSON here as well")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FedGreedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
