"""Experiment configuration schema, TOML/JSON loading and validation.

A config file is flat ``key = value`` pairs for the run itself plus one
table each for ``[data]``, ``[model]``, ``[optimizer]``, ``[attack]`` and
``[defense]``.  Unknown keys are rejected; every default is materialised in
:func:`effective_config`, whose JSON form reproduces the run exactly.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .aggregation import AGGREGATORS, krum_neighbours, multi_krum_count, trim_count
from .errors import ConfigError


@dataclass
class DataConfig:
    source: str = "blobs"            # "blobs" | "idx"
    alpha: float = 1.0               # Dirichlet concentration
    seed: int | None = None          # None: follow the run seed
    n_train: int = 2000
    n_server: int = 400
    n_features: int = 20
    n_classes: int = 10
    separation: float = 4.0
    n_trusted: int = 200             # server-held shard for the trusted client
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    train_limit: int | None = None   # subsample idx pools for speed
    server_limit: int | None = None


@dataclass
class ModelConfig:
    kind: str = "softmax_regression"
    hidden: int = 0
    l2: float = 0.0
    init_std: float = 0.1


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AttackConfig:
    kind: str = "none"
    n_malicious: int = 0
    malicious: list[int] | None = None    # explicit client ids override sampling
    activation_round: int = 10
    noise_mean: float = 0.1
    noise_variance: float = 0.1


@dataclass
class DefenseConfig:
    kind: str = "fed_greed"
    beta: float = 0.2
    f_max: int | None = None      # None: number of malicious clients
    k_select: int | None = None   # None: number of benign clients
    k_cap: int | None = None      # None: all clients


@dataclass
class ExperimentConfig:
    n_clients: int = 10
    rounds: int = 50
    local_steps: int = 5
    batch_size: int = 32
    seed: int = 0
    include_trusted_client: bool = False
    workers: int = 1
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    defense: DefenseConfig = field(default_factory=DefenseConfig)

    @property
    def n_malicious(self) -> int:
        a = self.attack
        if a.kind == "none":
            return 0
        return len(set(a.malicious)) if a.malicious is not None else a.n_malicious

    @property
    def n_participants(self) -> int:
        return self.n_clients + int(self.include_trusted_client)

    @property
    def f_max(self) -> int:
        return self.n_malicious if self.defense.f_max is None else self.defense.f_max

    @property
    def k_select(self) -> int:
        if self.defense.k_select is not None:
            return self.defense.k_select
        return max(1, self.n_participants - self.n_malicious)


@dataclass
class ConfigFile:
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str = "runs"


_SECTIONS = {
    "data": DataConfig,
    "model": ModelConfig,
    "optimizer": OptimizerConfig,
    "attack": AttackConfig,
    "defense": DefenseConfig,
}
_FIELD_TYPES = {
    "int": int, "float": float, "bool": bool, "str": str,
}


def _coerce(cls, name: str, value, where: str):
    """Check ``value`` against the annotation of ``cls.name``; ints widen to floats."""
    ann = {f.name: f.type for f in dataclasses.fields(cls)}[name]
    text = str(ann).replace(" ", "")
    allowed = text.split("|")
    if value is None:
        if "None" in allowed:
            return None
        raise ConfigError(f"{where}: null not allowed")
    for typ in allowed:
        if typ.startswith("list["):
            inner = _FIELD_TYPES[typ[5:-1]]
            if isinstance(value, list) and all(isinstance(v, inner) and not isinstance(v, bool) for v in value):
                return list(value)
            continue
        py = _FIELD_TYPES.get(typ)
        if py is None:
            continue
        if py is bool:
            if isinstance(value, bool):
                return value
        elif py is float:
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                return float(value)
        elif isinstance(value, py) and not isinstance(value, bool):
            return value
    raise ConfigError(f"{where}: expected {text}, got {type(value).__name__} {value!r}")


def _build(cls, raw: dict, prefix: str):
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        where = f"{prefix}{key}"
        if key not in names:
            raise ConfigError(f"unknown config key {where!r}")
        kwargs[key] = _coerce(cls, key, value, where)
    return cls(**kwargs)


def config_from_dict(raw: dict) -> ConfigFile:
    raw = dict(raw)
    top = {}
    seeds = raw.pop("seeds", None)
    output_dir = raw.pop("output_dir", None)
    sections = {}
    for key, value in raw.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {key!r} must be a table")
            sections[key] = _build(_SECTIONS[key], value, f"{key}.")
        else:
            top[key] = value
    exp_fields = {f.name for f in dataclasses.fields(ExperimentConfig)} - set(_SECTIONS)
    for key in top:
        if key not in exp_fields:
            raise ConfigError(f"unknown config key {key!r}")
    base = _build(ExperimentConfig, top, "")
    experiment = dataclasses.replace(base, **sections)
    cf = ConfigFile(experiment=experiment)
    if seeds is None and "seed" in top:
        seeds = [top["seed"]]
    if seeds is not None:
        if not isinstance(seeds, list) or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
            raise ConfigError("config key 'seeds' must be a list of integers")
        cf.seeds = list(seeds)
    if output_dir is not None:
        if not isinstance(output_dir, str):
            raise ConfigError("config key 'output_dir' must be a string")
        cf.output_dir = output_dir
    return cf


def load_config(path) -> ConfigFile:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    try:
        raw = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: cannot parse config: {exc}") from None
    try:
        return config_from_dict(raw)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def effective_config(cf: ConfigFile) -> dict[str, Any]:
    out = dataclasses.asdict(cf.experiment)
    del out["seed"]  # the seed list governs the runs
    out["seeds"] = list(cf.seeds)
    out["output_dir"] = cf.output_dir
    return out


def experiment_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    return dataclasses.asdict(cfg)


def config_hash(cfg: ExperimentConfig) -> str:
    """Short digest of every field that can change results (``workers`` cannot)."""
    d = experiment_dict(cfg)
    d.pop("workers", None)
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def check_config(cfg: ExperimentConfig) -> list[str]:
    """Dry-run precondition checks; returns human-readable violations (empty when valid).

    Each message is prefixed with the module whose rule it signals.
    """
    problems = []
    a, d = cfg.attack, cfg.defense
    if cfg.n_clients < 1:
        problems.append("fl-engine: n_clients must be >= 1")
    if cfg.rounds < 1:
        problems.append("fl-engine: rounds T >= 1 violated")
    if cfg.local_steps < 1:
        problems.append("fl-engine: local_steps R >= 1 violated")
    if cfg.batch_size < 1:
        problems.append("fl-engine: batch_size must be >= 1")
    if cfg.workers < 1:
        problems.append("fl-engine: workers must be >= 1")
    if cfg.data.source not in ("blobs", "idx"):
        problems.append(f"data: unknown source {cfg.data.source!r}")
    if not cfg.data.alpha > 0:
        problems.append("data: Dirichlet alpha must be positive")
    if cfg.data.source == "idx":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if getattr(cfg.data, key) is None:
                problems.append(f"data: idx source needs data.{key}")
    if cfg.model.kind not in ("softmax_regression", "mlp_1hidden"):
        problems.append(f"model-core: unknown model kind {cfg.model.kind!r}")
    elif cfg.model.kind == "mlp_1hidden" and cfg.model.hidden < 1:
        problems.append("model-core: mlp_1hidden needs model.hidden >= 1")
    if cfg.optimizer.kind not in ("sgd", "adam"):
        problems.append(f"model-core: unknown optimizer {cfg.optimizer.kind!r}")
    if a.kind not in ("none", "label_flip", "gaussian_noise"):
        problems.append(f"attacks: unknown attack kind {a.kind!r}")
    if not a.noise_variance > 0:
        problems.append("attacks: noise_variance must be positive")
    if a.malicious is not None:
        bad = [i for i in a.malicious if not 0 <= i < cfg.n_clients]
        if bad:
            problems.append(f"attacks: malicious ids {bad} outside 0..{cfg.n_clients - 1}")
        if len(set(a.malicious)) != len(a.malicious):
            problems.append("attacks: duplicate malicious ids")
    if cfg.n_malicious < 0 or (cfg.n_malicious >= cfg.n_clients and cfg.n_clients >= 1):
        problems.append(
            f"attacks: at-least-one-honest rule violated (|B|={cfg.n_malicious}, N={cfg.n_clients})"
        )
    if d.kind not in AGGREGATORS:
        problems.append(f"aggregation: unknown defense {d.kind!r}")
        return problems
    n = cfg.n_participants
    try:
        if d.kind == "trimmed_mean":
            trim_count(n, d.beta)
        elif d.kind == "krum":
            krum_neighbours(n, cfg.f_max)
        elif d.kind == "multi_krum":
            multi_krum_count(n, cfg.f_max, cfg.k_select)
        elif d.kind == "fed_greed" and d.k_cap is not None and not 1 <= d.k_cap <= n:
            problems.append(f"aggregation: fed_greed k_cap={d.k_cap} outside [1, N={n}]")
    except ConfigError as exc:
        problems.append(f"aggregation: {exc}")
    return problems
