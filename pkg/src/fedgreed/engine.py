"""The federated training loop: broadcast, local training, attack, aggregate, evaluate."""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .aggregation import AggregatorSpec, GreedyTrace, aggregate
from .attacks import (STREAM_NOISE, STREAM_TRAIN, AttackSpec, client_stream, corrupt,
                      flip_labels, sample_malicious_set)
from .config import ExperimentConfig, check_config
from .data import dirichlet_partition, load_idx, split_server_set, synthetic_blobs
from .errors import ConfigError, InvalidInputError
from .model import Dataset, LossOracle, OptimizerState

# tags for deriving independent seeds from the run seed
_SEED_TRAIN_POOL, _SEED_SERVER_POOL, _SEED_PARTITION, _SEED_SPLIT, _SEED_INIT, _SEED_TRUSTED = range(1, 7)


def derive_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1, dtype=np.uint64)[0] >> 1)


def local_train(client_data: Dataset, global_params: np.ndarray, oracle: LossOracle,
                opt_template: OptimizerState, local_steps: int, batch_size: int,
                stream: np.random.Generator) -> np.ndarray:
    """Run ``local_steps`` mini-batch steps from ``global_params`` with a fresh optimizer.

    Batches are drawn without replacement from a seeded shuffle, reshuffling
    when an epoch is exhausted.  ``batch_size`` is clamped to the data size.
    """
    n = len(client_data)
    if n == 0:
        raise InvalidInputError("client dataset is empty")
    if local_steps < 1:
        raise ConfigError("local_steps must be >= 1")
    batch = min(batch_size, n)
    opt = opt_template.fresh()
    params = np.array(global_params, dtype=np.float64)
    order = stream.permutation(n)
    pos = 0
    for _ in range(local_steps):
        if pos + batch > n:
            order = stream.permutation(n)
            pos = 0
        idx = order[pos:pos + batch]
        pos += batch
        params = opt.step(params, oracle.gradient(params, client_data.subset(idx)))
    return params


@dataclass
class RoundRecord:
    round: int
    client_losses: list[float]
    centralized_accuracy: float
    server_eval_loss: float
    attacked: bool
    trace: GreedyTrace | None = None
    notes: list[str] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def stop_j(self) -> int | None:
        return None if self.trace is None else self.trace.stop_j


@dataclass
class ExperimentResult:
    records: list[RoundRecord]
    params: np.ndarray
    warnings: list[str]


def _load_pools(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    d = cfg.data
    data_seed = cfg.seed if d.seed is None else d.seed
    if d.source == "blobs":
        train = synthetic_blobs(d.n_train, d.n_features, d.n_classes, d.separation,
                                derive_seed(data_seed, _SEED_TRAIN_POOL))
        server = synthetic_blobs(d.n_server, d.n_features, d.n_classes, d.separation,
                                 derive_seed(data_seed, _SEED_SERVER_POOL))
        return train, server
    train = load_idx(d.train_images, d.train_labels)
    server = load_idx(d.test_images, d.test_labels)
    num_classes = max(train.num_classes, server.num_classes)
    train = Dataset(train.features, train.labels, num_classes)
    server = Dataset(server.features, server.labels, num_classes)
    rng = np.random.default_rng(derive_seed(data_seed, _SEED_TRAIN_POOL))
    if d.train_limit is not None and d.train_limit < len(train):
        train = train.subset(np.sort(rng.permutation(len(train))[:d.train_limit]))
    if d.server_limit is not None and d.server_limit < len(server):
        server = server.subset(np.sort(rng.permutation(len(server))[:d.server_limit]))
    return train, server


class Experiment:
    """Mutable state of one simulation.  Build once, then call :meth:`run_round` per round."""

    def __init__(self, cfg: ExperimentConfig):
        problems = check_config(cfg)
        if problems:
            raise ConfigError("; ".join(problems))
        self.cfg = cfg
        self.warnings: list[str] = []
        train, server = _load_pools(cfg)
        data_seed = cfg.seed if cfg.data.seed is None else cfg.data.seed

        trusted = None
        if cfg.include_trusted_client:
            take = min(cfg.data.n_trusted, len(train) - cfg.n_clients)
            if take < 1:
                raise ConfigError("data: training pool too small to carve a trusted shard")
            perm = np.random.default_rng(derive_seed(data_seed, _SEED_TRUSTED)).permutation(len(train))
            trusted = train.subset(np.sort(perm[:take]))
            train = train.subset(np.sort(perm[take:]))

        self.partition = dirichlet_partition(train, cfg.n_clients, cfg.data.alpha,
                                             derive_seed(data_seed, _SEED_PARTITION))
        self.train_pool = train
        self.client_data = [train.subset(idx) for idx in self.partition.assignments]
        if trusted is not None:
            self.client_data.append(trusted)
        self.split = split_server_set(server, derive_seed(data_seed, _SEED_SPLIT))

        m = cfg.model
        self.oracle = LossOracle(train.n_features, train.num_classes, m.kind, m.hidden, m.l2)
        o = cfg.optimizer
        self.opt_template = OptimizerState(o.kind, o.lr, o.beta1, o.beta2, o.eps)

        a = cfg.attack
        if a.kind == "none":
            malicious = frozenset()
        elif a.malicious is not None:
            malicious = frozenset(a.malicious)
        else:
            malicious = sample_malicious_set(cfg.n_clients, a.n_malicious, cfg.seed)
        self.attack = AttackSpec(a.kind, malicious, a.activation_round, a.noise_mean,
                                 a.noise_variance, cfg.seed)
        self.attack.validate(cfg.n_clients)
        self.flipped = {i: flip_labels(self.client_data[i]) for i in sorted(malicious)
                        if a.kind == "label_flip"}

        d = cfg.defense
        self.aggregator = AggregatorSpec(d.kind, d.beta, cfg.f_max, cfg.k_select, d.k_cap)
        self.warnings.extend(self.aggregator.validate(len(self.client_data)))
        small = [i for i, ds in enumerate(self.client_data) if len(ds) < cfg.batch_size]
        if small:
            self.warnings.append(f"batch_size {cfg.batch_size} clamped to local data size for clients {small}")

        init_rng = np.random.default_rng(derive_seed(cfg.seed, _SEED_INIT))
        self.params = self.oracle.init_params(init_rng, m.init_std)
        self.records: list[RoundRecord] = []

    @property
    def n_participants(self) -> int:
        return len(self.client_data)

    def server_loss(self, x: np.ndarray) -> float:
        return self.oracle.loss(x, self.split.selection_set)

    def _train_client(self, i: int, t: int) -> np.ndarray:
        data = self.flipped[i] if i in self.flipped and self.attack.is_attacking(i, t) else self.client_data[i]
        stream = client_stream(self.cfg.seed, i, t, STREAM_TRAIN)
        return local_train(data, self.params, self.oracle, self.opt_template,
                           self.cfg.local_steps, self.cfg.batch_size, stream)

    def local_models(self, t: int) -> list[np.ndarray]:
        ids = range(self.n_participants)
        if self.cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.workers) as pool:
                return list(pool.map(lambda i: self._train_client(i, t), ids))
        return [self._train_client(i, t) for i in ids]

    def run_round(self, t: int) -> RoundRecord:
        start = time.perf_counter()
        local = self.local_models(t)
        streams = [client_stream(self.cfg.seed, i, t, STREAM_NOISE) for i in range(self.n_participants)]
        submitted = corrupt(local, t, self.attack, streams)
        losses = [self.server_loss(x) for x in submitted]
        weights = [len(ds) for ds in self.client_data]
        try:
            result = aggregate(self.aggregator, submitted, weights, self.server_loss, losses)
        except ConfigError as exc:
            raise ConfigError(f"aggregator {self.aggregator.kind}: {exc}") from None
        self.params = result.params
        ev = self.split.evaluation_set
        record = RoundRecord(
            round=t,
            client_losses=[float(v) for v in losses],
            centralized_accuracy=self.oracle.accuracy(self.params, ev),
            server_eval_loss=self.oracle.loss(self.params, ev),
            attacked=self.attack.active(t),
            trace=result.trace,
            notes=result.notes,
            wall_time=time.perf_counter() - start,
        )
        self.records.append(record)
        return record

    def run(self) -> ExperimentResult:
        for t in range(len(self.records), self.cfg.rounds):
            self.run_round(t)
        return ExperimentResult(self.records, self.params, self.warnings)


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    return Experiment(cfg).run()
