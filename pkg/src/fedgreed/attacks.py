"""Independent Byzantine behaviours: label flipping and Gaussian noise injection."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .errors import ConfigError
from .model import Dataset

AttackKind = Literal["none", "label_flip", "gaussian_noise"]

# domain tags keep the stream families of one run statistically independent
STREAM_TRAIN = 1
STREAM_NOISE = 2


def client_stream(seed: int, client_id: int, round_: int, tag: int) -> np.random.Generator:
    """Generator keyed on (seed, tag, client, round); independent of scheduling order."""
    return np.random.default_rng(np.random.SeedSequence([seed, tag, client_id, round_]))


@dataclass(frozen=True)
class AttackSpec:
    kind: AttackKind = "none"
    malicious_set: frozenset[int] = frozenset()
    activation_round: int = 10
    noise_mean: float = 0.1
    noise_variance: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "label_flip", "gaussian_noise"):
            raise ConfigError(f"unknown attack kind {self.kind!r}")
        object.__setattr__(self, "malicious_set", frozenset(int(i) for i in self.malicious_set))
        if self.activation_round < 0:
            raise ConfigError("activation_round must be non-negative")
        if not self.noise_variance > 0:
            raise ConfigError("noise_variance must be positive")

    def validate(self, n_clients: int) -> None:
        bad = [i for i in self.malicious_set if not 0 <= i < n_clients]
        if bad:
            raise ConfigError(f"malicious clients {sorted(bad)} outside 0..{n_clients - 1}")
        if len(self.malicious_set) >= n_clients:
            raise ConfigError(
                f"at-least-one-honest rule violated: |B|={len(self.malicious_set)} >= N={n_clients}"
            )

    def active(self, round_: int) -> bool:
        return self.kind != "none" and bool(self.malicious_set) and round_ >= self.activation_round

    def is_attacking(self, client_id: int, round_: int) -> bool:
        return self.active(round_) and client_id in self.malicious_set


def sample_malicious_set(n_clients: int, n_malicious: int, seed: int) -> frozenset[int]:
    if not 0 <= n_malicious < n_clients:
        raise ConfigError(
            f"at-least-one-honest rule violated: {n_malicious} malicious of {n_clients} clients"
        )
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x4D414C]))
    return frozenset(int(i) for i in rng.choice(n_clients, size=n_malicious, replace=False))


def flip_labels(data: Dataset) -> Dataset:
    """Map every label c to C - c - 1."""
    return data.with_labels(data.num_classes - 1 - data.labels)


def add_gaussian_noise(update: np.ndarray, mu: float, variance: float,
                       stream: np.random.Generator) -> np.ndarray:
    if not variance > 0:
        raise ConfigError("noise variance must be positive")
    update = np.asarray(update, dtype=np.float64)
    return update + stream.normal(mu, np.sqrt(variance), size=update.shape)


def corrupt(updates: Sequence[np.ndarray], round_: int, spec: AttackSpec,
            streams: Sequence[np.random.Generator] | None = None) -> list[np.ndarray]:
    """Apply model poisoning to the outgoing updates of active malicious clients.

    Label flipping acts on training data, so for that kind this is the identity.
    When ``streams`` is omitted they are derived from ``spec.rng_seed``.
    """
    out = list(updates)
    if spec.kind != "gaussian_noise" or not spec.active(round_):
        return out
    for i in sorted(spec.malicious_set):
        if i >= len(out):
            continue
        stream = streams[i] if streams is not None else client_stream(spec.rng_seed, i, round_, STREAM_NOISE)
        out[i] = add_gaussian_noise(out[i], spec.noise_mean, spec.noise_variance, stream)
    return out
