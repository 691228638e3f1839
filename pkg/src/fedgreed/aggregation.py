"""Server-side aggregation rules.

All rules take a list of flat client vectors (``x_hat_i``) and return one
vector.  ``fed_greed`` additionally needs the server's trusted loss and
returns a :class:`GreedyTrace` describing the greedy prefix search.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np

from .errors import ConfigError, InvalidInputError

AggregatorKind = Literal["mean", "trimmed_mean", "median", "krum", "multi_krum", "fed_greed"]
AGGREGATORS = ("mean", "trimmed_mean", "median", "krum", "multi_krum", "fed_greed")


def _stack(updates) -> np.ndarray:
    if len(updates) == 0:
        raise InvalidInputError("no client updates to aggregate")
    try:
        arr = np.stack([np.asarray(u, dtype=np.float64) for u in updates])
    except ValueError as exc:
        raise InvalidInputError(f"client updates have mismatched shapes: {exc}") from None
    if arr.ndim != 2:
        raise InvalidInputError("client updates must be flat vectors")
    return arr


def mean_weighted(updates, weights=None) -> np.ndarray:
    arr = _stack(updates)
    w = np.ones(arr.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (arr.shape[0],):
        raise InvalidInputError(f"{w.size} weights for {arr.shape[0]} updates")
    if np.any(w < 0) or not w.sum() > 0:
        raise InvalidInputError("weights must be non-negative with a positive sum")
    return (w @ arr) / w.sum()


def trim_count(n: int, beta: float) -> int:
    if not 0 <= beta < 0.5:
        raise ConfigError(f"trimmed_mean beta={beta} outside [0, 0.5)")
    m = math.floor(beta * n)
    if n - 2 * m < 1:
        raise ConfigError(f"trimmed_mean trims every value: N={n}, beta={beta}")
    return m


def trimmed_mean(updates, beta: float) -> np.ndarray:
    arr = _stack(updates)
    m = trim_count(arr.shape[0], beta)
    if m == 0:
        return mean_weighted(arr)
    return np.sort(arr, axis=0)[m:arr.shape[0] - m].mean(axis=0)


def coordinate_median(updates) -> np.ndarray:
    return np.median(_stack(updates), axis=0)


def krum_neighbours(n: int, f_max: int) -> int:
    if f_max < 0:
        raise ConfigError("krum f_max must be non-negative")
    if n < f_max + 3:
        raise ConfigError(f"krum: N >= f+3 violated (N={n}, f={f_max})")
    return n - f_max - 2


def krum_scores(updates, f_max: int) -> np.ndarray:
    """Sum of squared distances from each update to its N-f-2 nearest peers."""
    arr = _stack(updates)
    k = krum_neighbours(arr.shape[0], f_max)
    with np.errstate(all="ignore"):
        diff = arr[:, None, :] - arr[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
    d2[~np.isfinite(d2)] = np.inf
    np.fill_diagonal(d2, np.inf)
    return np.sort(d2, axis=1)[:, :k].sum(axis=1)


def _score_order(scores: np.ndarray) -> np.ndarray:
    # stable sort: equal scores keep ascending client index
    return np.argsort(np.where(np.isnan(scores), np.inf, scores), kind="stable")


def krum_select(updates, f_max: int) -> np.ndarray:
    arr = _stack(updates)
    return arr[_score_order(krum_scores(arr, f_max))[0]].copy()


def multi_krum_count(n: int, f_max: int, k_select: int) -> tuple[int, str | None]:
    """Effective selection count and a warning message when it had to be clamped."""
    if k_select < 1:
        raise ConfigError("multi_krum k_select must be >= 1")
    limit = krum_neighbours(n, f_max)
    if k_select > limit:
        k = max(1, limit)
        return k, f"multi_krum k_select={k_select} exceeds N-f-2={limit}; clamped to {k}"
    return k_select, None


def multi_krum(updates, f_max: int, k_select: int) -> np.ndarray:
    arr = _stack(updates)
    k, note = multi_krum_count(arr.shape[0], f_max, k_select)
    if note:
        warnings.warn(note, stacklevel=2)
    chosen = _score_order(krum_scores(arr, f_max))[:k]
    return arr[chosen].mean(axis=0)


@dataclass
class GreedyTrace:
    sorted_client_ids: list[int]
    losses: list[float]
    stop_j: int
    candidate_losses: list[float]
    rejected_loss: float | None = None


def _as_loss(value) -> float:
    value = float(value)
    return value if math.isfinite(value) else math.inf


def fed_greed(updates, server_loss: Callable[[np.ndarray], float],
              k_cap: int | None = None,
              losses: Sequence[float] | None = None) -> tuple[np.ndarray, GreedyTrace]:
    """Greedy loss-ordered prefix averaging.

    Clients are ranked by ``server_loss`` of their model (non-finite losses
    rank last, ties by client id).  Starting from the best single model, the
    next-ranked model is folded into the running average for as long as
    that strictly lowers the server loss, considering at most ``k_cap``
    models.  ``losses`` may carry precomputed per-client values.
    """
    arr = _stack(updates)
    n = arr.shape[0]
    cap = n if k_cap is None else int(k_cap)
    if not 1 <= cap:
        raise ConfigError(f"fed_greed k_cap={k_cap} must be >= 1")
    cap = min(cap, n)
    if losses is None:
        v = [_as_loss(server_loss(x)) for x in arr]
    else:
        if len(losses) != n:
            raise InvalidInputError(f"{len(losses)} losses for {n} updates")
        v = [_as_loss(x) for x in losses]
    order = sorted(range(n), key=lambda i: (v[i], i))

    x_aux = arr[order[0]].copy()
    f_aux = v[order[0]]
    accepted = [f_aux]
    rejected = None
    j = 2
    while j <= cap:
        x_test = ((j - 1) / j) * x_aux + (1.0 / j) * arr[order[j - 1]]
        f_test = _as_loss(server_loss(x_test))
        if f_test >= f_aux:
            rejected = f_test
            break
        x_aux, f_aux = x_test, f_test
        accepted.append(f_test)
        j += 1
    trace = GreedyTrace(
        sorted_client_ids=order,
        losses=[v[i] for i in order],
        stop_j=len(accepted),
        candidate_losses=accepted,
        rejected_loss=rejected,
    )
    return x_aux, trace


@dataclass(frozen=True)
class AggregatorSpec:
    kind: AggregatorKind = "fed_greed"
    beta: float = 0.2
    f_max: int = 0
    k_select: int = 1
    k_cap: int | None = None

    def __post_init__(self):
        if self.kind not in AGGREGATORS:
            raise ConfigError(f"unknown aggregator {self.kind!r}; expected one of {AGGREGATORS}")

    def validate(self, n: int) -> list[str]:
        """Raise on violated preconditions for ``n`` updates; return soft warnings."""
        notes = []
        if self.kind == "trimmed_mean":
            trim_count(n, self.beta)
        elif self.kind == "krum":
            krum_neighbours(n, self.f_max)
        elif self.kind == "multi_krum":
            _, note = multi_krum_count(n, self.f_max, self.k_select)
            if note:
                notes.append(note)
        elif self.kind == "fed_greed" and self.k_cap is not None and not 1 <= self.k_cap <= n:
            raise ConfigError(f"fed_greed k_cap={self.k_cap} outside [1, N={n}]")
        return notes


@dataclass
class AggregateResult:
    params: np.ndarray
    trace: GreedyTrace | None = None
    notes: list[str] = field(default_factory=list)


def aggregate(spec: AggregatorSpec, updates, weights=None,
              server_loss: Callable[[np.ndarray], float] | None = None,
              losses: Sequence[float] | None = None) -> AggregateResult:
    """Dispatch to the rule named by ``spec``."""
    n = len(updates)
    notes = spec.validate(n)
    if spec.kind == "mean":
        return AggregateResult(mean_weighted(updates, weights), notes=notes)
    if spec.kind == "trimmed_mean":
        return AggregateResult(trimmed_mean(updates, spec.beta), notes=notes)
    if spec.kind == "median":
        return AggregateResult(coordinate_median(updates), notes=notes)
    if spec.kind == "krum":
        return AggregateResult(krum_select(updates, spec.f_max), notes=notes)
    if spec.kind == "multi_krum":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return AggregateResult(multi_krum(updates, spec.f_max, spec.k_select), notes=notes)
    if server_loss is None:
        raise ConfigError("fed_greed needs a server loss evaluator")
    params, trace = fed_greed(updates, server_loss, spec.k_cap, losses=losses)
    return AggregateResult(params, trace, notes)
