"""Flat-vector models with hand-written backprop, plus SGD and Adam.

Every model is parameterised by one flat float64 vector so that the
aggregation rules never need to know the architecture.  Two models are
provided: multinomial softmax regression and a one-hidden-layer tanh MLP.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from .errors import ConfigError, InvalidInputError

ModelKind = Literal["softmax_regression", "mlp_1hidden"]


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise InvalidInputError(f"features must be 2-D, got shape {features.shape}")
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise InvalidInputError(
                f"{labels.shape[0] if labels.ndim == 1 else labels.shape} labels "
                f"for {features.shape[0]} feature rows"
            )
        if self.num_classes < 1:
            raise InvalidInputError("num_classes must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise InvalidInputError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)

    def with_labels(self, labels) -> "Dataset":
        return Dataset(self.features, labels, self.num_classes)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class LossOracle:
    """Mean cross-entropy of a model over a dataset, plus ``0.5 * l2 * |x|^2``."""

    n_features: int
    n_classes: int
    model_kind: ModelKind = "softmax_regression"
    hidden: int = 0
    l2: float = 0.0

    def __post_init__(self):
        if self.model_kind not in ("softmax_regression", "mlp_1hidden"):
            raise ConfigError(f"unknown model_kind {self.model_kind!r}")
        if self.n_features < 1 or self.n_classes < 1:
            raise ConfigError("n_features and n_classes must be positive")
        if self.model_kind == "mlp_1hidden" and self.hidden < 1:
            raise ConfigError("mlp_1hidden needs hidden >= 1")
        if self.l2 < 0:
            raise ConfigError("l2 must be non-negative")

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        f, c, h = self.n_features, self.n_classes, self.hidden
        if self.model_kind == "softmax_regression":
            return [(c, f), (c,)]
        return [(h, f), (h,), (c, h), (c,)]

    @property
    def dim(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes)

    def unpack(self, params: np.ndarray) -> list[np.ndarray]:
        out, pos = [], 0
        for shape in self.shapes:
            size = int(np.prod(shape))
            out.append(params[pos:pos + size].reshape(shape))
            pos += size
        return out

    def init_params(self, rng: np.random.Generator, std: float = 0.1) -> np.ndarray:
        return rng.normal(0.0, std, size=self.dim)

    def _check(self, params, data: Dataset) -> np.ndarray:
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.dim,):
            raise ConfigError(f"parameter vector has shape {params.shape}, model expects ({self.dim},)")
        if len(data) == 0:
            raise InvalidInputError("dataset is empty")
        if data.n_features != self.n_features:
            raise ConfigError(f"dataset has {data.n_features} features, model expects {self.n_features}")
        if data.num_classes > self.n_classes:
            raise ConfigError(f"dataset has {data.num_classes} classes, model has {self.n_classes}")
        return params

    def _forward(self, params: np.ndarray, x: np.ndarray):
        parts = self.unpack(params)
        if self.model_kind == "softmax_regression":
            w, b = parts
            return x @ w.T + b, None
        w1, b1, w2, b2 = parts
        hidden = np.tanh(x @ w1.T + b1)
        return hidden @ w2.T + b2, hidden

    def logits(self, params, data: Dataset) -> np.ndarray:
        params = self._check(params, data)
        with np.errstate(all="ignore"):
            return self._forward(params, data.features)[0]

    def loss(self, params, data: Dataset) -> float:
        params = self._check(params, data)
        with np.errstate(all="ignore"):
            z, _ = self._forward(params, data.features)
            zmax = z.max(axis=1, keepdims=True)
            lse = np.log(np.exp(z - zmax).sum(axis=1)) + zmax[:, 0]
            nll = lse - z[np.arange(len(data)), data.labels]
            value = float(nll.mean())
            if self.l2:
                value += 0.5 * self.l2 * float(params @ params)
        return value

    def gradient(self, params, data: Dataset) -> np.ndarray:
        params = self._check(params, data)
        x, n = data.features, len(data)
        with np.errstate(all="ignore"):
            z, hidden = self._forward(params, x)
            z = z - z.max(axis=1, keepdims=True)
            prob = np.exp(z)
            prob /= prob.sum(axis=1, keepdims=True)
            prob[np.arange(n), data.labels] -= 1.0
            g = prob / n
            if self.model_kind == "softmax_regression":
                grads = [g.T @ x, g.sum(axis=0)]
            else:
                _, _, w2, _ = self.unpack(params)
                dz = (g @ w2) * (1.0 - hidden ** 2)
                grads = [dz.T @ x, dz.sum(axis=0), g.T @ hidden, g.sum(axis=0)]
            flat = np.concatenate([gr.ravel() for gr in grads])
            if self.l2:
                flat += self.l2 * params
        return flat

    def predict(self, params, data: Dataset) -> np.ndarray:
        # np.argmax returns the first maximum, i.e. ties go to the lowest class
        return np.argmax(self.logits(params, data), axis=1)

    def accuracy(self, params, data: Dataset) -> float:
        return float(np.mean(self.predict(params, data) == data.labels))


def loss(oracle: LossOracle, params, data: Dataset) -> float:
    return oracle.loss(params, data)


def gradient(oracle: LossOracle, params, data: Dataset) -> np.ndarray:
    return oracle.gradient(params, data)


def predict_accuracy(oracle: LossOracle, params, data: Dataset) -> float:
    return oracle.accuracy(params, data)


@dataclass
class OptimizerState:
    """Local optimizer.  ``m``/``v`` are lazily zero-initialised on the first step."""

    kind: Literal["sgd", "adam"] = "adam"
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)
    step_count: int = 0

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer kind {self.kind!r}")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be non-negative")

    def fresh(self) -> "OptimizerState":
        """Same hyperparameters, zeroed moments and step counter."""
        return replace(self, m=None, v=None, step_count=0)

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        params = np.asarray(params, dtype=np.float64)
        grad = np.asarray(grad, dtype=np.float64)
        if params.shape != grad.shape:
            raise ConfigError(f"gradient shape {grad.shape} does not match params {params.shape}")
        self.step_count += 1
        if self.kind == "sgd":
            return params - self.learning_rate * grad
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        elif self.m.shape != params.shape:
            raise ConfigError("optimizer moments do not match parameter shape")
        with np.errstate(all="ignore"):
            self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
            self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
            m_hat = self.m / (1.0 - self.beta1 ** self.step_count)
            v_hat = self.v / (1.0 - self.beta2 ** self.step_count)
            return params - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def optimizer_step(state: OptimizerState, params, grad) -> np.ndarray:
    return state.step(params, grad)
