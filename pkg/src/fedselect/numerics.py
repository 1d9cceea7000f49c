"""Dense-vector models, cross-entropy, analytic gradients and momentum SGD.

Every model is stored as one flat float64 vector. Softmax regression packs
``W[num_classes, input_dim]`` then ``b[num_classes]``; the one-hidden-layer MLP
packs ``W1[hidden, input_dim]``, ``b1[hidden]``, ``W2[num_classes, hidden]``,
``b2[num_classes]``, all row-major.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

PROB_FLOOR = 1e-12
INIT_SCALE = 0.05


class DimensionError(ValueError):
    def __init__(self, what: str, expected, actual):
        super().__init__(f"{what}: expected {expected}, got {actual}")
        self.what = what
        self.expected = expected
        self.actual = actual


class EmptyDatasetWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden_dim: int
    num_classes: int

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.hidden_dim < 0:
            raise ValueError(f"hidden_dim must be >= 0, got {self.hidden_dim}")

    @property
    def param_count(self) -> int:
        d, h, c = self.input_dim, self.hidden_dim, self.num_classes
        if h == 0:
            return c * d + c
        return h * d + h + c * h + c

    def unpack(self, params: np.ndarray) -> tuple[np.ndarray, ...]:
        """Views into ``params``: (W, b) or (W1, b1, W2, b2)."""
        check_params(params, self)
        d, h, c = self.input_dim, self.hidden_dim, self.num_classes
        if h == 0:
            return params[: c * d].reshape(c, d), params[c * d :]
        o = 0
        w1 = params[o : o + h * d].reshape(h, d)
        o += h * d
        b1 = params[o : o + h]
        o += h
        w2 = params[o : o + c * h].reshape(c, h)
        o += c * h
        return w1, b1, w2, params[o:]


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    bits_per_sample: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise DimensionError("features rank", 2, self.features.ndim)
        if len(self.labels) != len(self.features):
            raise DimensionError("label count", len(self.features), len(self.labels))
        if self.bits_per_sample <= 0:
            raise ValueError(f"bits_per_sample must be > 0, got {self.bits_per_sample}")
        if len(self.labels) and self.labels.min() < 0:
            raise ValueError("labels must be non-negative class indices")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    @property
    def total_bits(self) -> int:
        return len(self) * self.bits_per_sample

    def subset(self, indices) -> LabeledDataset:
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.bits_per_sample)


@dataclass
class OptimizerState:
    velocity: np.ndarray
    learning_rate: float
    momentum: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")

    @classmethod
    def fresh(cls, n_params: int, learning_rate: float, momentum: float = 0.0) -> OptimizerState:
        return cls(np.zeros(n_params), learning_rate, momentum)


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    macro_f1: float


@dataclass
class _Cache:
    x: np.ndarray
    hidden: np.ndarray | None = field(default=None)


def check_params(params: np.ndarray, spec: ModelSpec) -> None:
    if params.ndim != 1 or params.shape[0] != spec.param_count:
        raise DimensionError("parameter vector length", spec.param_count, params.shape)


def init_params(spec: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=spec.param_count)


def _check_inputs(x: np.ndarray, spec: ModelSpec) -> None:
    if x.shape[-1] != spec.input_dim:
        raise DimensionError("input dimension", spec.input_dim, x.shape[-1])


def logits(params: np.ndarray, spec: ModelSpec, x: np.ndarray) -> tuple[np.ndarray, _Cache]:
    """Raw outputs for a batch ``x[n, input_dim]`` plus what backprop needs."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    _check_inputs(x, spec)
    if spec.hidden_dim == 0:
        w, b = spec.unpack(params)
        return x @ w.T + b, _Cache(x)
    w1, b1, w2, b2 = spec.unpack(params)
    hidden = np.tanh(x @ w1.T + b1)
    return hidden @ w2.T + b2, _Cache(x, hidden)


def backprop(params: np.ndarray, spec: ModelSpec, cache: _Cache, d_out: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. params given d(objective)/d(logits) for every row."""
    x = cache.x
    if spec.hidden_dim == 0:
        gw = d_out.T @ x
        gb = d_out.sum(axis=0)
        return np.concatenate([gw.ravel(), gb])
    _, _, w2, _ = spec.unpack(params)
    hidden = cache.hidden
    gw2 = d_out.T @ hidden
    gb2 = d_out.sum(axis=0)
    d_pre = (d_out @ w2) * (1.0 - hidden * hidden)
    gw1 = d_pre.T @ x
    gb1 = d_pre.sum(axis=0)
    return np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2])


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_proba(params: np.ndarray, spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    z, _ = logits(params, spec, x)
    return softmax(z)


def forward(params: np.ndarray, spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    """Class probabilities for a single feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("feature vector rank", 1, x.ndim)
    return predict_proba(params, spec, x)[0]


def _require_batch(batch: LabeledDataset, spec: ModelSpec) -> None:
    if len(batch) == 0:
        raise ValueError("empty batch")
    _check_inputs(batch.features, spec)
    if batch.labels.max() >= spec.num_classes:
        raise ValueError(f"label {batch.labels.max()} out of range for {spec.num_classes} classes")


def loss(params: np.ndarray, spec: ModelSpec, batch: LabeledDataset) -> float:
    """Mean cross-entropy over the batch."""
    _require_batch(batch, spec)
    p = predict_proba(params, spec, batch.features)
    p_true = p[np.arange(len(batch)), batch.labels]
    return float(-np.mean(np.log(np.maximum(p_true, PROB_FLOOR))))


def grad(params: np.ndarray, spec: ModelSpec, batch: LabeledDataset) -> np.ndarray:
    _require_batch(batch, spec)
    z, cache = logits(params, spec, batch.features)
    d_out = softmax(z)
    d_out[np.arange(len(batch)), batch.labels] -= 1.0
    d_out /= len(batch)
    return backprop(params, spec, cache, d_out)


def sgd_step(
    params: np.ndarray, g: np.ndarray, opt: OptimizerState
) -> tuple[np.ndarray, OptimizerState]:
    if params.shape != g.shape or g.shape != opt.velocity.shape:
        raise DimensionError("sgd vector lengths", params.shape, (g.shape, opt.velocity.shape))
    v = opt.momentum * opt.velocity + g
    return params - opt.learning_rate * v, OptimizerState(v, opt.learning_rate, opt.momentum)


def local_train(
    params: np.ndarray,
    spec: ModelSpec,
    data: LabeledDataset,
    epochs: int,
    batch_size: int,
    opt: OptimizerState,
    rng: np.random.Generator,
) -> np.ndarray:
    """Mini-batch momentum SGD; indices are reshuffled once per epoch."""
    if epochs < 1 or batch_size < 1:
        raise ValueError(f"epochs and batch_size must be >= 1, got {epochs}, {batch_size}")
    check_params(params, spec)
    if len(data) == 0:
        warnings.warn("local_train called with an empty dataset", EmptyDatasetWarning, stacklevel=2)
        return params.copy()
    n = len(data)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            # sorted so a full batch is computed exactly like the unshuffled set
            idx = np.sort(order[start : start + batch_size])
            g = grad(params, spec, data.subset(idx))
            params, opt = sgd_step(params, g, opt)
    if not np.all(np.isfinite(params)):
        raise FloatingPointError("local training produced non-finite parameters")
    return params


def predict(params: np.ndarray, spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    z, _ = logits(params, spec, x)
    return np.argmax(z, axis=1)


def classification_metrics(y_true: np.ndarray, y_pred: np.ndarray) -> Metrics:
    """Accuracy and macro-F1 over the union of labels seen in either array."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) == 0:
        raise ValueError("cannot score an empty dataset")
    accuracy = float(np.mean(y_true == y_pred))
    f1s = []
    for c in np.union1d(y_true, y_pred):
        tp = np.sum((y_pred == c) & (y_true == c))
        fp = np.sum((y_pred == c) & (y_true != c))
        fn = np.sum((y_pred != c) & (y_true == c))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    return Metrics(accuracy, float(np.mean(f1s)))


def evaluate(params: np.ndarray, spec: ModelSpec, data: LabeledDataset) -> Metrics:
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return classification_metrics(data.labels, predict(params, spec, data.features))
