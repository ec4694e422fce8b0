"""Toy differentiable predictors with hand-written gradients.

Three model kinds share one flat parameter vector layout:

* linear regression ``f(x) = theta . x`` (no bias)
* multinomial logistic regression ``W x + b`` with ``K`` logits
* one-hidden-layer MLP ``W2 act(W1 x + b1) + b2``

All batched routines take ``X`` with one example per row and return the
mean parameter gradient plus per-row input gradients.
"""
import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInputError


class ModelKind(enum.Enum):
    LINEAR_REGRESSION = "linear"
    LOGISTIC = "logistic"
    MLP = "mlp"


class Activation(enum.Enum):
    RELU = "relu"
    SILU = "silu"


class LossName(enum.Enum):
    SQUARED_ERROR = "se"
    CROSS_ENTROPY = "ce"


@dataclass(frozen=True)
class LossKind:
    kind: LossName = LossName.CROSS_ENTROPY
    label_smoothing: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", LossName(self.kind))
        if not 0.0 <= self.label_smoothing <= 1.0:
            raise InvalidInputError(f"label smoothing must lie in [0, 1], got {self.label_smoothing}")
        if self.label_smoothing and self.kind is not LossName.CROSS_ENTROPY:
            raise InvalidInputError("label smoothing only applies to cross-entropy")


SQUARED_ERROR = LossKind(LossName.SQUARED_ERROR)
CROSS_ENTROPY = LossKind(LossName.CROSS_ENTROPY)


@dataclass(frozen=True, eq=False)
class Example:
    x: np.ndarray
    y: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64).ravel()
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("example features must be finite")
        object.__setattr__(self, "x", x)


@dataclass
class Dataset:
    """Examples stored column-wise: ``X`` is (n, d), ``y`` is (n,).

    ``K`` is the class count for classification and 0 for regression.
    """

    X: np.ndarray
    y: np.ndarray
    K: int = 0

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        if self.K:
            self.y = np.asarray(self.y).astype(np.int64).ravel()
        else:
            self.y = np.asarray(self.y, dtype=np.float64).ravel()
        if self.X.shape[0] < 1:
            raise InvalidInputError("a dataset needs at least one example")
        if self.y.shape[0] != self.X.shape[0]:
            raise InvalidInputError(f"{self.X.shape[0]} feature rows but {self.y.shape[0]} targets")
        if not np.all(np.isfinite(self.X)):
            raise InvalidInputError("features must be finite")
        if self.K and (self.y.min() < 0 or self.y.max() >= self.K):
            raise InvalidInputError(f"class indices must lie in [0, {self.K})")

    @classmethod
    def from_examples(cls, examples, K=0):
        examples = list(examples)
        if not examples:
            raise InvalidInputError("a dataset needs at least one example")
        dims = {e.x.size for e in examples}
        if len(dims) != 1:
            raise InvalidInputError(f"inconsistent feature dimensions {sorted(dims)}")
        return cls(np.stack([e.x for e in examples]), np.array([e.y for e in examples]), K)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def __len__(self):
        return self.n

    def __getitem__(self, i):
        y = int(self.y[i]) if self.K else float(self.y[i])
        return Example(self.X[i], y)

    @property
    def examples(self):
        return [self[i] for i in range(self.n)]

    def subset(self, idx):
        return Dataset(self.X[idx], self.y[idx], self.K)


@dataclass(frozen=True, eq=False)
class ToyModel:
    kind: ModelKind
    params: np.ndarray
    architecture: tuple
    activation: Activation = Activation.RELU
    _shapes: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        kind = ModelKind(self.kind)
        arch = tuple(int(a) for a in self.architecture)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "architecture", arch)
        object.__setattr__(self, "activation", Activation(self.activation))
        if kind is ModelKind.MLP:
            if len(arch) != 3:
                raise InvalidInputError("MLP architecture is (d, hidden, outputs)")
            d, h, k = arch
            shapes = ((h, d), (h,), (k, h), (k,))
        else:
            if len(arch) != 2:
                raise InvalidInputError(f"{kind.value} architecture is (d, outputs)")
            d, k = arch
            if kind is ModelKind.LINEAR_REGRESSION:
                if k != 1:
                    raise InvalidInputError("linear regression has a single output")
                shapes = ((d,),)
            else:
                shapes = ((k, d), (k,))
        object.__setattr__(self, "_shapes", shapes)
        params = np.asarray(self.params, dtype=np.float64).ravel()
        expected = sum(int(np.prod(s)) for s in shapes)
        if params.size != expected:
            raise InvalidInputError(f"expected {expected} parameters for {arch}, got {params.size}")
        object.__setattr__(self, "params", params)

    @property
    def input_dim(self):
        return self.architecture[0]

    @property
    def output_dim(self):
        return self.architecture[-1]

    @property
    def n_params(self):
        return self.params.size

    @property
    def is_classifier(self):
        return self.kind is not ModelKind.LINEAR_REGRESSION and (
            self.kind is ModelKind.LOGISTIC or self.output_dim > 1)

    @property
    def is_convex(self):
        return self.kind is not ModelKind.MLP

    def with_params(self, params):
        return replace(self, params=np.asarray(params, dtype=np.float64).copy())

    def unpack(self, params=None):
        params = self.params if params is None else params
        out, start = [], 0
        for s in self._shapes:
            size = int(np.prod(s))
            out.append(params[start:start + size].reshape(s))
            start += size
        return out

    def final_layer_slice(self):
        """Index range of the output-layer block inside ``params``."""
        if self.kind is ModelKind.MLP:
            h, d = self._shapes[0]
            return slice(h * d + h, self.params.size)
        return slice(0, self.params.size)


def init_linear_regression(d, theta=None):
    theta = np.zeros(d) if theta is None else np.asarray(theta, dtype=np.float64)
    return ToyModel(ModelKind.LINEAR_REGRESSION, theta, (d, 1))


def init_logistic(d, K, rng=None):
    """Zero-initialised (or uniform +-1/sqrt(d) when ``rng`` is given) softmax regression."""
    n = K * d + K
    if rng is None:
        params = np.zeros(n)
    else:
        params = rng.uniform(-1.0, 1.0, size=n) / np.sqrt(d)
    return ToyModel(ModelKind.LOGISTIC, params, (d, K))


def init_mlp(d, hidden, outputs, activation=Activation.RELU, rng=None):
    if rng is None:
        rng = np.random.default_rng(0)
    b1 = 1.0 / np.sqrt(d)
    b2 = 1.0 / np.sqrt(hidden)
    parts = [
        rng.uniform(-b1, b1, size=hidden * d),
        rng.uniform(-b1, b1, size=hidden),
        rng.uniform(-b2, b2, size=outputs * hidden),
        rng.uniform(-b2, b2, size=outputs),
    ]
    return ToyModel(ModelKind.MLP, np.concatenate(parts), (d, hidden, outputs), activation)


def _act(a, activation):
    if activation is Activation.RELU:
        return np.maximum(a, 0.0)
    return a * _sigmoid(a)


def _act_grad(a, activation):
    # ReLU subgradient at 0 is taken as 0.
    if activation is Activation.RELU:
        return (a > 0.0).astype(np.float64)
    s = _sigmoid(a)
    return s * (1.0 + a * (1.0 - s))


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _check_X(model, X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.input_dim:
        raise InvalidInputError(f"model expects {model.input_dim} features, got {X.shape[1]}")
    return X


def outputs(model, X):
    """Raw outputs (logits, or the regression value) with shape (n, outputs)."""
    X = _check_X(model, X)
    if model.kind is ModelKind.LINEAR_REGRESSION:
        return (X @ model.params)[:, None]
    if model.kind is ModelKind.LOGISTIC:
        W, b = model.unpack()
        return X @ W.T + b
    W1, b1, W2, b2 = model.unpack()
    return _act(X @ W1.T + b1, model.activation) @ W2.T + b2


def predict(model, X):
    """Class predictions by argmax of logits; ties go to the lowest index."""
    return np.argmax(outputs(model, X), axis=1)


def smooth_labels(y, K, gamma):
    """Soft label: ``1 - gamma`` on the true class, ``gamma / (K - 1)`` elsewhere."""
    if not 0.0 <= gamma <= 1.0:
        raise InvalidInputError(f"gamma must lie in [0, 1], got {gamma}")
    if K < 2:
        raise InvalidInputError("label smoothing needs K >= 2")
    q = np.full(K, gamma / (K - 1))
    q[int(y)] = 1.0 - gamma
    return q


def _soft_targets(y, K, gamma):
    y = np.asarray(y, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= K):
        raise InvalidInputError(f"class indices must lie in [0, {K})")
    Q = np.full((y.size, K), gamma / (K - 1) if K > 1 else 0.0)
    Q[np.arange(y.size), y] = 1.0 - gamma
    return Q


def apply_label_noise(y, K, gamma, rng):
    """Keep ``y`` with probability ``1 - gamma``, else draw one of the other classes."""
    if not 0.0 <= gamma <= 1.0:
        raise InvalidInputError(f"gamma must lie in [0, 1], got {gamma}")
    if rng.random() < gamma:
        c = int(rng.integers(K - 1))
        return c + (c >= y)
    return int(y)


def noisy_labels(y, K, gamma, rng):
    """Vectorised :func:`apply_label_noise` over an array of labels."""
    if not 0.0 <= gamma <= 1.0:
        raise InvalidInputError(f"gamma must lie in [0, 1], got {gamma}")
    y = np.asarray(y, dtype=np.int64)
    flip = rng.random(y.size) < gamma
    other = rng.integers(K - 1, size=y.size)
    other += other >= y
    return np.where(flip, other, y)


def _output_loss(model, Z, y, loss_kind):
    """Per-row loss and its gradient with respect to the outputs ``Z``."""
    if loss_kind.kind is LossName.SQUARED_ERROR:
        if Z.shape[1] != 1:
            raise InvalidInputError("squared error needs a single-output model")
        r = Z[:, 0] - np.asarray(y, dtype=np.float64)
        return r * r, (2.0 * r)[:, None]
    K = Z.shape[1]
    if K < 2:
        raise InvalidInputError("cross-entropy needs at least two outputs")
    Q = _soft_targets(y, K, loss_kind.label_smoothing)
    m = Z.max(axis=1, keepdims=True)
    E = np.exp(Z - m)
    S = E.sum(axis=1, keepdims=True)
    logp = Z - m - np.log(S)
    losses = -(Q * logp).sum(axis=1)
    return losses, E / S - Q


def per_example_losses(model, X, y, loss_kind):
    X = _check_X(model, X)
    y = np.asarray(y)
    if y.shape[0] != X.shape[0]:
        raise InvalidInputError(f"{X.shape[0]} rows but {y.shape[0]} targets")
    return _output_loss(model, outputs(model, X), y, loss_kind)[0]


@dataclass
class LossGrads:
    losses: np.ndarray
    grad_params: np.ndarray
    grad_input: np.ndarray


def loss_and_grads(model, X, y, loss_kind):
    """Per-row losses, the batch-mean parameter gradient and per-row input gradients."""
    X = _check_X(model, X)
    y = np.asarray(y)
    n = X.shape[0]
    if y.shape[0] != n:
        raise InvalidInputError(f"{n} rows but {y.shape[0]} targets")
    if model.kind is ModelKind.LINEAR_REGRESSION:
        theta = model.params
        Z = (X @ theta)[:, None]
        losses, dZ = _output_loss(model, Z, y, loss_kind)
        dz = dZ[:, 0]
        return LossGrads(losses, X.T @ dz / n, dz[:, None] * theta[None, :])
    if model.kind is ModelKind.LOGISTIC:
        W, b = model.unpack()
        Z = X @ W.T + b
        losses, dZ = _output_loss(model, Z, y, loss_kind)
        gp = np.concatenate([(dZ.T @ X).ravel(), dZ.sum(axis=0)]) / n
        return LossGrads(losses, gp, dZ @ W)
    W1, b1, W2, b2 = model.unpack()
    A = X @ W1.T + b1
    H = _act(A, model.activation)
    Z = H @ W2.T + b2
    losses, dZ = _output_loss(model, Z, y, loss_kind)
    dA = (dZ @ W2) * _act_grad(A, model.activation)
    gp = np.concatenate([
        (dA.T @ X).ravel(), dA.sum(axis=0), (dZ.T @ H).ravel(), dZ.sum(axis=0),
    ]) / n
    return LossGrads(losses, gp, dA @ W1)


def _single(example):
    return example.x[None, :], np.array([example.y])


def loss(model, example, loss_kind):
    X, y = _single(example)
    return float(per_example_losses(model, X, y, loss_kind)[0])


def grad_params(model, example, loss_kind):
    X, y = _single(example)
    return loss_and_grads(model, X, y, loss_kind).grad_params


def grad_input(model, example, loss_kind):
    X, y = _single(example)
    return loss_and_grads(model, X, y, loss_kind).grad_input[0]
