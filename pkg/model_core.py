"""Flat parameter vectors, the two model families and their losses.

Parameter layout (row-major, concatenated in this order):

    linear_softmax   W (input_dim x num_classes), b (num_classes)
    mlp1             W1 (input_dim x hidden), b1 (hidden),
                     W2 (hidden x num_classes), b2 (num_classes)

Logits are ``X @ W + b``. Loss is softmax cross-entropy with a
max-shifted logsumexp, so very large weights still give finite values.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping
from typing import Protocol, TYPE_CHECKING

import numpy as np
import numpy.typing as npt

from errors import EmptyShardError, NonFiniteError, ShapeMismatchError
from models import ModelSpec
from rng import Xorshift64Star

if TYPE_CHECKING:
    from dataset import DatasetShard


ParamVector = npt.NDArray[np.float64]

INIT_SCALE = 0.1
FD_DENOM_FLOOR = 1e-12


class Objective(Protocol):
    def evaluate(self, theta: ParamVector) -> tuple[float, ParamVector]: ...


def as_param_vector(values: object, *, size: int | None = None) -> ParamVector:
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1:
        raise ShapeMismatchError(f"parameter vector must be 1-D, got shape {vec.shape}")
    if size is not None and vec.shape[0] != size:
        raise ShapeMismatchError(f"expected {size} parameters, got {vec.shape[0]}")
    return vec


def ensure_finite(vec: ParamVector, what: str = "vector") -> ParamVector:
    if not np.all(np.isfinite(vec)):
        raise NonFiniteError(f"{what} contains non-finite entries")
    return vec


def init_params(spec: ModelSpec, seed: int) -> ParamVector:
    rng = Xorshift64Star(seed)
    return rng.uniform_array(spec.num_params, -INIT_SCALE, INIT_SCALE)


def unflatten(spec: ModelSpec, theta: ParamVector) -> dict[str, np.ndarray]:
    theta = as_param_vector(theta, size=spec.num_params)
    d, c = spec.input_dim, spec.num_classes
    if spec.kind == "linear_softmax":
        shapes = [("W", (d, c)), ("b", (c,))]
    else:
        h = int(spec.hidden_dim or 0)
        shapes = [("W1", (d, h)), ("b1", (h,)), ("W2", (h, c)), ("b2", (c,))]
    out: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in shapes:
        n = int(np.prod(shape))
        out[name] = theta[offset : offset + n].reshape(shape)
        offset += n
    return out


def flatten(spec: ModelSpec, parts: Mapping[str, np.ndarray]) -> ParamVector:
    names = ("W", "b") if spec.kind == "linear_softmax" else ("W1", "b1", "W2", "b2")
    vec = np.concatenate([np.asarray(parts[n], dtype=np.float64).ravel() for n in names])
    return as_param_vector(vec, size=spec.num_params)


def _softmax_xent(z: np.ndarray, labels: np.ndarray, mean: bool) -> tuple[float, np.ndarray]:
    rows = np.arange(z.shape[0])
    shifted = z - z.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    denom = expz.sum(axis=1, keepdims=True)
    per_row = np.log(denom[:, 0]) - shifted[rows, labels]
    dz = expz / denom
    dz[rows, labels] -= 1.0
    if mean:
        return float(per_row.mean()), dz / z.shape[0]
    return float(per_row.sum()), dz


class LossEvaluator:
    """Loss, gradient and predictions of one model on one shard."""

    def __init__(self, spec: ModelSpec, shard: DatasetShard, reduction: str = "mean") -> None:
        if reduction not in ("mean", "sum"):
            raise ValueError(f"unknown reduction: {reduction}")
        features = np.ascontiguousarray(shard.features, dtype=np.float64)
        labels = np.asarray(shard.labels, dtype=np.int64)
        if features.shape[0] == 0:
            raise EmptyShardError("cannot evaluate on an empty shard")
        if features.shape[1] != spec.input_dim:
            raise ShapeMismatchError(f"shard has {features.shape[1]} features, model expects {spec.input_dim}")
        if labels.min() < 0 or labels.max() >= spec.num_classes:
            raise ShapeMismatchError(f"labels must lie in 0..{spec.num_classes - 1}")
        self.spec = spec
        self.features = features
        self.labels = labels
        self.reduction = reduction

    @property
    def rows(self) -> int:
        return int(self.features.shape[0])

    def _forward(self, theta: ParamVector) -> tuple[dict[str, np.ndarray], np.ndarray | None, np.ndarray | None, np.ndarray]:
        p = unflatten(self.spec, theta)
        if self.spec.kind == "linear_softmax":
            return p, None, None, self.features @ p["W"] + p["b"]
        pre = self.features @ p["W1"] + p["b1"]
        hidden = np.tanh(pre) if self.spec.activation == "tanh" else np.maximum(pre, 0.0)
        return p, pre, hidden, hidden @ p["W2"] + p["b2"]

    def logits(self, theta: ParamVector) -> np.ndarray:
        return self._forward(theta)[3]

    def evaluate(self, theta: ParamVector) -> tuple[float, ParamVector]:
        theta = as_param_vector(theta, size=self.spec.num_params)
        p, pre, hidden, z = self._forward(theta)
        loss, dz = _softmax_xent(z, self.labels, self.reduction == "mean")
        x = self.features
        if self.spec.kind == "linear_softmax":
            grad = np.concatenate([(x.T @ dz).ravel(), dz.sum(axis=0)])
        else:
            assert pre is not None and hidden is not None
            dh = dz @ p["W2"].T
            if self.spec.activation == "tanh":
                dpre = dh * (1.0 - hidden * hidden)
            else:
                dpre = dh * (pre > 0.0)
            grad = np.concatenate(
                [(x.T @ dpre).ravel(), dpre.sum(axis=0), (hidden.T @ dz).ravel(), dz.sum(axis=0)]
            )
        if not math.isfinite(loss):
            raise NonFiniteError("loss is not finite")
        return loss, ensure_finite(grad, "gradient")

    def predict(self, theta: ParamVector) -> np.ndarray:
        # argmax breaks ties toward the lowest class index
        return np.argmax(self.logits(as_param_vector(theta, size=self.spec.num_params)), axis=1)

    def accuracy(self, theta: ParamVector) -> float:
        return float(100.0 * np.mean(self.predict(theta) == self.labels))


def evaluate(ev: Objective, theta: ParamVector) -> tuple[float, ParamVector]:
    return ev.evaluate(theta)


class QuadraticObjective:
    """L(theta) = scale/2 * |theta - center|^2. Handy for hand-traceable runs."""

    def __init__(self, center: object, scale: float = 1.0) -> None:
        self.center = as_param_vector(np.atleast_1d(np.asarray(center, dtype=np.float64)))
        self.scale = float(scale)

    def evaluate(self, theta: ParamVector) -> tuple[float, ParamVector]:
        theta = as_param_vector(theta, size=self.center.shape[0])
        diff = theta - self.center
        return 0.5 * self.scale * float(diff @ diff), self.scale * diff


def fd_check(ev: Objective, theta: ParamVector, h: float = 1e-5) -> float:
    """Max relative error between the analytic gradient and central differences."""
    if not h > 0:
        raise ValueError("h must be positive")
    theta = as_param_vector(theta)
    _, grad = ev.evaluate(theta)
    probe = theta.copy()
    worst = 0.0
    for i in range(theta.shape[0]):
        orig = probe[i]
        probe[i] = orig + h
        up, _ = ev.evaluate(probe)
        probe[i] = orig - h
        down, _ = ev.evaluate(probe)
        probe[i] = orig
        if not (math.isfinite(up) and math.isfinite(down)):
            raise NonFiniteError(f"loss not finite around coordinate {i}")
        fd = (up - down) / (2.0 * h)
        worst = max(worst, abs(float(grad[i]) - fd) / (abs(fd) + FD_DENOM_FLOOR))
    return worst


# -- vector algebra ----------------------------------------------------------


def _same_length(x: ParamVector, y: ParamVector) -> None:
    if x.shape != y.shape:
        raise ShapeMismatchError(f"length mismatch: {x.shape} vs {y.shape}")


def axpy(alpha: float, x: ParamVector, y: ParamVector) -> ParamVector:
    x, y = as_param_vector(x), as_param_vector(y)
    _same_length(x, y)
    return y + alpha * x


def sub(x: ParamVector, y: ParamVector) -> ParamVector:
    x, y = as_param_vector(x), as_param_vector(y)
    _same_length(x, y)
    return x - y


def scale(alpha: float, x: ParamVector) -> ParamVector:
    return alpha * as_param_vector(x)


def sum_of(
    items: Mapping[int, ParamVector] | Iterable[tuple[int, ParamVector]],
    *,
    size: int | None = None,
) -> ParamVector:
    """Left-to-right sum in ascending client-id order, whatever the input order."""
    pairs = list(items.items()) if isinstance(items, Mapping) else list(items)
    ids = [cid for cid, _ in pairs]
    if len(set(ids)) != len(ids):
        raise ShapeMismatchError(f"duplicate ids in sum: {sorted(ids)}")
    pairs.sort(key=lambda kv: kv[0])
    if not pairs:
        if size is None:
            raise ShapeMismatchError("sum_of needs at least one vector or an explicit size")
        return np.zeros(size, dtype=np.float64)
    total = as_param_vector(pairs[0][1]).copy()
    for _, vec in pairs[1:]:
        vec = as_param_vector(vec)
        _same_length(total, vec)
        total = total + vec
    if size is not None and total.shape[0] != size:
        raise ShapeMismatchError(f"expected {size} parameters, got {total.shape[0]}")
    return total


def inf_norm(x: ParamVector) -> float:
    x = as_param_vector(x)
    if x.shape[0] == 0:
        return 0.0
    return float(np.max(np.abs(x)))
