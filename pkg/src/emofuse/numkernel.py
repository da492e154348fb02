"""Dense float64 numeric kernel shared by every layer of the classifier.

Tensors are C-contiguous numpy float64 arrays throughout, so results are
bit-reproducible on a given machine for a fixed seed. Every op here is a
pure function of its inputs except ``optimizer_step``, which updates the
parameter values and its own moment state in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .errors import DimensionError, GradientCheckError, TrainingError

# Floor applied inside cross_entropy so log never sees 0 and a perfect
# prediction scores exactly 0.
CROSS_ENTROPY_FLOOR = 1e-12


def tensor(data, shape=None) -> np.ndarray:
    """Build a float64 row-major tensor, optionally reshaping flat data."""
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    return arr


class Parameter:
    """Named weight tensor plus an accumulated gradient of the same shape."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value):
        self.name = name
        self.value = tensor(value)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def zero_grads(params: Iterable[Parameter]):
    for p in params:
        p.zero_grad()


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of two 2-d tensors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    """Map a logit vector onto the probability simplex (max-subtracted)."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise ValueError("softmax expects a non-empty 1-d vector")
    e = np.exp(z - z.max())
    return e / e.sum()


def cross_entropy(pred: np.ndarray, label: int) -> float:
    """Negative log probability of the true class, floored at 1e-12."""
    p = np.asarray(pred, dtype=np.float64)
    if p.ndim != 1:
        raise DimensionError(f"prediction must be 1-d, got shape {p.shape}")
    label = int(label)
    if not 0 <= label < p.shape[0]:
        raise IndexError(f"label {label} out of range for {p.shape[0]} classes")
    return float(-np.log(max(float(p[label]), CROSS_ENTROPY_FLOOR)))


@dataclass
class OptimizerState:
    """Plain SGD or Adam state, with lazily allocated Adam moments per parameter."""

    kind: str
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict, repr=False)
    second_moment: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        # lr = 0 is allowed as the degenerate null update
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")


def optimizer_step(state: OptimizerState, params: list[Parameter]):
    """Apply one update to every parameter from its accumulated gradient."""
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise TrainingError(f"non-finite gradient for parameter {p.name}")
    state.step_count += 1
    if state.kind == "sgd":
        for p in params:
            p.value -= state.learning_rate * p.grad
        return
    t = state.step_count
    for p in params:
        m = state.first_moment.get(p.name)
        if m is None:
            m = state.first_moment[p.name] = np.zeros_like(p.value)
            v = state.second_moment[p.name] = np.zeros_like(p.value)
        else:
            v = state.second_moment[p.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * p.grad
        v *= state.beta2
        v += (1.0 - state.beta2) * (p.grad * p.grad)
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p.value -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


def finite_difference_report(
    loss_fn: Callable[[], float], params: list[Parameter], eps: float
) -> dict[str, float]:
    """Compare analytic gradients against central differences, per parameter.

    ``params[i].grad`` must already hold the analytic gradient of ``loss_fn``
    at the current parameter values. Returns the max relative error
    ``|analytic - numeric| / max(1, |numeric|)`` for each parameter.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps {eps} outside [1e-7, 1e-3]")
    base = float(loss_fn())
    if float(loss_fn()) != base:
        raise GradientCheckError("loss function is not deterministic across evaluations")
    report: dict[str, float] = {}
    for p in params:
        flat_v = p.value.reshape(-1)
        flat_g = p.grad.reshape(-1)
        worst = 0.0
        for i in range(flat_v.size):
            orig = flat_v[i]
            flat_v[i] = orig + eps
            loss_plus = float(loss_fn())
            flat_v[i] = orig - eps
            loss_minus = float(loss_fn())
            flat_v[i] = orig
            numeric = (loss_plus - loss_minus) / (2.0 * eps)
            err = abs(flat_g[i] - numeric) / max(1.0, abs(numeric))
            if err > worst:
                worst = err
        report[p.name] = worst
    return report


def finite_difference_check(
    loss_fn: Callable[[], float], params: list[Parameter], eps: float
) -> float:
    """Max relative error between analytic and central-difference gradients."""
    report = finite_difference_report(loss_fn, params, eps)
    return max(report.values()) if report else 0.0
