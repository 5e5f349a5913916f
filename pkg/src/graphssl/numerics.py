"""Dense numeric helpers: similarity, softmax, the two alignment losses, SGD."""

from __future__ import annotations

from collections.abc import Iterable, Mapping

import numpy as np

from .errors import (
    BadTemperature,
    DimMismatch,
    NonFiniteValue,
    NotADistribution,
    ShapeMismatch,
    ValidationFailure,
    ZeroVector,
)

LOG_EPS = 1e-12


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Return ``values`` as a finite 2-D float64 array (copying only if needed)."""
    m = np.asarray(values, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteValue(f"{name} contains NaN or Inf")
    return m


def _vector(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).ravel()
    if not np.all(np.isfinite(a)):
        raise NonFiniteValue("vector contains NaN or Inf")
    return a


def cosine_similarity(a, b) -> float:
    a, b = _vector(a), _vector(b)
    if a.shape != b.shape or a.size == 0:
        raise DimMismatch(f"lengths {a.size} and {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine similarity of a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def cosine_matrix(x: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
    """All-pairs cosine similarity between rows of ``x`` and rows of ``y``."""
    x = as_matrix(x)
    y = x if y is None else as_matrix(y)
    nx = np.linalg.norm(x, axis=1)
    ny = np.linalg.norm(y, axis=1)
    if np.any(nx == 0.0) or np.any(ny == 0.0):
        raise ZeroVector("zero row in cosine similarity")
    return np.clip((x / nx[:, None]) @ (y / ny[:, None]).T, -1.0, 1.0)


def softmax(scores, temperature: float = 1.0) -> np.ndarray:
    """Max-subtracted softmax of ``scores / temperature`` along the last axis."""
    if not temperature > 0:
        raise BadTemperature(f"temperature must be > 0, got {temperature}")
    z = np.asarray(scores, dtype=np.float64) / temperature
    if not np.all(np.isfinite(z)):
        raise NonFiniteValue("softmax scores must be finite")
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


def _check_distribution(p: np.ndarray, name: str) -> None:
    if p.size == 0 or np.any(p < 0) or np.any(p > 1) or abs(p.sum() - 1.0) > 1e-6:
        raise NotADistribution(f"{name} is not a probability vector")


def cross_entropy(t, s) -> float:
    """``-sum(t * log s)`` with ``0 log 0 = 0`` and ``log`` clamped at 1e-12."""
    t, s = _vector(t), _vector(s)
    if t.shape != s.shape:
        raise NotADistribution(f"lengths {t.size} and {s.size}")
    _check_distribution(t, "t")
    _check_distribution(s, "s")
    mask = t > 0
    value = -np.sum(t[mask] * np.log(np.maximum(s[mask], LOG_EPS)))
    return float(max(value, 0.0))


def cosine_distance_loss(s, t) -> float:
    return 2.0 - 2.0 * cosine_similarity(s, t)


class ParamSet(dict):
    """Ordered name -> float64 array mapping whose shapes are fixed once set."""

    def __init__(self, items: Mapping | Iterable = ()):
        super().__init__()
        pairs = items.items() if isinstance(items, Mapping) else items
        for name, value in pairs:
            self[name] = value

    def __setitem__(self, name, value):
        arr = np.array(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if name in self and self[name].shape != arr.shape:
            raise ShapeMismatch(f"{name}: shape {self[name].shape} is fixed, got {arr.shape}")
        super().__setitem__(name, arr)

    def copy(self) -> "ParamSet":
        return ParamSet((k, v.copy()) for k, v in self.items())

    def zeros_like(self) -> "ParamSet":
        return ParamSet((k, np.zeros_like(v)) for k, v in self.items())

    def check_compatible(self, other: Mapping, what: str = "params") -> None:
        if list(self.keys()) != list(other.keys()):
            raise ShapeMismatch(f"{what}: names differ")
        for k, v in self.items():
            if np.shape(other[k]) != v.shape:
                raise ShapeMismatch(f"{what}: {k} has shape {np.shape(other[k])}, expected {v.shape}")


def sgd_momentum_step(
    params: ParamSet, grads: Mapping, lr: float, momentum: float, state: Mapping
) -> tuple[ParamSet, ParamSet]:
    """Heavy-ball step: ``state' = momentum*state + g``; ``params' = params - lr*state'``."""
    params.check_compatible(grads, "grads")
    params.check_compatible(state, "state")
    if not lr > 0:
        raise ValidationFailure(f"lr must be > 0, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ValidationFailure(f"momentum must be in [0, 1), got {momentum}")
    new_state = ParamSet((k, momentum * state[k] + grads[k]) for k in params)
    new_params = ParamSet((k, params[k] - lr * new_state[k]) for k in params)
    return new_params, new_state
