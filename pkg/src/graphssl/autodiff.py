"""A small tape-based reverse-mode autodiff over float64 numpy arrays.

Only the primitives needed by the encoders, projectors, GNN layers and the two
alignment losses exist. Anything else (including raw numpy ufuncs applied to a
``Tensor``) raises :class:`UnsupportedPrimitive` instead of silently dropping
off the tape.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import UnsupportedPrimitive, ValidationFailure
from .numerics import ParamSet


class Tensor:
    __slots__ = ("value", "parents", "backward_fn")

    def __init__(self, value, parents: tuple = (), backward_fn=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.backward_fn = backward_fn

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        raise UnsupportedPrimitive(f"numpy ufunc {ufunc.__name__!r} applied to a Tensor")

    def __array_function__(self, func, types, args, kwargs):
        raise UnsupportedPrimitive(f"numpy function {func.__name__!r} applied to a Tensor")

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self):
        return transpose(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(lift(other)))

    def __rsub__(self, other):
        return add(lift(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(lift(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(lift(other), self)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"


def lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    return Tensor(a.value + b.value, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a) -> Tensor:
    a = lift(a)
    return Tensor(-a.value, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    return Tensor(a.value * b.value, (a, b),
                  lambda g: (_unbroadcast(g * b.value, a.shape),
                             _unbroadcast(g * a.value, b.shape)))


def div(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    out = a.value / b.value
    return Tensor(out, (a, b),
                  lambda g: (_unbroadcast(g / b.value, a.shape),
                             _unbroadcast(-g * out / b.value, b.shape)))


def matmul(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    return Tensor(a.value @ b.value, (a, b),
                  lambda g: (g @ b.value.T, a.value.T @ g))


def transpose(a) -> Tensor:
    a = lift(a)
    return Tensor(a.value.T, (a,), lambda g: (g.T,))


def tanh(a) -> Tensor:
    a = lift(a)
    y = np.tanh(a.value)
    return Tensor(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a) -> Tensor:
    a = lift(a)
    pos = a.value > 0
    return Tensor(np.where(pos, a.value, 0.0), (a,), lambda g: (g * pos,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = lift(a)
    factor = np.where(a.value > 0, 1.0, slope)
    return Tensor(a.value * factor, (a,), lambda g: (g * factor,))


def sqrt(a) -> Tensor:
    a = lift(a)
    y = np.sqrt(a.value)
    return Tensor(y, (a,), lambda g: (g / (2.0 * y),))


def log(a) -> Tensor:
    a = lift(a)
    return Tensor(np.log(a.value), (a,), lambda g: (g / a.value,))


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = lift(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor(out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = lift(a)
    count = a.value.size if axis is None else a.shape[axis]
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def concat(items: Sequence, axis: int = 1) -> Tensor:
    items = [lift(t) for t in items]
    sizes = [t.shape[axis] for t in items]
    cuts = np.cumsum(sizes)[:-1]
    return Tensor(np.concatenate([t.value for t in items], axis=axis), tuple(items),
                  lambda g: tuple(np.split(g, cuts, axis=axis)))


def maximum(items: Sequence) -> Tensor:
    """Elementwise max over equally shaped tensors; ties route gradient to the first."""
    items = [lift(t) for t in items]
    stacked = np.stack([t.value for t in items])
    winner = stacked.argmax(axis=0)
    return Tensor(stacked.max(axis=0), tuple(items),
                  lambda g: tuple(g * (winner == i) for i in range(len(items))))


def softmax(a, temperature: float = 1.0) -> Tensor:
    """Row softmax of ``a / temperature``."""
    a = lift(a)
    z = a.value / temperature
    z = z - z.max(axis=-1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=-1, keepdims=True)
    return Tensor(p, (a,),
                  lambda g: (p * (g - (g * p).sum(axis=-1, keepdims=True)) / temperature,))


def log_softmax(a, temperature: float = 1.0) -> Tensor:
    a = lift(a)
    z = a.value / temperature
    z = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return Tensor(out, (a,),
                  lambda g: ((g - p * g.sum(axis=-1, keepdims=True)) / temperature,))


def masked_softmax(a, mask: np.ndarray) -> Tensor:
    """Row softmax restricted to ``mask``; every row needs at least one True entry."""
    a = lift(a)
    mask = np.asarray(mask, dtype=bool)
    z = np.where(mask, a.value, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    p = np.where(mask, np.exp(z), 0.0)
    p /= p.sum(axis=-1, keepdims=True)
    return Tensor(p, (a,), lambda g: (p * (g - (g * p).sum(axis=-1, keepdims=True)),))


def stop_gradient(a) -> Tensor:
    return Tensor(lift(a).value)


# losses ---------------------------------------------------------------------

def cross_entropy_rows(teacher_probs, student_logits, student_temperature: float) -> Tensor:
    """Mean over rows of ``-t . log softmax(logits / T)``; teacher rows are constants."""
    t = np.asarray(lift(teacher_probs).value)
    logp = log_softmax(student_logits, student_temperature)
    return mean(neg(sum(mul(t, logp), axis=1)))


def cosine_distance_rows(s, t) -> Tensor:
    """Per-row ``2 - 2 cos(s_i, t_i)`` as an (N, 1) tensor."""
    s, t = lift(s), lift(t)
    dot = sum(s * t, axis=1, keepdims=True)
    ns = sqrt(sum(s * s, axis=1, keepdims=True))
    nt = sqrt(sum(t * t, axis=1, keepdims=True))
    return 2.0 - 2.0 * (dot / (ns * nt))


# driver ---------------------------------------------------------------------

def backward(root: Tensor) -> dict[int, np.ndarray]:
    """Gradients of scalar ``root`` keyed by ``id`` of every reachable tensor."""
    if root.value.size != 1:
        raise ValidationFailure(f"backward needs a scalar, got shape {root.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    grads = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    return grads


Model = Callable[[Mapping[str, Tensor], Tensor], Tensor]
LossFn = Callable[[Tensor], Tensor]


def _forward(model: Model, params: Mapping, x, loss: LossFn):
    leaves = {name: Tensor(value) for name, value in params.items()}
    out = model(leaves, lift(x))
    if not isinstance(out, Tensor):
        raise UnsupportedPrimitive(f"model returned {type(out).__name__}, not a Tensor")
    value = loss(out)
    if not isinstance(value, Tensor):
        raise UnsupportedPrimitive("loss did not return a Tensor")
    return leaves, value


def loss_and_grad(model: Model, params: Mapping, x, loss: LossFn) -> tuple[float, ParamSet]:
    leaves, value = _forward(model, params, x, loss)
    grads = backward(value)
    result = ParamSet()
    for name, leaf in leaves.items():
        g = grads.get(id(leaf))
        result[name] = np.zeros_like(leaf.value) if g is None else g
    return float(value.value), result


def backward_grad(model: Model, params: Mapping, x, loss: LossFn) -> ParamSet:
    """Exact reverse-mode gradient of ``loss(model(params, x))`` for every parameter."""
    return loss_and_grad(model, params, x, loss)[1]


@dataclass
class GradReport:
    max_rel_error: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4
    passed: bool = True

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def grad_check(model: Model, params: Mapping, x, loss: LossFn, tolerance: float = 1e-4,
               h: float = 1e-5, abs_floor: float = 1e-6, grads: Mapping | None = None
               ) -> GradReport:
    """Compare reverse-mode gradients with central differences entry by entry.

    Relative error is ``|a - n| / max(|a| + |n|, abs_floor)``. ``grads`` overrides
    the analytic gradient (useful for negative controls).
    """
    params = ParamSet(params)
    analytic = backward_grad(model, params, x, loss) if grads is None else grads

    def value(p):
        return float(_forward(model, p, x, loss)[1].value)

    report = GradReport(tolerance=tolerance)
    for name, base in params.items():
        worst = 0.0
        a = np.asarray(analytic[name], dtype=np.float64)
        for idx in np.ndindex(base.shape):
            probe = params.copy()
            probe[name][idx] = base[idx] + h
            up = value(probe)
            probe[name][idx] = base[idx] - h
            down = value(probe)
            numeric = (up - down) / (2.0 * h)
            err = abs(a[idx] - numeric) / max(abs(a[idx]) + abs(numeric), abs_floor)
            worst = max(worst, err)
        report.max_rel_error[name] = worst
    report.passed = report.worst < tolerance
    return report
