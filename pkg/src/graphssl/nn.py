"""Dense layers on top of :mod:`graphssl.autodiff`."""

from __future__ import annotations

from collections.abc import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .errors import ShapeMismatch, ValidationFailure

ACTIVATIONS = ("relu", "tanh", "identity")


def activate(x: ad.Tensor, kind: str | None) -> ad.Tensor:
    if kind is None or kind == "identity":
        return x
    if kind == "relu":
        return ad.relu(x)
    if kind == "tanh":
        return ad.tanh(x)
    raise ValidationFailure(f"unknown activation {kind!r}")


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int, bias: bool = True):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights (and bias)."""
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    if not bias:
        return w, None
    return w, rng.uniform(-bound, bound, size=(1, fan_out))


def init_mlp(rng: np.random.Generator, widths: Sequence[int], prefix: str) -> dict[str, np.ndarray]:
    if len(widths) < 2 or min(widths) < 1:
        raise ValidationFailure(f"{prefix}: need >= 2 positive widths, got {tuple(widths)}")
    params = {}
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        params[f"{prefix}.{i}.W"], params[f"{prefix}.{i}.b"] = init_linear(rng, a, b)
    return params


def mlp_depth(params: Mapping, prefix: str) -> int:
    depth = 0
    while f"{prefix}.{depth}.W" in params:
        depth += 1
    return depth


def mlp(params: Mapping[str, ad.Tensor], prefix: str, x: ad.Tensor,
        activation: str | None) -> ad.Tensor:
    """Linear layers with ``activation`` between them; the last layer is linear."""
    depth = mlp_depth(params, prefix)
    if depth == 0:
        raise ShapeMismatch(f"no layers with prefix {prefix!r}")
    if x.shape[1] != params[f"{prefix}.0.W"].shape[0]:
        raise ShapeMismatch(f"{prefix}: input width {x.shape[1]}, "
                            f"expected {params[f'{prefix}.0.W'].shape[0]}")
    for i in range(depth):
        x = x @ params[f"{prefix}.{i}.W"] + params[f"{prefix}.{i}.b"]
        if i < depth - 1:
            x = activate(x, activation)
    return x
