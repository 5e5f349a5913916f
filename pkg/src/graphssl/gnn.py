"""Phase 2: GNN refinement of node embeddings over the teacher/student graphs.

Nodes aggregate over their out-neighbors (the samples they picked as nearest
neighbors). GCN is the exception and uses the symmetrized adjacency that its
normalization is defined on. A node without out-neighbors sees only itself.

Layer rules, with ``H`` row-per-node and weights applied on the right:

* ``gcn``  ``act(Ahat H W)``, ``Ahat = D^-1/2 (A_sym + I) D^-1/2``
* ``gat``  single head; ``e_ij = leaky_relu(a_self . W h_i + a_nbr . W h_j)`` over
  ``j`` in out-neighbors and self, softmax over ``j``, then ``act(sum alpha_ij W h_j)``
* ``sage`` ``act([h_v || mean_u h_u] W)``
* ``gin``  ``act(MLP((1 + eps) h_v + sum_u h_u))`` with a two-layer MLP and learnable ``eps``
"""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import STREAM_INIT, derive_rng
from .distill import TrainArtifacts, ema_update
from .errors import ShapeMismatch, ValidationError, ZeroVector
from .graph import KnnGraph
from .nn import activate, init_linear
from .numerics import ParamSet, as_matrix, sgd_momentum_step

log = logging.getLogger(__name__)

LAYER_KINDS = ("gcn", "gat", "sage", "gin")
JK_MODES = ("disabled", "sum", "max", "concat")


@dataclass(frozen=True)
class GnnStack:
    kind: str = "gcn"
    depth: int = 3
    hidden: int = 64
    activation: str = "relu"
    jk: str = "concat"
    weighted: bool = False

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValidationError("gnn.kind", f"one of {LAYER_KINDS}")
        if self.depth < 1:
            raise ValidationError("gnn.depth", "must be >= 1")
        if self.hidden < 1:
            raise ValidationError("gnn.hidden", "must be >= 1")
        if self.jk not in JK_MODES:
            raise ValidationError("gnn.jk", f"one of {JK_MODES}")

    def output_width(self) -> int:
        return self.hidden * self.depth if self.jk == "concat" else self.hidden


@dataclass(frozen=True)
class RefineConfig:
    epochs: int = 1000
    lr: float = 1e-4
    momentum: float = 0.99
    ema: float = 0.99
    symmetrize: bool = False
    export_teacher: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("refine.epochs", "must be >= 1")
        if not self.lr > 0:
            raise ValidationError("refine.lr", "must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValidationError("refine.momentum", "must be in [0, 1)")
        if not 0 <= self.ema <= 1:
            raise ValidationError("refine.ema", "must be in [0, 1]")


@dataclass
class GraphOperators:
    """Dense constant operators a layer needs, precomputed once per graph."""

    n: int
    gcn: np.ndarray
    neighbor_sum: np.ndarray
    neighbor_mean: np.ndarray
    attend_mask: np.ndarray

    @classmethod
    def from_graph(cls, graph: KnnGraph, weighted: bool = False) -> "GraphOperators":
        n = graph.n
        a = graph.adjacency(weighted=weighted)
        a_sym = a + a.T if weighted else np.maximum(a, a.T)
        a_hat = a_sym + np.eye(n)
        d = 1.0 / np.sqrt(a_hat.sum(axis=1))
        gcn = d[:, None] * a_hat * d[None, :]
        row = a.sum(axis=1)
        isolated = row == 0
        mean = np.where(isolated[:, None], 0.0, a / np.where(isolated, 1.0, row)[:, None])
        mean[isolated, isolated] = 1.0
        mask = (graph.adjacency() + np.eye(n)) > 0
        return cls(n, gcn, a, mean, mask)


def _ops(graph) -> GraphOperators:
    return graph if isinstance(graph, GraphOperators) else GraphOperators.from_graph(graph)


def init_layer(kind: str, in_dim: int, out_dim: int, rng: np.random.Generator,
               prefix: str = "") -> dict[str, np.ndarray]:
    p = {}
    if kind == "gcn":
        p["W"], _ = init_linear(rng, in_dim, out_dim, bias=False)
    elif kind == "gat":
        p["W"], _ = init_linear(rng, in_dim, out_dim, bias=False)
        p["a_self"], _ = init_linear(rng, out_dim, 1, bias=False)
        p["a_nbr"], _ = init_linear(rng, out_dim, 1, bias=False)
    elif kind == "sage":
        p["W"], _ = init_linear(rng, 2 * in_dim, out_dim, bias=False)
    elif kind == "gin":
        p["eps"] = np.zeros((1, 1))
        p["W1"], p["b1"] = init_linear(rng, in_dim, out_dim)
        p["W2"], p["b2"] = init_linear(rng, out_dim, out_dim)
    else:
        raise ValidationError("gnn.kind", f"one of {LAYER_KINDS}")
    return {prefix + k: v for k, v in p.items()}


def _layer(kind: str, p: Mapping, ops: GraphOperators, h: ad.Tensor, activation,
           prefix: str = "") -> ad.Tensor:
    def P(name):
        return p[prefix + name]

    if h.shape[0] != ops.n:
        raise ShapeMismatch(f"H has {h.shape[0]} rows, graph has {ops.n} nodes")
    first = P("W1") if kind == "gin" else P("W")
    expected_in = first.shape[0] // 2 if kind == "sage" else first.shape[0]
    if h.shape[1] != expected_in:
        raise ShapeMismatch(f"{kind}: input width {h.shape[1]}, expected {expected_in}")

    if kind == "gcn":
        out = ad.matmul(ops.gcn, h @ P("W"))
    elif kind == "gat":
        wh = h @ P("W")
        scores = ad.leaky_relu((wh @ P("a_self")) + (wh @ P("a_nbr")).T, 0.2)
        out = ad.masked_softmax(scores, ops.attend_mask) @ wh
    elif kind == "sage":
        out = ad.concat([h, ad.matmul(ops.neighbor_mean, h)], axis=1) @ P("W")
    elif kind == "gin":
        z = (1.0 + P("eps")) * h + ad.matmul(ops.neighbor_sum, h)
        out = ad.relu(z @ P("W1") + P("b1")) @ P("W2") + P("b2")
    else:
        raise ValidationError("gnn.kind", f"one of {LAYER_KINDS}")
    return activate(out, activation)


def gnn_layer_forward(kind: str, params: Mapping, graph, h, activation: str | None = "relu"):
    """One message-passing layer. Accepts arrays or Tensors; returns the same kind as ``h``."""
    as_tensor = isinstance(h, ad.Tensor)
    p = {k: ad.lift(v) for k, v in params.items()}
    out = _layer(kind, p, _ops(graph), ad.lift(h if as_tensor else as_matrix(h, "H")), activation)
    return out if as_tensor else out.value


def jk_combine(layer_outputs: Sequence, mode: str):
    """Combine per-layer outputs: last layer only, elementwise sum/max, or concatenation."""
    if not layer_outputs:
        raise ShapeMismatch("jk_combine needs at least one layer output")
    as_tensor = any(isinstance(o, ad.Tensor) for o in layer_outputs)
    outs = [ad.lift(o) for o in layer_outputs]
    rows = {o.shape[0] for o in outs}
    if len(rows) != 1:
        raise ShapeMismatch("layer outputs differ in row count")
    if mode != "concat" and mode != "disabled" and len({o.shape[1] for o in outs}) != 1:
        raise ShapeMismatch(f"jk={mode} needs equal widths")
    if mode == "disabled":
        result = outs[-1]
    elif mode == "sum":
        result = outs[0]
        for o in outs[1:]:
            result = result + o
    elif mode == "max":
        result = ad.maximum(outs)
    elif mode == "concat":
        result = ad.concat(outs, axis=1)
    else:
        raise ValidationError("gnn.jk", f"one of {JK_MODES}")
    return result if as_tensor else result.value


def init_stack(stack: GnnStack, in_dim: int, seed: int) -> ParamSet:
    rng = derive_rng(seed, STREAM_INIT, 2)
    params = ParamSet()
    width = in_dim
    for layer in range(stack.depth):
        for k, v in init_layer(stack.kind, width, stack.hidden, rng, f"l{layer}.").items():
            params[k] = v
        width = stack.hidden
    return params


def _stack_tensor(stack: GnnStack, params: Mapping, ops: GraphOperators, h) -> ad.Tensor:
    outputs = []
    h = ad.lift(h)
    for layer in range(stack.depth):
        act = stack.activation if layer < stack.depth - 1 else None
        h = _layer(stack.kind, params, ops, h, act, prefix=f"l{layer}.")
        outputs.append(h)
    return jk_combine(outputs, stack.jk)


def stack_forward(stack: GnnStack, params: Mapping, graph, h) -> np.ndarray:
    """Full stack with Jumping Knowledge applied; hidden layers use ``stack.activation``."""
    p = {k: ad.lift(v) for k, v in params.items()}
    return _stack_tensor(stack, p, _ops(graph), as_matrix(h, "H")).value


def refine_loss(student_out, teacher_out, symmetrize: bool = False) -> float:
    """Mean over nodes of ``2 - 2 cos(s_i, t_i)``."""
    s = as_matrix(student_out, "student_out")
    t = as_matrix(teacher_out, "teacher_out")
    if s.shape != t.shape:
        raise ShapeMismatch(f"{s.shape} vs {t.shape}")
    ns, nt = np.linalg.norm(s, axis=1), np.linalg.norm(t, axis=1)
    if np.any(ns == 0) or np.any(nt == 0):
        raise ZeroVector("zero output row")
    cos = np.einsum("ij,ij->i", s, t) / (ns * nt)
    forward = float(np.mean(2.0 - 2.0 * cos))
    if not symmetrize:
        return forward
    cos_rev = np.einsum("ij,ij->i", t, s) / (nt * ns)
    return 0.5 * (forward + float(np.mean(2.0 - 2.0 * cos_rev)))


def _loss_tensor(out: ad.Tensor, target: np.ndarray, symmetrize: bool) -> ad.Tensor:
    loss = ad.mean(ad.cosine_distance_rows(out, target))
    if symmetrize:
        loss = 0.5 * (loss + ad.mean(ad.cosine_distance_rows(target, out)))
    return loss


@dataclass
class RefinedEmbeddings:
    matrix: np.ndarray
    stream: str = "student"
    loss_curve: list[float] = field(default_factory=list)
    teacher_matrix: np.ndarray | None = None
    student_params: ParamSet | None = field(default=None, repr=False)
    teacher_params: ParamSet | None = field(default=None, repr=False)


def run_refine(artifacts: TrainArtifacts, stack: GnnStack, cfg: RefineConfig,
               student_init: ParamSet | None = None,
               teacher_init: ParamSet | None = None) -> RefinedEmbeddings:
    """Train the student GNN against an EMA teacher GNN; return the student's JK output."""
    s_feat = as_matrix(artifacts.student_embeddings, "student_embeddings")
    t_feat = as_matrix(artifacts.teacher_embeddings, "teacher_embeddings")
    s_graph, t_graph = artifacts.student_graph, artifacts.teacher_graph
    if s_graph.num_edges == 0 or t_graph.num_edges == 0:
        raise ValidationError("artifacts", "graphs must be non-empty")
    if s_feat.shape[0] != s_graph.n or t_feat.shape[0] != t_graph.n:
        raise ShapeMismatch("embedding rows do not match graph size")
    if s_feat.shape[1] != t_feat.shape[1]:
        raise ShapeMismatch("teacher and student embeddings differ in width")

    s_ops = GraphOperators.from_graph(s_graph, stack.weighted)
    t_ops = GraphOperators.from_graph(t_graph, stack.weighted)
    student = student_init.copy() if student_init is not None else init_stack(stack, s_feat.shape[1], cfg.seed)
    teacher = teacher_init.copy() if teacher_init is not None else student.copy()
    state = student.zeros_like()

    def student_model(p, x):
        return _stack_tensor(stack, p, s_ops, x)

    losses = []
    for epoch in range(cfg.epochs):
        target = stack_forward(stack, teacher, t_ops, t_feat)
        loss, grads = ad.loss_and_grad(
            student_model, student, s_feat,
            lambda out: _loss_tensor(out, target, cfg.symmetrize))
        losses.append(loss)
        student, state = sgd_momentum_step(student, grads, cfg.lr, cfg.momentum, state)
        teacher = ema_update(teacher, student, cfg.ema)
        if epoch % 100 == 0:
            log.debug("refine epoch %d loss %.6f", epoch, loss)

    refined = RefinedEmbeddings(stack_forward(stack, student, s_ops, s_feat), "student", losses,
                                student_params=student, teacher_params=teacher)
    if cfg.export_teacher:
        refined.teacher_matrix = stack_forward(stack, teacher, t_ops, t_feat)
    return refined
