"""Phase 1: teacher/student self-distillation with per-epoch KNN tracking.

The student sees one augmented view of each sample. The teacher sees either a
second augmented view or, once a sample is deemed mature, the raw features of
a neighbor drawn from its multi-epoch similarity distribution. Teacher logits
are centered and sharpened, student logits only sharpened, and the student is
trained on the cross-entropy between them. The teacher tracks the student by
EMA. After every epoch, both encoders embed the clean dataset and their top-k
neighbors are pushed into per-stream rolling stores from which the final
graphs are built.
"""

from __future__ import annotations

import csv
import logging
from collections.abc import Mapping
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import (
    STREAM_AUGMENT,
    STREAM_INIT,
    STREAM_MATURITY,
    STREAM_SHUFFLE,
    AugmentPolicy,
    augment,
    derive_rng,
    load_embeddings,
    save_embeddings,
)
from .errors import BadTemperature, EmptySupport, ShapeMismatch, TooFewSamples, ValidationError
from .graph import KnnGraph, build_graph, load_graph, save_graph
from .neighbors import (
    CircularEdgeStore,
    NeighborConfig,
    SimilarityDistribution,
    TeacherInputMode,
    epoch_neighbors,
    maturity_check,
    nearest_is_self,
    sample_neighbor,
)
from .nn import ACTIVATIONS, activate, init_mlp, mlp, mlp_depth
from .numerics import ParamSet, as_matrix, cross_entropy, sgd_momentum_step, softmax

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.1
    momentum: float = 0.9
    ema: float = 0.99
    hidden: tuple[int, ...] = (128,)
    embed_dim: int = 64
    activation: str = "relu"
    head_hidden: int = 128
    out_dim: int = 256
    student_temp: float = 0.1
    teacher_temp: float = 0.04
    center: str = "batch"
    center_momentum: float = 0.9
    head_norm: bool = True
    exclude_validation: bool = False
    seed: int = 0
    neighbor: NeighborConfig = field(default_factory=NeighborConfig)
    augment: AugmentPolicy = field(default_factory=lambda: AugmentPolicy(0.4, 0.25, 0.1))

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("pretrain.epochs", "must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("pretrain.batch_size", "must be >= 1")
        if not self.lr > 0:
            raise ValidationError("pretrain.lr", "must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValidationError("pretrain.momentum", "must be in [0, 1)")
        if not 0 <= self.ema <= 1:
            raise ValidationError("pretrain.ema", "must be in [0, 1]")
        if self.embed_dim < 1 or self.head_hidden < 1 or self.out_dim < 1 or min(self.hidden, default=1) < 1:
            raise ValidationError("pretrain.embed_dim", "widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValidationError("pretrain.activation", f"one of {ACTIVATIONS}")
        if not (self.student_temp > 0 and self.teacher_temp > 0):
            raise ValidationError("pretrain.teacher_temp", "temperatures must be > 0")
        if not self.teacher_temp < self.student_temp:
            raise ValidationError("pretrain.teacher_temp", "must be below student_temp")
        if self.center not in ("batch", "ema"):
            raise ValidationError("pretrain.center", "'batch' or 'ema'")
        if not 0 <= self.center_momentum <= 1:
            raise ValidationError("pretrain.center_momentum", "must be in [0, 1]")

    def encoder_widths(self, input_dim: int) -> tuple[int, ...]:
        return (input_dim, *self.hidden, self.embed_dim)

    def head_widths(self) -> tuple[int, ...]:
        return (self.embed_dim, self.head_hidden, self.head_hidden, self.out_dim)


def init_params(cfg: PretrainConfig, input_dim: int, seed: int) -> ParamSet:
    rng = derive_rng(seed, STREAM_INIT)
    params = ParamSet(init_mlp(rng, cfg.encoder_widths(input_dim), "enc"))
    for name, value in init_mlp(rng, cfg.head_widths(), "head").items():
        params[name] = value
    return params


def _encoder(params: Mapping, x, activation: str):
    return mlp(params, "enc", ad.lift(x), activation)


def _l2_rows(h):
    return h / ad.sqrt(ad.sum(h * h, axis=1, keepdims=True) + 1e-12)


def _head(params: Mapping, h, activation: str, normalized: bool):
    """Projector MLP. With ``normalized`` the last layer scores the L2-normalized
    hidden rows against unit-norm weight columns, so logits are cosines in [-1, 1]."""
    if not normalized:
        return mlp(params, "head", h, activation)
    depth = mlp_depth(params, "head")
    if h.shape[1] != params["head.0.W"].shape[0]:
        raise ShapeMismatch(f"head: input width {h.shape[1]}, "
                            f"expected {params['head.0.W'].shape[0]}")
    for i in range(depth - 1):
        h = activate(h @ params[f"head.{i}.W"] + params[f"head.{i}.b"], activation)
    w = params[f"head.{depth - 1}.W"]
    w = w / ad.sqrt(ad.sum(w * w, axis=0, keepdims=True) + 1e-12)
    return _l2_rows(h) @ w


def _network(params: Mapping, x, activation: str, normalized: bool = True):
    return _head(params, _encoder(params, x, activation), activation, normalized)


def encode(params: Mapping, batch, activation: str = "relu") -> np.ndarray:
    """Row-wise embeddings of ``batch``."""
    batch = as_matrix(batch, "batch")
    tensors = {k: ad.Tensor(v) for k, v in params.items()}
    return _encoder(tensors, batch, activation).value


def project(params: Mapping, embeddings, activation: str = "relu",
            normalized: bool = False) -> np.ndarray:
    """Projector logits for already-encoded rows."""
    tensors = {k: ad.Tensor(v) for k, v in params.items()}
    h = ad.lift(as_matrix(embeddings, "embeddings"))
    return _head(tensors, h, activation, normalized).value


def center_and_sharpen(teacher_logits, temperature: float, center=None) -> np.ndarray:
    """Subtract the column-wise batch mean (or a given center), then row softmax at ``temperature``."""
    if not temperature > 0:
        raise BadTemperature(f"temperature must be > 0, got {temperature}")
    logits = as_matrix(teacher_logits, "teacher_logits")
    c = logits.mean(axis=0, keepdims=True) if center is None else np.asarray(center)
    return softmax(logits - c, temperature)


def sharpen(student_logits, temperature: float) -> np.ndarray:
    if not temperature > 0:
        raise BadTemperature(f"temperature must be > 0, got {temperature}")
    return softmax(as_matrix(student_logits, "student_logits"), temperature)


def distill_loss(teacher_probs, student_probs) -> float:
    """Mean over rows of ``-t_i . log s_i``."""
    t = as_matrix(teacher_probs, "teacher_probs")
    s = as_matrix(student_probs, "student_probs")
    if t.shape != s.shape:
        raise ShapeMismatch(f"{t.shape} vs {s.shape}")
    return float(np.mean([cross_entropy(ti, si) for ti, si in zip(t, s)]))


def ema_update(teacher: Mapping, student: Mapping, m: float) -> ParamSet:
    """``m * teacher + (1 - m) * student``, parameter by parameter."""
    teacher = ParamSet(teacher)
    teacher.check_compatible(student, "student")
    if not 0 <= m <= 1:
        raise ValidationError("ema", "momentum must be in [0, 1]")
    return ParamSet((k, m * teacher[k] + (1.0 - m) * np.asarray(student[k])) for k in teacher)


def select_teacher_input(sample_index: int, view_b, mode: TeacherInputMode,
                         dist: SimilarityDistribution | None, features,
                         rng: np.random.Generator) -> np.ndarray:
    """Second augmented view in augmented mode, else a sampled neighbor's raw row."""
    if mode is TeacherInputMode.AUGMENTED:
        return np.asarray(view_b, dtype=np.float64)
    if dist is None or len(dist.ids) == 0:
        raise EmptySupport(f"sample {sample_index} has no neighbor distribution")
    return np.array(features[sample_neighbor(dist, rng)], dtype=np.float64)


@dataclass
class TrainArtifacts:
    teacher_embeddings: np.ndarray
    student_embeddings: np.ndarray
    teacher_graph: KnnGraph
    student_graph: KnnGraph
    loss_curve: list[float]
    mode_log: list[float]
    teacher_store: CircularEdgeStore | None = None
    student_store: CircularEdgeStore | None = None
    # per-epoch maturity flags actually used for teacher-input selection
    maturity_used: list[np.ndarray] = field(default_factory=list, repr=False)

    def save(self, out_dir: str | PathLike) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_embeddings(self.teacher_embeddings, out / "teacher_embeddings.gdem")
        save_embeddings(self.student_embeddings, out / "student_embeddings.gdem")
        save_graph(self.teacher_graph, out / "teacher_graph.gdgr")
        save_graph(self.student_graph, out / "student_graph.gdgr")
        if self.teacher_store is not None:
            self.teacher_store.save(out / "teacher_store.gdns")
        if self.student_store is not None:
            self.student_store.save(out / "student_store.gdns")
        with open(out / "pretrain_metrics.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "loss", "neighbor_mode_fraction"])
            for epoch, (loss, frac) in enumerate(zip(self.loss_curve, self.mode_log)):
                writer.writerow([epoch, repr(float(loss)), repr(float(frac))])

    @classmethod
    def load(cls, out_dir: str | PathLike) -> "TrainArtifacts":
        out = Path(out_dir)
        losses, modes = [], []
        metrics = out / "pretrain_metrics.csv"
        if metrics.exists():
            with open(metrics, newline="") as fh:
                for row in csv.DictReader(fh):
                    losses.append(float(row["loss"]))
                    modes.append(float(row["neighbor_mode_fraction"]))
        stores = {}
        for stream in ("teacher", "student"):
            path = out / f"{stream}_store.gdns"
            stores[stream] = CircularEdgeStore.load(path) if path.exists() else None
        return cls(
            teacher_embeddings=load_embeddings(out / "teacher_embeddings.gdem"),
            student_embeddings=load_embeddings(out / "student_embeddings.gdem"),
            teacher_graph=load_graph(out / "teacher_graph.gdgr"),
            student_graph=load_graph(out / "student_graph.gdgr"),
            loss_curve=losses,
            mode_log=modes,
            teacher_store=stores["teacher"],
            student_store=stores["student"],
        )


def run_pretrain(features, cfg: PretrainConfig,
                 candidate_mask: np.ndarray | None = None) -> TrainArtifacts:
    """Train student/teacher encoders on ``features`` alone and build both KNN graphs.

    ``candidate_mask`` limits which samples may become graph neighbors (used to
    keep validation nodes out of every neighbor list).
    """
    x = as_matrix(features, "features")
    n, dim = x.shape
    nb = cfg.neighbor
    if n < nb.e + 1:
        raise TooFewSamples(f"N={n} needs to exceed e={nb.e}")
    act = cfg.activation
    student = init_params(cfg, dim, cfg.seed)
    teacher = student.copy()
    opt_state = student.zeros_like()
    stores = {s: CircularEdgeStore(nb, n) for s in ("teacher", "student")}
    mature = np.zeros(n, dtype=bool)
    center = np.zeros((1, cfg.out_dim))
    loss_curve, mode_log, maturity_used = [], [], []

    for epoch in range(cfg.epochs):
        perm = derive_rng(cfg.seed, STREAM_SHUFFLE, epoch).permutation(n)
        maturity_used.append(mature.copy())
        batch_losses, batch_sizes, neighbor_count = [], [], 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            views, teacher_in = [], []
            for i in idx:
                rng = derive_rng(cfg.seed, STREAM_AUGMENT, epoch, int(i))
                view_a = augment(x[i], cfg.augment, rng)
                view_b = augment(x[i], cfg.augment, rng)
                mode = maturity_check(bool(mature[i]))
                dist = None
                if mode is TeacherInputMode.NEIGHBOR:
                    dist = stores["teacher"].distribution(int(i))
                    neighbor_count += 1
                views.append(view_a)
                teacher_in.append(select_teacher_input(int(i), view_b, mode, dist, x, rng))
            views, teacher_in = np.array(views), np.array(teacher_in)

            t_logits = project(teacher, encode(teacher, teacher_in, act), act, cfg.head_norm)
            if cfg.center == "ema":
                t_probs = center_and_sharpen(t_logits, cfg.teacher_temp, center)
                center = (cfg.center_momentum * center
                          + (1 - cfg.center_momentum) * t_logits.mean(axis=0, keepdims=True))
            else:
                t_probs = center_and_sharpen(t_logits, cfg.teacher_temp)

            def loss_fn(logits, t_probs=t_probs):
                return ad.cross_entropy_rows(t_probs, logits, cfg.student_temp)

            loss, grads = ad.loss_and_grad(lambda p, v: _network(p, v, act, cfg.head_norm),
                                           student, views, loss_fn)
            student, opt_state = sgd_momentum_step(student, grads, cfg.lr, cfg.momentum, opt_state)
            teacher = ema_update(teacher, student, cfg.ema)
            batch_losses.append(loss)
            batch_sizes.append(len(idx))

        loss_curve.append(float(np.dot(batch_losses, batch_sizes) / n))
        mode_log.append(neighbor_count / n)

        t_emb = encode(teacher, x, act)
        s_emb = encode(student, x, act)
        stores["teacher"].push_epoch(epoch_neighbors(t_emb, nb.e, epoch, candidate_mask))
        stores["student"].push_epoch(epoch_neighbors(s_emb, nb.e, epoch, candidate_mask))

        # maturity for the next epoch: is an augmented view's nearest clean
        # teacher embedding (self included) the sample itself?
        probes = np.array([
            augment(x[i], cfg.augment, derive_rng(cfg.seed, STREAM_MATURITY, epoch, i))
            for i in range(n)
        ])
        mature = nearest_is_self(encode(teacher, probes, act), t_emb)
        log.debug("epoch %d loss %.6f neighbor-mode %.3f", epoch, loss_curve[-1], mode_log[-1])

    return TrainArtifacts(
        teacher_embeddings=encode(teacher, x, act),
        student_embeddings=encode(student, x, act),
        teacher_graph=build_graph(stores["teacher"]),
        student_graph=build_graph(stores["student"]),
        loss_curve=loss_curve,
        mode_log=mode_log,
        teacher_store=stores["teacher"],
        student_store=stores["student"],
        maturity_used=maturity_used,
    )
