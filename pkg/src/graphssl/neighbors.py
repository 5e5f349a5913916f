"""Per-epoch nearest neighbors and the rolling multi-epoch neighbor store.

The store keeps, for each of the last ``w`` epochs, every node's top-``k``
neighbors together with the cosine similarity measured in that epoch. Epoch
``tau`` always lives in slot ``tau % w``, so a new epoch overwrites the oldest.

Store files ("GDNS v1", little-endian)::

    magic b"GDNS" | u32 version | u64 N | u32 k | u32 w | u32 filled | u64 next_epoch
    then w slots: u64 epoch_id | N*k u64 sources | N*k u64 destinations | N*k float32 sims

Empty slots carry ``epoch_id = 2**64 - 1`` and the same sentinel as destinations.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from os import PathLike

import numpy as np

from .errors import (
    BadMagic,
    ConfigMismatch,
    EmptyStore,
    EmptySupport,
    FormatError,
    TooFewSamples,
    TruncatedFile,
    ValidationError,
)
from .numerics import as_matrix, cosine_matrix, softmax

GDNS_HEADER = struct.Struct("<4sIQIIIQ")
EMPTY = np.uint64(0xFFFFFFFFFFFFFFFF)


@dataclass(frozen=True)
class NeighborConfig:
    """``e`` neighbors tracked per epoch, ``k`` kept as graph edges, ``w`` epochs of memory."""

    k: int = 1
    w: int = 15
    e: int | None = None

    def __post_init__(self):
        if self.e is None:
            object.__setattr__(self, "e", 4 * self.k)
        if self.k < 1:
            raise ValidationError("neighbor.k", "must be >= 1")
        if self.w < 1:
            raise ValidationError("neighbor.w", "must be >= 1")
        if not self.k < self.e:
            raise ValidationError("neighbor.k", f"k={self.k} must be < e={self.e}")


class TeacherInputMode(enum.Enum):
    AUGMENTED = "augmented"
    NEIGHBOR = "neighbor"


@dataclass
class EpochNeighborSet:
    """Every anchor's top-e neighbors for one epoch, similarity-descending."""

    epoch: int
    ids: np.ndarray          # (N, e) int64
    sims: np.ndarray         # (N, e) float64
    top1_is_self: np.ndarray  # (N,) bool

    @property
    def n(self) -> int:
        return self.ids.shape[0]


def _ranked(sim: np.ndarray, e: int) -> tuple[np.ndarray, np.ndarray]:
    # stable sort on -sim: ties keep ascending node index
    order = np.argsort(-sim, axis=1, kind="stable")[:, :e]
    return order.astype(np.int64), np.take_along_axis(sim, order, axis=1)


def epoch_neighbors(embeddings, e: int, epoch: int = 0,
                    candidate_mask: np.ndarray | None = None) -> EpochNeighborSet:
    """Top-``e`` cosine neighbors for every row, self excluded.

    ``candidate_mask`` restricts which rows may be chosen as neighbors.
    ``top1_is_self`` reports whether, with self allowed, a row's own index would
    come first under the same tie-break rule.
    """
    x = as_matrix(embeddings, "embeddings")
    n = x.shape[0]
    if e < 1:
        raise ValidationError("e", "must be >= 1")
    sim = cosine_matrix(x)
    self_sim = np.diag(sim).copy()
    idx = np.arange(n)
    earlier = idx[None, :] < idx[:, None]
    beaten = (sim > self_sim[:, None]) | ((sim == self_sim[:, None]) & earlier)
    np.fill_diagonal(beaten, False)
    top1_is_self = ~beaten.any(axis=1)

    sim = sim.copy()
    np.fill_diagonal(sim, -np.inf)
    if candidate_mask is not None:
        sim[:, ~np.asarray(candidate_mask, dtype=bool)] = -np.inf
    available = np.isfinite(sim).sum(axis=1)
    if np.any(available < e):
        raise TooFewSamples(f"need {e} candidate neighbors, some rows have {available.min()}")
    ids, sims = _ranked(sim, e)
    return EpochNeighborSet(epoch, ids, sims, top1_is_self)


def topk_neighbors(embeddings, anchor: int, e: int) -> tuple[np.ndarray, np.ndarray, bool]:
    """Single-anchor view of :func:`epoch_neighbors`: ``(ids, sims, top1_is_self)``."""
    x = as_matrix(embeddings, "embeddings")
    n = x.shape[0]
    if not 0 <= anchor < n:
        raise ValidationError("anchor", f"{anchor} out of range")
    if not 1 <= e <= n - 1:
        raise TooFewSamples(f"e={e} needs 1 <= e <= N-1 with N={n}")
    row = cosine_matrix(x[anchor : anchor + 1], x)[0]
    self_sim = row[anchor]
    before = row[:anchor]
    top1_is_self = not (np.any(row > self_sim) or np.any(before == self_sim))
    row = row.copy()
    row[anchor] = -np.inf
    ids, sims = _ranked(row[None, :], e)
    return ids[0], sims[0], bool(top1_is_self)


def nearest_is_self(queries, embeddings) -> np.ndarray:
    """For each ``i``, whether row ``i`` of ``embeddings`` is the closest to ``queries[i]``.

    All rows (self included) are candidates; ties go to the lower index.
    """
    sim = cosine_matrix(queries, embeddings)
    return sim.argmax(axis=1) == np.arange(sim.shape[0])


@dataclass
class SimilarityScores:
    anchor: int
    scores: dict[int, float]


@dataclass
class SimilarityDistribution:
    anchor: int
    ids: np.ndarray
    probs: np.ndarray

    def as_dict(self) -> dict[int, float]:
        return {int(i): float(p) for i, p in zip(self.ids, self.probs)}


class CircularEdgeStore:
    """Fixed ``w``-slot ring of per-epoch top-``k`` neighbor lists for ``n`` nodes."""

    def __init__(self, config: NeighborConfig, n: int):
        if n < 2:
            raise TooFewSamples("store needs at least 2 nodes")
        self.config = config
        self.n = n
        w, k = config.w, config.k
        self.epoch_ids = np.full(w, -1, dtype=np.int64)
        self.dst = np.full((w, n, k), -1, dtype=np.int64)
        self.sim = np.zeros((w, n, k), dtype=np.float64)
        self.next_epoch = 0

    @property
    def capacity(self) -> int:
        return self.dst.size

    @property
    def filled(self) -> int:
        return int(np.count_nonzero(self.epoch_ids >= 0))

    def filled_slots(self) -> list[int]:
        return [s for s in range(self.config.w) if self.epoch_ids[s] >= 0]

    def push_epoch(self, sets: EpochNeighborSet, epoch: int | None = None) -> None:
        """Write the top-k prefix of ``sets`` into slot ``epoch % w``."""
        epoch = sets.epoch if epoch is None else epoch
        k = self.config.k
        if sets.ids.shape[0] != self.n:
            raise ConfigMismatch(f"store has {self.n} nodes, sets cover {sets.ids.shape[0]}")
        if sets.ids.shape[1] < k:
            raise ConfigMismatch(f"need at least k={k} neighbors per anchor")
        if epoch < 0:
            raise ConfigMismatch("epoch must be >= 0")
        ids = np.asarray(sets.ids[:, :k], dtype=np.int64)
        if np.any(ids == np.arange(self.n)[:, None]) or ids.min() < 0 or ids.max() >= self.n:
            raise ConfigMismatch("neighbor list contains a self-loop or bad node id")
        slot = epoch % self.config.w
        self.dst[slot] = ids
        self.sim[slot] = sets.sims[:, :k]
        self.epoch_ids[slot] = epoch
        self.next_epoch = max(self.next_epoch, epoch + 1)

    def aggregate_scores(self, anchor: int) -> SimilarityScores:
        """Sum, over stored epochs, of the similarity recorded for each candidate."""
        if self.filled == 0:
            raise EmptyStore("no epochs pushed yet")
        scores: dict[int, float] = {}
        for slot in self.filled_slots():
            for j, s in zip(self.dst[slot, anchor], self.sim[slot, anchor]):
                scores[int(j)] = scores.get(int(j), 0.0) + float(s)
        return SimilarityScores(anchor, dict(sorted(scores.items())))

    def distribution(self, anchor: int) -> SimilarityDistribution:
        return similarity_distribution(self.aggregate_scores(anchor))

    def __eq__(self, other):
        if not isinstance(other, CircularEdgeStore):
            return NotImplemented
        return (self.config == other.config and self.n == other.n
                and self.next_epoch == other.next_epoch
                and np.array_equal(self.epoch_ids, other.epoch_ids)
                and np.array_equal(self.dst, other.dst)
                and np.array_equal(self.sim, other.sim))

    # serialization -----------------------------------------------------------

    def to_bytes(self) -> bytes:
        c = self.config
        parts = [GDNS_HEADER.pack(b"GDNS", 1, self.n, c.k, c.w, self.filled, self.next_epoch)]
        src = np.repeat(np.arange(self.n, dtype="<u8"), c.k)
        for slot in range(c.w):
            empty = self.epoch_ids[slot] < 0
            epoch_id = EMPTY if empty else np.uint64(self.epoch_ids[slot])
            parts.append(struct.pack("<Q", int(epoch_id)))
            parts.append(src.tobytes())
            if empty:
                parts.append(np.full(self.n * c.k, EMPTY, dtype="<u8").tobytes())
                parts.append(np.zeros(self.n * c.k, dtype="<f4").tobytes())
            else:
                parts.append(self.dst[slot].reshape(-1).astype("<u8").tobytes())
                parts.append(self.sim[slot].reshape(-1).astype("<f4").tobytes())
        return b"".join(parts)

    def save(self, path: str | PathLike) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, blob: bytes, e: int | None = None) -> "CircularEdgeStore":
        if len(blob) < 4 or blob[:4] != b"GDNS":
            raise BadMagic("expected magic b'GDNS'")
        if len(blob) < GDNS_HEADER.size:
            raise TruncatedFile("GDNS header truncated")
        _, version, n, k, w, filled, next_epoch = GDNS_HEADER.unpack_from(blob)
        if version != 1:
            raise FormatError(f"unsupported version {version}")
        m = n * k
        slot_bytes = 8 + 8 * m + 8 * m + 4 * m
        need = GDNS_HEADER.size + w * slot_bytes
        if len(blob) < need:
            raise TruncatedFile(f"GDNS needs {need} bytes, file has {len(blob)}")
        if len(blob) > need:
            raise FormatError("trailing bytes after GDNS payload")
        e = e if e is not None else max(4 * k, k + 1)
        store = cls(NeighborConfig(k=k, w=w, e=e), n)
        store.next_epoch = next_epoch
        expected_src = np.repeat(np.arange(n, dtype=np.uint64), k)
        off = GDNS_HEADER.size
        for slot in range(w):
            (epoch_id,) = struct.unpack_from("<Q", blob, off)
            off += 8
            src = np.frombuffer(blob, "<u8", m, off)
            off += 8 * m
            dst = np.frombuffer(blob, "<u8", m, off)
            off += 8 * m
            sims = np.frombuffer(blob, "<f4", m, off)
            off += 4 * m
            if not np.array_equal(src, expected_src):
                raise FormatError(f"slot {slot}: source row does not match layout")
            if epoch_id == int(EMPTY):
                continue
            if epoch_id % w != slot:
                raise FormatError(f"slot {slot} holds epoch {epoch_id}")
            if np.any(dst >= n) or np.any(dst == src):
                raise FormatError(f"slot {slot}: bad destination")
            store.epoch_ids[slot] = epoch_id
            store.dst[slot] = dst.astype(np.int64).reshape(n, k)
            store.sim[slot] = sims.astype(np.float64).reshape(n, k)
        if store.filled != filled:
            raise FormatError(f"header says {filled} filled slots, found {store.filled}")
        return store

    @classmethod
    def load(cls, path: str | PathLike, e: int | None = None) -> "CircularEdgeStore":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), e=e)


def similarity_distribution(scores: SimilarityScores) -> SimilarityDistribution:
    """Softmax (temperature 1) over aggregated scores, candidates in ascending id order."""
    if not scores.scores:
        raise EmptySupport(f"anchor {scores.anchor} has no candidates")
    ids = np.array(sorted(scores.scores), dtype=np.int64)
    values = np.array([scores.scores[int(i)] for i in ids])
    return SimilarityDistribution(scores.anchor, ids, softmax(values))


def sample_neighbor(dist: SimilarityDistribution, rng: np.random.Generator) -> int:
    """Inverse-CDF draw over candidates in ascending id order."""
    cdf = np.cumsum(dist.probs)
    u = rng.random() * cdf[-1]
    pos = int(np.searchsorted(cdf, u, side="right"))
    return int(dist.ids[min(pos, len(dist.ids) - 1)])


def maturity_check(top1_is_self: bool) -> TeacherInputMode:
    return TeacherInputMode.NEIGHBOR if top1_is_self else TeacherInputMode.AUGMENTED
