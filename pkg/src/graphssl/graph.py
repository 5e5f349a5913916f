"""Directed KNN graphs materialized from a neighbor store.

Graph files ("GDGR v1", little-endian)::

    magic b"GDGR" | u32 version=1 | u64 N | u64 E | E x (u64 src, u64 dst, float32 weight)

Records are sorted by ``(src, dst)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from os import PathLike

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import BadMagic, BadNode, CorruptEdge, EmptyStore, FormatError, TruncatedFile
from .neighbors import CircularEdgeStore

GDGR_HEADER = struct.Struct("<4sIQQ")
EDGE_RECORD = np.dtype([("src", "<u8"), ("dst", "<u8"), ("weight", "<f4")])


@dataclass(eq=False)
class KnnGraph:
    n: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)
        self.weight = np.asarray(self.weight, dtype=np.float64)
        order = np.lexsort((self.dst, self.src))
        self.src, self.dst, self.weight = self.src[order], self.dst[order], self.weight[order]
        if self.src.size:
            if np.any(self.src == self.dst):
                raise CorruptEdge("self-loop")
            if min(self.src.min(), self.dst.min()) < 0 or max(self.src.max(), self.dst.max()) >= self.n:
                raise CorruptEdge("node id out of range")
            keys = self.src * self.n + self.dst
            if np.any(keys[1:] == keys[:-1]):
                raise CorruptEdge("duplicate edge")
        self.out_index = np.searchsorted(self.src, np.arange(self.n + 1), side="left")

    @property
    def num_edges(self) -> int:
        return int(self.src.size)

    def out_degree(self) -> np.ndarray:
        return np.diff(self.out_index)

    def out_neighbors(self, v: int) -> list[tuple[int, float]]:
        if not 0 <= v < self.n:
            raise BadNode(f"node {v} not in graph of {self.n} nodes")
        lo, hi = self.out_index[v], self.out_index[v + 1]
        return [(int(d), float(w)) for d, w in zip(self.dst[lo:hi], self.weight[lo:hi])]

    def adjacency(self, weighted: bool = False) -> np.ndarray:
        """Dense (N, N) matrix with ``A[i, j]`` set for every edge i -> j."""
        a = np.zeros((self.n, self.n))
        a[self.src, self.dst] = self.weight if weighted else 1.0
        return a

    def edge_set(self) -> set[tuple[int, int]]:
        return set(zip(self.src.tolist(), self.dst.tolist()))

    def __eq__(self, other):
        if not isinstance(other, KnnGraph):
            return NotImplemented
        return (self.n == other.n and np.array_equal(self.src, other.src)
                and np.array_equal(self.dst, other.dst)
                and np.array_equal(self.weight, other.weight))


def build_graph(store: CircularEdgeStore) -> KnnGraph:
    """Union of every stored epoch's top-k edges; repeats collapse into one summed weight."""
    slots = store.filled_slots()
    if not slots:
        raise EmptyStore("no epochs pushed yet")
    n, k = store.n, store.config.k
    src = np.tile(np.repeat(np.arange(n), k), len(slots))
    dst = np.concatenate([store.dst[s].reshape(-1) for s in slots])
    sim = np.concatenate([store.sim[s].reshape(-1) for s in slots])
    keys, inverse = np.unique(src * n + dst, return_inverse=True)
    # bincount accumulates in input order, i.e. ascending slot, like aggregate_scores
    weight = np.bincount(inverse, weights=sim, minlength=keys.size)
    return KnnGraph(n, keys // n, keys % n, weight)


@dataclass
class GraphStats:
    nodes: int
    edges: int
    min_out_degree: int
    mean_out_degree: float
    max_out_degree: int
    weak_components: int


def graph_stats(g: KnnGraph) -> GraphStats:
    deg = g.out_degree()
    adj = coo_matrix((np.ones(g.num_edges), (g.src, g.dst)), shape=(g.n, g.n))
    n_comp, _ = connected_components(adj, directed=True, connection="weak")
    return GraphStats(g.n, g.num_edges, int(deg.min()), float(deg.mean()), int(deg.max()),
                      int(n_comp))


def label_purity(g: KnnGraph, labels) -> float:
    """Fraction of edges joining same-label nodes (evaluation only)."""
    labels = np.asarray(labels)
    if g.num_edges == 0:
        return float("nan")
    return float(np.mean(labels[g.src] == labels[g.dst]))


def graph_to_bytes(g: KnnGraph) -> bytes:
    rec = np.empty(g.num_edges, dtype=EDGE_RECORD)
    rec["src"], rec["dst"], rec["weight"] = g.src, g.dst, g.weight
    return GDGR_HEADER.pack(b"GDGR", 1, g.n, g.num_edges) + rec.tobytes()


def save_graph(g: KnnGraph, path: str | PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(graph_to_bytes(g))


def graph_from_bytes(blob: bytes) -> KnnGraph:
    if len(blob) < 4 or blob[:4] != b"GDGR":
        raise BadMagic("expected magic b'GDGR'")
    if len(blob) < GDGR_HEADER.size:
        raise TruncatedFile("GDGR header truncated")
    _, version, n, e = GDGR_HEADER.unpack_from(blob)
    if version != 1:
        raise FormatError(f"unsupported version {version}")
    need = GDGR_HEADER.size + e * EDGE_RECORD.itemsize
    if len(blob) < need:
        raise TruncatedFile(f"GDGR needs {need} bytes, file has {len(blob)}")
    if len(blob) > need:
        raise FormatError("trailing bytes after GDGR payload")
    rec = np.frombuffer(blob, dtype=EDGE_RECORD, count=e, offset=GDGR_HEADER.size)
    if np.any(rec["src"] >= n) or np.any(rec["dst"] >= n):
        raise CorruptEdge("node id out of range")
    if np.any(rec["src"] == rec["dst"]):
        raise CorruptEdge("self-loop")
    return KnnGraph(n, rec["src"].astype(np.int64), rec["dst"].astype(np.int64),
                    rec["weight"].astype(np.float64))


def load_graph(path: str | PathLike) -> KnnGraph:
    with open(path, "rb") as fh:
        return graph_from_bytes(fh.read())
