"""KNN graph materialization, queries, statistics and the GDGR format."""

import struct

import numpy as np
import pytest

from graphssl.errors import BadMagic, BadNode, CorruptEdge, EmptyStore, FormatError, TruncatedFile
from graphssl.graph import (
    KnnGraph,
    build_graph,
    graph_from_bytes,
    graph_stats,
    graph_to_bytes,
    label_purity,
    load_graph,
    save_graph,
)
from graphssl.neighbors import CircularEdgeStore, EpochNeighborSet, NeighborConfig, epoch_neighbors
from oracles import brute_edges, brute_neighbors, random_epoch_sets


def _store_from(sets, k, w, n):
    store = CircularEdgeStore(NeighborConfig(k=k, w=w, e=k + 1), n)
    for s in sets:
        store.push_epoch(s)
    return store


class TestBuildGraph:
    def test_three_node_example(self):
        x = np.array([[1.0, 0.0], [0.9, np.sqrt(1 - 0.81)], [0.1, np.sqrt(1 - 0.01)]])
        sets = [brute_neighbors(x, 1)]
        g = build_graph(_store_from(sets, 1, 1, 3))
        sims = x @ x.T
        np.fill_diagonal(sims, -np.inf)
        assert g.edge_set() == {(0, 1), (1, 0), (2, int(sims[2].argmax()))}

    def test_repeated_neighbor_collapses(self):
        w = 4
        ids = np.array([[1], [0], [0]])
        sims = np.array([[0.6], [0.6], [0.3]])
        sets = [EpochNeighborSet(t, ids, sims, np.zeros(3, bool)) for t in range(w)]
        g = build_graph(_store_from(sets, 1, w, 3))
        assert g.num_edges == 3
        assert g.out_neighbors(0) == [(1, pytest.approx(w * 0.6))]

    def test_single_push_degree_exactly_k(self):
        rng = np.random.default_rng(0)
        g = build_graph(_store_from(random_epoch_sets(rng, 12, 2, 1), 2, 5, 12))
        np.testing.assert_array_equal(g.out_degree(), 2)

    def test_matches_brute_force_enumeration(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            n = int(rng.integers(3, 15))
            k = int(rng.integers(1, n - 1))
            w = int(rng.integers(1, 5))
            sets = random_epoch_sets(rng, n, k, int(rng.integers(1, 9)))
            g = build_graph(_store_from(sets, k, w, n))
            ref = brute_edges(sets, w, k, n)
            got = {(int(s), int(d)): float(wt) for s, d, wt in zip(g.src, g.dst, g.weight)}
            assert got.keys() == ref.keys()
            for key in ref:
                assert got[key] == pytest.approx(ref[key], abs=1e-9)
            deg = g.out_degree()
            assert deg.min() >= k and deg.max() <= k * min(w, len(sets))

    def test_empty_store(self):
        with pytest.raises(EmptyStore):
            build_graph(CircularEdgeStore(NeighborConfig(), 4))


class TestKnnGraph:
    def test_out_neighbors_sorted(self):
        g = KnnGraph(4, [0, 0], [3, 1], [0.3, 0.1])
        assert g.out_neighbors(0) == [(1, 0.1), (3, 0.3)]
        assert g.out_neighbors(2) == []

    def test_bad_node(self):
        g = KnnGraph(2, [0], [1], [1.0])
        with pytest.raises(BadNode):
            g.out_neighbors(2)

    @pytest.mark.parametrize("src,dst", [([0], [0]), ([0], [5]), ([0, 0], [1, 1])])
    def test_rejects_corrupt(self, src, dst):
        with pytest.raises(CorruptEdge):
            KnnGraph(3, src, dst, np.ones(len(src)))

    def test_adjacency(self):
        g = KnnGraph(3, [0, 2], [1, 0], [0.5, 2.0])
        np.testing.assert_array_equal(g.adjacency(), [[0, 1, 0], [0, 0, 0], [1, 0, 0]])
        assert g.adjacency(weighted=True)[2, 0] == 2.0


class TestGraphStats:
    def test_two_cycle(self):
        stats = graph_stats(KnnGraph(2, [0, 1], [1, 0], [1.0, 1.0]))
        assert stats.weak_components == 1
        assert (stats.min_out_degree, stats.max_out_degree) == (1, 1)

    def test_two_components(self):
        stats = graph_stats(KnnGraph(4, [0, 1, 2, 3], [1, 0, 3, 2], np.ones(4)))
        assert stats.weak_components == 2
        assert stats.edges == 4

    def test_label_purity(self):
        g = KnnGraph(4, [0, 1, 2, 3], [1, 0, 0, 2], np.ones(4))
        assert label_purity(g, [0, 0, 1, 1]) == 0.75


class TestGraphFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(20, 5))
        store = _store_from([epoch_neighbors(x, 4, t) for t in range(3)], 3, 3, 20)
        g = build_graph(store)
        save_graph(g, tmp_path / "g.gdgr")
        again = load_graph(tmp_path / "g.gdgr")
        assert again.edge_set() == g.edge_set()
        np.testing.assert_array_equal(again.weight, g.weight.astype(np.float32))
        assert graph_to_bytes(again) == graph_to_bytes(g)

    def test_record_layout(self):
        blob = graph_to_bytes(KnnGraph(3, [1], [2], [0.5]))
        assert struct.unpack_from("<4sIQQ", blob) == (b"GDGR", 1, 3, 1)
        assert struct.unpack_from("<QQf", blob, 24) == (1, 2, 0.5)
        assert len(blob) == 24 + 20

    def test_self_loop_file(self):
        blob = struct.pack("<4sIQQ", b"GDGR", 1, 3, 1) + struct.pack("<QQf", 1, 1, 0.5)
        with pytest.raises(CorruptEdge):
            graph_from_bytes(blob)

    def test_bad_files(self):
        blob = graph_to_bytes(KnnGraph(3, [1], [2], [0.5]))
        with pytest.raises(BadMagic):
            graph_from_bytes(b"")
        with pytest.raises(TruncatedFile):
            graph_from_bytes(blob[:-2])
        with pytest.raises(FormatError):
            graph_from_bytes(blob + b"\0")
