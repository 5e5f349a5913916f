"""Linear probe and cosine kNN on frozen features."""

import numpy as np
import pytest

from graphssl.errors import DegenerateSplit
from graphssl.evaluation import knn_eval, make_split, train_linear_probe


def _perceptron_separates(x, y, epochs=1000):
    """Classic perceptron on {-1, +1} labels; converges iff the data are separable."""
    xb = np.hstack([x, np.ones((len(x), 1))])
    s = np.where(y == 1, 1.0, -1.0)
    w = np.zeros(xb.shape[1])
    for _ in range(epochs):
        mistakes = 0
        for xi, si in zip(xb, s):
            if si * (xi @ w) <= 0:
                w += si * xi
                mistakes += 1
        if mistakes == 0:
            return True
    return False


def _two_blobs(seed, n=100):
    rng = np.random.default_rng(seed)
    x = np.vstack([rng.normal(-2.0, 0.4, size=(n, 3)), rng.normal(2.0, 0.4, size=(n, 3))])
    y = np.repeat([0, 1], n)
    return x, y


class TestSplit:
    def test_disjoint_sorted_complete(self):
        train, val = make_split(50, 0.2, seed=1)
        assert len(val) == 10 and len(train) == 40
        assert np.all(np.diff(train) > 0) and np.all(np.diff(val) > 0)
        np.testing.assert_array_equal(np.sort(np.concatenate([train, val])), np.arange(50))

    def test_seeded(self):
        a, b = make_split(30, 0.3, 4), make_split(30, 0.3, 4)
        np.testing.assert_array_equal(a[1], b[1])

    @pytest.mark.parametrize("n,frac", [(1, 0.5), (10, 0.0), (10, 1.0), (3, 0.01)])
    def test_degenerate(self, n, frac):
        with pytest.raises(DegenerateSplit):
            make_split(n, frac, 0)


class TestLinearProbe:
    def test_separable(self):
        x, y = _two_blobs(0)
        assert _perceptron_separates(x, y)
        report = train_linear_probe(x, y, make_split(len(y), 0.2, 0))
        assert report.val_accuracy >= 0.99
        assert report.epochs == 500
        assert np.isfinite(report.final_loss)

    @pytest.mark.parametrize("seed", range(10))
    def test_shuffled_labels_at_chance(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(500, 16))
        y = rng.permutation(np.repeat(np.arange(5), 100))
        report = train_linear_probe(x, y, make_split(500, 0.2, seed))
        assert 0.1 <= report.val_accuracy <= 0.35

    def test_constant_features(self):
        y = np.repeat([0, 1, 2], [50, 30, 20])
        x = np.ones((100, 4))
        train, val = make_split(100, 0.3, 2)
        report = train_linear_probe(x, y, (train, val))
        prior = np.bincount(y[val]).max() / len(val)
        assert report.val_accuracy <= prior + 0.05

    def test_val_labels_unused_for_training(self):
        x, y = _two_blobs(1, n=30)
        split = make_split(len(y), 0.2, 0)
        y_noisy = y.copy()
        y_noisy[split[1]] = 1 - y_noisy[split[1]]
        a = train_linear_probe(x, y, split)
        b = train_linear_probe(x, y_noisy, split)
        assert a.train_accuracy == b.train_accuracy
        assert a.final_loss == b.final_loss
        assert a.val_accuracy + b.val_accuracy == pytest.approx(1.0)

    def test_single_train_class(self):
        x = np.random.default_rng(0).normal(size=(10, 2))
        with pytest.raises(DegenerateSplit):
            train_linear_probe(x, np.zeros(10, dtype=int), make_split(10, 0.2, 0))

    def test_overlapping_split(self):
        x, y = _two_blobs(0, n=5)
        with pytest.raises(DegenerateSplit):
            train_linear_probe(x, y, ([0, 1, 2], [2, 3]))


class TestKnn:
    def test_duplicate_point(self):
        x = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        y = np.array([0, 1, 1])
        assert knn_eval(x, y, ([0, 1], [2]), k_eval=1) == 1.0

    def test_separable(self):
        x, y = _two_blobs(3)
        assert knn_eval(x, y, make_split(len(y), 0.2, 0), k_eval=20) >= 0.99

    def test_tie_goes_to_lower_label(self):
        x = np.array([[1.0, 0.1], [1.0, -0.1], [1.0, 0.0]])
        assert knn_eval(x, np.array([1, 0, 1]), ([0, 1], [2]), k_eval=2) == 0.0

    def test_k_too_large(self):
        x, y = _two_blobs(0, n=5)
        with pytest.raises(DegenerateSplit):
            knn_eval(x, y, make_split(10, 0.2, 0), k_eval=9)
