"""Reverse-mode gradients against hand derivatives and central differences."""

import numpy as np
import pytest

from graphssl import autodiff as ad
from graphssl.errors import UnsupportedPrimitive, ValidationFailure
from graphssl.nn import init_mlp, mlp
from graphssl.numerics import ParamSet, softmax


def _rng(seed=0):
    return np.random.default_rng(seed)


class TestHandDerivatives:
    def test_half_squared_norm(self):
        def model(p, x):
            return ad.matmul(x, p["W"])

        grads = ad.backward_grad(model, {"W": [[2.0]]}, [[1.0]],
                                 lambda out: 0.5 * ad.sum(out * out))
        np.testing.assert_array_equal(grads["W"], [[2.0]])

    def test_unused_parameter_gets_zero(self):
        def model(p, x):
            return ad.matmul(x, p["W"])

        grads = ad.backward_grad(model, {"W": [[1.5]], "unused": [[3.0, 4.0]]}, [[2.0]],
                                 lambda out: ad.sum(out))
        np.testing.assert_array_equal(grads["unused"], [[0.0, 0.0]])
        np.testing.assert_array_equal(grads["W"], [[2.0]])

    def test_shared_node_accumulates(self):
        # d/dw (w*w + w) = 2w + 1
        def model(p, x):
            return p["w"] * p["w"] + p["w"]

        grads = ad.backward_grad(model, {"w": [[3.0]]}, [[0.0]], lambda out: ad.sum(out))
        assert grads["w"].item() == 7.0

    def test_broadcast_bias_gradient_sums_rows(self):
        def model(p, x):
            return x + p["b"]

        grads = ad.backward_grad(model, {"b": np.zeros((1, 3))}, np.ones((4, 3)),
                                 lambda out: ad.sum(out))
        np.testing.assert_array_equal(grads["b"], [[4.0, 4.0, 4.0]])

    def test_backward_needs_scalar(self):
        with pytest.raises(ValidationFailure):
            ad.backward(ad.lift(np.ones((2, 2))))


class TestUnsupported:
    def test_numpy_ufunc_on_tensor(self):
        with pytest.raises(UnsupportedPrimitive):
            np.exp(ad.lift([[1.0]]))

    def test_numpy_function_on_tensor(self):
        with pytest.raises(UnsupportedPrimitive):
            np.concatenate([ad.lift([[1.0]]), ad.lift([[2.0]])])

    def test_model_must_return_tensor(self):
        with pytest.raises(UnsupportedPrimitive):
            ad.backward_grad(lambda p, x: 1.0, {"w": [[1.0]]}, [[1.0]], lambda out: out)


class TestGradCheck:
    def test_linear_model_tight(self):
        rng = _rng(1)
        params = {"W": rng.normal(size=(4, 2)), "b": rng.normal(size=(1, 2))}
        x = rng.normal(size=(5, 4))
        target = rng.normal(size=(5, 2))

        def model(p, x):
            return ad.matmul(x, p["W"]) + p["b"]

        def loss(out):
            diff = out - target
            return ad.mean(diff * diff)

        report = ad.grad_check(model, params, x, loss, tolerance=1e-6)
        assert report.passed, report.max_rel_error

    def test_mlp_softmax_cross_entropy(self):
        rng = _rng(2)
        params = init_mlp(rng, (5, 7, 3), "net")
        x = rng.normal(size=(6, 5))
        teacher = softmax(rng.normal(size=(6, 3)))

        def model(p, x):
            return mlp(p, "net", x, "tanh")

        report = ad.grad_check(model, params, x,
                               lambda out: ad.cross_entropy_rows(teacher, out, 1.0))
        assert report.passed, report.max_rel_error

    def test_three_layer_mlp_cosine_distance(self):
        rng = _rng(3)
        params = init_mlp(rng, (4, 6, 6, 3), "net")
        x = rng.normal(size=(5, 4))
        target = rng.normal(size=(5, 3))

        def model(p, x):
            return mlp(p, "net", x, "tanh")

        report = ad.grad_check(model, params, x,
                               lambda out: ad.mean(ad.cosine_distance_rows(out, target)))
        assert report.passed, report.max_rel_error

    @pytest.mark.parametrize("op", ["relu", "leaky_relu", "sqrt", "log", "div", "maximum",
                                    "concat", "log_softmax", "masked_softmax", "transpose"])
    def test_primitives(self, op):
        rng = _rng(4)
        # keep values away from the relu/max kinks and positive for sqrt/log
        params = {"a": rng.uniform(0.5, 2.0, size=(3, 3)) * rng.choice([-1, 1], size=(3, 3)),
                  "b": rng.uniform(0.5, 2.0, size=(3, 3))}
        mask = np.eye(3, dtype=bool) | (rng.random((3, 3)) > 0.5)
        weights = rng.normal(size=(3, 3))
        fns = {
            "relu": lambda p: ad.relu(p["a"]) * p["b"],
            "leaky_relu": lambda p: ad.leaky_relu(p["a"]) * p["b"],
            "sqrt": lambda p: ad.sqrt(p["b"]) * p["a"],
            "log": lambda p: ad.log(p["b"]) * p["a"],
            "div": lambda p: p["a"] / p["b"],
            "maximum": lambda p: ad.maximum([p["a"], p["b"] - 1.25]),
            "concat": lambda p: ad.matmul(ad.concat([p["a"], p["b"]], axis=1), np.ones((6, 3))),
            "log_softmax": lambda p: ad.log_softmax(p["a"] * p["b"], 0.5),
            "masked_softmax": lambda p: ad.masked_softmax(p["a"], mask) * p["b"],
            "transpose": lambda p: p["a"].T @ p["b"],
        }

        def model(p, x):
            return fns[op](p)

        report = ad.grad_check(model, params, np.zeros((1, 1)),
                               lambda out: ad.sum(out * weights))
        assert report.passed, report.max_rel_error

    def test_corrupted_gradient_fails(self):
        rng = _rng(5)
        params = {"W": rng.normal(size=(3, 2))}
        x = rng.normal(size=(4, 3))

        def model(p, x):
            return ad.tanh(ad.matmul(x, p["W"]))

        loss = lambda out: ad.sum(out * out)  # noqa: E731
        good = ad.backward_grad(model, params, x, loss)
        bad = ParamSet({"W": good["W"] * 1.01})
        bad["W"][0, 0] += 0.5
        report = ad.grad_check(model, params, x, loss, grads=bad)
        assert not report.passed
        assert report.worst > 1e-4

    def test_stop_gradient_blocks(self):
        def model(p, x):
            return ad.stop_gradient(p["w"]) * p["v"]

        grads = ad.backward_grad(model, {"w": [[2.0]], "v": [[3.0]]}, [[0.0]],
                                 lambda out: ad.sum(out))
        assert grads["w"].item() == 0.0
        assert grads["v"].item() == 2.0
