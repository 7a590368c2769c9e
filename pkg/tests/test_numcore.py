import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import matmul_loops
from pgs2s.errors import DimensionError, NumericError, ProbeError
from pgs2s.numcore import (SGD, Adam, ParamBlock, check_finite_grads, clip_grad_norm, digest,
                           grad_check, log_softmax_rows, make_optimizer, make_rng, matmul,
                           sigmoid, softmax_rows)


class TestMatmul:
    def test_hand_example(self):
        a = [[1.0, 2.0], [3.0, 4.0]]
        b = [[5.0, 6.0], [7.0, 8.0]]
        np.testing.assert_array_equal(matmul(a, b), [[19.0, 22.0], [43.0, 50.0]])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 10_000))
    def test_against_triple_loop(self, n, k, m, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=(n, k)), rng.normal(size=(k, m))
        np.testing.assert_allclose(matmul(a, b), matmul_loops(a.tolist(), b.tolist()), rtol=0, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_overflow_is_numeric_error(self):
        with pytest.raises(NumericError):
            matmul([[1e308, 1e308]], [[10.0], [10.0]])


class TestActivations:
    def test_sigmoid_extremes_finite(self):
        s = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
        np.testing.assert_allclose(s, [0.0, 0.5, 1.0])
        assert np.all(np.isfinite(s))

    def test_softmax_rows_sum_to_one(self):
        x = make_rng(1, "t").normal(size=(4, 3)) * 50
        p = softmax_rows(x)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-15)
        np.testing.assert_allclose(np.exp(log_softmax_rows(x)), p, atol=1e-15)


class TestParamBlocks:
    def test_digest_changes_only_with_values(self):
        b = ParamBlock("w", np.arange(4.0))
        d0 = digest([b])
        b.grad += 3.0
        assert digest([b]) == d0
        b.value[1] += 1e-300
        b.value[1] -= 1e-300
        assert digest([b]) == d0
        b.value[0] = np.nextafter(b.value[0], 1.0)
        assert digest([b]) != d0

    def test_check_finite_grads_names_block(self):
        b = ParamBlock("enc.U_f", np.zeros(3))
        b.grad[1] = np.nan
        with pytest.raises(NumericError, match="enc.U_f"):
            check_finite_grads([b], "unit")

    def test_clip(self):
        b = ParamBlock("w", np.zeros(2))
        b.grad[:] = [3.0, 4.0]
        assert clip_grad_norm([b], 1.0) == 5.0
        np.testing.assert_allclose(b.grad, [0.6, 0.8])


class TestOptimizers:
    def test_sgd_descent_and_ascent(self):
        b = ParamBlock("w", np.ones(2))
        b.grad[:] = 1.0
        SGD(0.1).step([b])
        np.testing.assert_allclose(b.value, 0.9)
        SGD(0.1, ascent=True).step([b])
        np.testing.assert_allclose(b.value, 1.0)

    def test_adam_first_step_is_lr_sign(self):
        b = ParamBlock("w", np.zeros(3))
        b.grad[:] = [2.0, -0.5, 1e-3]
        Adam(lr=0.01).step([b])
        np.testing.assert_allclose(b.value, [-0.01, 0.01, -0.01], rtol=1e-4)

    def test_adam_minimises_quadratic(self):
        b = ParamBlock("w", np.array([3.0, -2.0]))
        opt = make_optimizer("adam", 0.1)
        for _ in range(500):
            b.grad[:] = 2 * b.value
            opt.step([b])
        assert np.max(np.abs(b.value)) < 1e-2


class TestRng:
    def test_streams_are_reproducible_and_distinct(self):
        a1 = make_rng(7, "shuffle").random(5)
        a2 = make_rng(7, "shuffle").random(5)
        b = make_rng(7, "explore").random(5)
        np.testing.assert_array_equal(a1, a2)
        assert not np.allclose(a1, b)


class TestGradCheck:
    def test_quadratic(self):
        b = ParamBlock("w", np.array([1.0, -2.0, 0.5]))

        def f():
            b.grad[:] = 2 * b.value * np.array([1.0, 2.0, 3.0])
            return float(np.sum(np.array([1.0, 2.0, 3.0]) * b.value ** 2))
        assert grad_check(f, [b]) < 1e-8

    def test_detects_wrong_gradient(self):
        b = ParamBlock("w", np.array([1.0, 2.0]))

        def f():
            b.grad[:] = b.value  # should be 2 * value
            return float(np.sum(b.value ** 2))
        assert grad_check(f, [b]) > 0.1

    def test_nonfinite_probe(self):
        b = ParamBlock("w", np.array([0.0]))

        def f():
            return float(np.log(b.value[0])) if b.value[0] > 0 else float("nan")
        with pytest.raises(ProbeError):
            grad_check(f, [b])
