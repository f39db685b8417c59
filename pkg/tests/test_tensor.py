import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from tsfn import oracles
from tsfn.errors import DimensionError, InvalidInputError
from tsfn.gradcheck import analytic_grads, grad_check
from tsfn.tensor import (Tensor, backward, concat, exp, global_avg_pool, linear, log, mean,
                         read_tensor, relu, reshape, sigmoid, softmax, stack, tsum, write_tensor,
                         zero_grad)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def param(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


class TestTensorType:
    def test_values_are_flat_row_major(self):
        t = Tensor(np.arange(6.0).reshape(2, 3))
        assert t.shape == (2, 3)
        assert list(t.values) == [0, 1, 2, 3, 4, 5]
        assert t.values.size == np.prod(t.shape)

    def test_grad_matches_value_length(self):
        w = param(np.ones((2, 3)))
        backward(tsum(w * 2.0))
        assert w.grad.shape == w.shape

    def test_serialization_roundtrip(self):
        t = Tensor(np.random.default_rng(0).normal(size=(2, 3, 4)))
        buf = io.BytesIO()
        write_tensor(buf, t)
        raw = buf.getvalue()
        assert raw[:4] == b"TSR1"
        assert int.from_bytes(raw[4:8], "little") == 3
        buf.seek(0)
        back = read_tensor(buf)
        assert back.shape == t.shape
        np.testing.assert_array_equal(back.data, t.data)

    def test_truncated_payload_rejected(self):
        buf = io.BytesIO()
        write_tensor(buf, Tensor(np.ones(4)))
        with pytest.raises(InvalidInputError):
            read_tensor(io.BytesIO(buf.getvalue()[:-3]))


class TestBackward:
    def test_sum_gives_unit_grads(self):
        w = param(np.random.default_rng(1).normal(size=5))
        backward(tsum(w))
        np.testing.assert_array_equal(w.grad, np.ones(5))

    def test_sigmoid_slope_at_zero(self):
        w = param(0.0)
        backward(sigmoid(w))
        assert w.grad == pytest.approx(0.25, abs=1e-15)

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(InvalidInputError):
            backward(param([1.0, 2.0]) * 3.0)

    def test_grads_accumulate_until_reset(self):
        w = param([1.0, -2.0])
        backward(tsum(w * w))
        backward(tsum(w * w))
        np.testing.assert_array_equal(w.grad, 2 * 2 * w.data)
        zero_grad([w])
        backward(tsum(w * w))
        np.testing.assert_array_equal(w.grad, 2 * w.data)

    def test_shared_node_visited_once(self):
        w = param(3.0)
        h = w * w
        backward(h + h)  # d/dw 2w^2 = 4w
        assert w.grad == pytest.approx(12.0)

    def test_every_parameter_gets_a_grad(self):
        a, b = param([1.0, 2.0]), param([5.0])
        backward(tsum(a) * 0.0 + tsum(b))
        assert a.grad is not None and b.grad is not None

    def test_quadratic_grad_check_is_tight(self):
        w = param(np.random.default_rng(2).normal(size=7))
        assert grad_check(lambda: tsum(w * w), [w]) < 1e-8

    def test_corrupted_gradient_is_detected(self):
        w = param(np.random.default_rng(3).normal(size=4))
        f = lambda: tsum(sigmoid(w) * w)
        g = analytic_grads(f, [w])
        g[0][2] *= 2.0
        assert grad_check(f, [w], analytic=g) > 0.3

    @settings(max_examples=30, deadline=None)
    @given(hnp.arrays(np.float64, (3, 4), elements=st.floats(-3, 3)),
           hnp.arrays(np.float64, (4,), elements=st.floats(-3, 3)))
    def test_broadcast_arithmetic_grads(self, a, b):
        x, y = param(a), param(b)
        f = lambda: tsum(exp(x * 0.3) * y - (x / (y * y + 1.0)) + x ** 2)
        assert grad_check(f, [x, y]) < 1e-4


class TestActivations:
    def test_sigmoid_symmetry_point(self):
        assert sigmoid(Tensor(0.0)).item() == 0.5

    @given(hnp.arrays(np.float64, 6, elements=finite))
    def test_sigmoid_pairs_sum_to_one(self, x):
        s = sigmoid(Tensor(x)).data + sigmoid(Tensor(-x)).data
        np.testing.assert_allclose(s, 1.0, atol=1e-15)

    def test_sigmoid_extremes(self):
        out = sigmoid(Tensor(np.array([50.0, -50.0, 800.0, -800.0]))).data
        assert np.all(np.isfinite(out))
        assert abs(out[0] - 1.0) < 1e-12 and abs(out[1]) < 1e-12
        assert out[1] == pytest.approx(oracles.sigmoid_mp(-50.0), rel=1e-14)

    def test_softmax_uniform(self):
        np.testing.assert_allclose(softmax(Tensor(np.zeros(3))).data, [1 / 3] * 3, atol=1e-16)

    @given(st.floats(-700, 700))
    def test_softmax_constant_vector_is_uniform(self, a):
        np.testing.assert_allclose(softmax(Tensor(np.full(4, a))).data, 0.25, atol=1e-15)

    @given(hnp.arrays(np.float64, 6, elements=st.floats(-50, 50)), st.floats(-100, 100))
    def test_softmax_shift_invariant(self, x, c):
        p, q = softmax(Tensor(x)).data, softmax(Tensor(x + c)).data
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(p, q, atol=1e-12)

    def test_softmax_matches_extended_precision(self):
        x = np.random.default_rng(4).normal(scale=5, size=6)
        np.testing.assert_allclose(softmax(Tensor(x)).data, oracles.softmax_mp(x), atol=1e-12)

    def test_softmax_huge_logits_finite(self):
        p = softmax(Tensor(np.array([1000.0, 0.0, -1000.0]))).data
        assert np.all(np.isfinite(p)) and p[0] == 1.0

    def test_relu(self):
        np.testing.assert_array_equal(relu(Tensor(np.array([-1.0, 0.0, 2.0]))).data, [0, 0, 2])

    def test_log_floor_blocks_gradient(self):
        w = param([0.0, 0.5])
        backward(tsum(log(w, floor=1e-12)))
        assert w.grad[0] == 0.0 and w.grad[1] == pytest.approx(2.0)


class TestPoolingAndLinear:
    def test_constant_pool(self):
        assert global_avg_pool(Tensor(np.full((2, 3), 3.7)), (0, 1)).item() == pytest.approx(3.7)

    def test_mean_of_vector(self):
        assert global_avg_pool(Tensor(np.array([1.0, 2, 3, 4])), (0,)).item() == 2.5

    def test_pool_matches_flat_mean(self):
        x = np.random.default_rng(5).normal(size=(4, 5, 5))
        got = global_avg_pool(Tensor(x), (0, 1, 2)).item()
        assert abs(got - oracles.mean_flat(x)) < 1e-12

    def test_pool_empty_axis(self):
        with pytest.raises(InvalidInputError):
            global_avg_pool(Tensor(np.zeros((2, 0, 3))), (1,))

    def test_linear_identity_and_bias(self):
        x = np.array([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(linear(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3))).data, x)
        b = np.array([0.5, 7.0])
        np.testing.assert_array_equal(linear(Tensor(x), Tensor(np.zeros((2, 3))), Tensor(b)).data, b)

    def test_linear_matches_dot_oracle(self):
        rng = np.random.default_rng(6)
        x, w, b = rng.normal(size=4), rng.normal(size=(3, 4)), rng.normal(size=3)
        got = linear(Tensor(x), Tensor(w), Tensor(b)).data
        np.testing.assert_allclose(got, oracles.linear_loops(x, w, b), atol=1e-12)

    def test_linear_batched_rows(self):
        rng = np.random.default_rng(7)
        x, w, b = rng.normal(size=(5, 4)), rng.normal(size=(3, 4)), rng.normal(size=3)
        got = linear(Tensor(x), Tensor(w), Tensor(b)).data
        np.testing.assert_allclose(got, x @ w.T + b, atol=1e-12)

    def test_linear_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            linear(Tensor(np.ones(4)), Tensor(np.ones((3, 5))), Tensor(np.ones(3)))

    def test_shape_ops_roundtrip_grads(self):
        a, b = param(np.ones((2, 3))), param(np.ones((2, 3)))
        f = lambda: tsum(reshape(concat([a, stack([b[0], b[1]])], axis=0), (3, 4)) ** 2 * 0.5)
        assert grad_check(f, [a, b]) < 1e-8

    def test_mean_axis(self):
        x = Tensor(np.arange(6.0).reshape(2, 3))
        np.testing.assert_array_equal(mean(x, axis=1).data, [1.0, 4.0])
