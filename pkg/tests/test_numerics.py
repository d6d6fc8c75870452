import math

import numpy as np
import pytest

from matting import numerics as nx
from matting.numerics import Tape, Tensor, gradcheck
from matting.shared.errors import MattingError, NonFiniteError, ShapeError


def naive_conv2d(x, w, stride=1, padding=0):
    c_in, height, width = x.shape
    c_out, _, kh, kw = w.shape
    padded = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    out_h = (height + 2 * padding - kh) // stride + 1
    out_w = (width + 2 * padding - kw) // stride + 1
    out = np.zeros((c_out, out_h, out_w))
    for o in range(c_out):
        for i in range(out_h):
            for j in range(out_w):
                for c in range(c_in):
                    for u in range(kh):
                        for v in range(kw):
                            out[o, i, j] += w[o, c, u, v] * padded[c, i * stride + u, j * stride + v]
    return out


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


class TestTensor:
    def test_rejects_non_finite_values(self):
        with pytest.raises(NonFiniteError):
            Tensor([1.0, float("nan")])
        with pytest.raises(NonFiniteError):
            Tensor([float("inf")])

    def test_data_is_read_only(self):
        t = Tensor(np.zeros(3))
        with pytest.raises(ValueError):
            t.data[0] = 1.0

    def test_overflow_is_reported(self):
        with pytest.raises(NonFiniteError):
            nx.mul(Tensor([1e200]), Tensor([1e200]))

    def test_item_needs_single_element(self):
        assert Tensor([[2.5]]).item() == 2.5
        with pytest.raises(ShapeError):
            Tensor([1.0, 2.0]).item()


class TestConv2d:
    def test_identity_kernel(self, rng):
        x = rng.normal(size=(1, 5, 5))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        np.testing.assert_array_equal(nx.conv2d(x, w, padding=1).data, x)

    def test_ones_kernel_sums_window(self):
        out = nx.conv2d(np.ones((1, 3, 3)), np.ones((1, 1, 3, 3)))
        assert out.shape == (1, 1, 1)
        assert out.item() == 9.0

    def test_strided_conv_matches_loop_oracle(self, rng):
        x = rng.normal(size=(2, 5, 5))
        w = rng.normal(size=(3, 2, 3, 3))
        np.testing.assert_allclose(nx.conv2d(x, w, stride=2).data, naive_conv2d(x, w, stride=2), atol=1e-12)
        np.testing.assert_allclose(nx.conv2d(x, w, stride=2, padding=1).data,
                                   naive_conv2d(x, w, stride=2, padding=1), atol=1e-12)

    def test_bias_is_added_per_channel(self, rng):
        x = rng.normal(size=(2, 4, 4))
        w = rng.normal(size=(3, 2, 1, 1))
        b = np.array([1.0, -2.0, 0.5])
        with_bias = nx.conv2d(x, w, b).data
        without = nx.conv2d(x, w).data
        np.testing.assert_allclose(with_bias - without, np.broadcast_to(b[:, None, None], without.shape), atol=1e-12)

    def test_kernel_larger_than_input_fails(self):
        with pytest.raises(ShapeError):
            nx.conv2d(np.ones((1, 2, 2)), np.ones((1, 1, 3, 3)))

    def test_channel_mismatch_fails(self):
        with pytest.raises(ShapeError):
            nx.conv2d(np.ones((2, 4, 4)), np.ones((1, 3, 1, 1)))

    def test_output_extent_formula(self):
        assert nx.conv_output_extent(512, 3, 2, 1) == 256
        assert nx.conv_output_extent(64, 3, 1, 2, dilation=2) == 64
        assert nx.conv_output_extent(5, 3, 2, 0) == 2


class TestMatmul:
    def test_small_product(self):
        out = nx.matmul([[1.0, 2.0], [3.0, 4.0]], [[1.0], [1.0]])
        np.testing.assert_array_equal(out.data, [[3.0], [7.0]])

    def test_matches_triple_loop(self, rng):
        a, b = rng.normal(size=(7, 5)), rng.normal(size=(5, 3))
        np.testing.assert_allclose(nx.matmul(a, b).data, naive_matmul(a, b), atol=1e-12)

    def test_inner_extent_mismatch(self):
        with pytest.raises(ShapeError):
            nx.matmul(np.ones((2, 3)), np.ones((2, 3)))


class TestRowSoftmax:
    def test_equal_logits_are_uniform(self):
        np.testing.assert_allclose(nx.row_softmax([[0.0, 0.0, 0.0, 0.0]]).data, [[0.25] * 4], atol=1e-15)

    def test_two_logits(self):
        out = nx.row_softmax([[0.0, math.log(3.0)]]).data
        np.testing.assert_allclose(out, [[0.25, 0.75]], atol=1e-12)

    def test_rows_sum_to_one(self, rng):
        out = nx.row_softmax(rng.normal(scale=5.0, size=(10, 7))).data
        np.testing.assert_allclose(out.sum(axis=1), np.ones(10), atol=1e-12)
        assert (out >= 0).all()

    def test_large_logits_stay_finite(self):
        out = nx.row_softmax([[1000.0, 1001.0]]).data
        np.testing.assert_allclose(out, [[1 / (1 + math.e), math.e / (1 + math.e)]], atol=1e-12)

    def test_log_softmax_matches_log_of_softmax(self, rng):
        x = rng.normal(size=(4, 6))
        np.testing.assert_allclose(np.exp(nx.log_softmax(x, axis=1).data), nx.row_softmax(x).data, atol=1e-12)


class TestResampling:
    def test_bilinear_keeps_constants(self):
        out = nx.upsample_bilinear2x(np.full((2, 3, 4), 0.7)).data
        assert out.shape == (2, 6, 8)
        np.testing.assert_allclose(out, 0.7, atol=1e-12)

    def test_nearest_repeats(self):
        out = nx.upsample_nearest2x(np.arange(4.0).reshape(1, 2, 2)).data
        np.testing.assert_array_equal(out[0], [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]])

    def test_pooling(self):
        x = np.arange(16.0).reshape(1, 4, 4)
        np.testing.assert_array_equal(nx.avg_pool2x2(x).data[0], [[2.5, 4.5], [10.5, 12.5]])
        np.testing.assert_array_equal(nx.max_pool2x2(x).data[0], [[5, 7], [13, 15]])

    def test_pooling_needs_even_extents(self):
        with pytest.raises(ShapeError):
            nx.avg_pool2x2(np.ones((1, 3, 4)))

    def test_concat_mismatch(self):
        with pytest.raises(ShapeError):
            nx.concat([np.ones((1, 2, 2)), np.ones((1, 3, 2))], axis=0)


class TestDropout:
    def test_identity_in_eval_mode_and_at_rate_zero(self, rng):
        x = Tensor(rng.normal(size=(4, 4)))
        np.testing.assert_array_equal(nx.dropout(x, 0.5, mode="eval").data, x.data)
        np.testing.assert_array_equal(nx.dropout(x, 0.0, mode="train").data, x.data)

    def test_survivor_fraction_and_scaling(self):
        out = nx.dropout(np.ones(100000), 0.5, mode="train", seed=3).data
        survivors = out != 0
        assert abs(survivors.mean() - 0.5) < 0.01
        np.testing.assert_allclose(out[survivors], 2.0)

    def test_same_seed_same_mask(self):
        a = nx.dropout(np.ones((8, 8)), 0.3, seed=11).data
        b = nx.dropout(np.ones((8, 8)), 0.3, seed=11).data
        np.testing.assert_array_equal(a, b)

    def test_rate_one_is_rejected(self):
        with pytest.raises(MattingError):
            nx.dropout(np.ones(3), 1.0)


class TestTape:
    def test_nothing_is_recorded_outside_a_tape(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        assert not nx.square(x).requires_grad

    def test_reused_tensor_accumulates_gradient(self):
        x = Tensor([1.5, -2.0], requires_grad=True)
        with Tape() as tape:
            y = nx.sum(nx.add(nx.mul(x, x), x))
        tape.backward(y)
        np.testing.assert_allclose(x.grad, 2 * x.data + 1, atol=1e-12)

    def test_grad_accumulates_until_zero_grad(self):
        x = Tensor([3.0], requires_grad=True)
        for _ in range(2):
            with Tape() as tape:
                y = nx.sum(nx.scale(x, 2.0))
            tape.backward(y)
        np.testing.assert_allclose(x.grad, [4.0])
        x.zero_grad()
        assert x.grad is None

    def test_non_scalar_backward_needs_seed(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = nx.square(x)
        with pytest.raises(ShapeError):
            tape.backward(y)
        tape.backward(y, grad=np.ones(2))
        np.testing.assert_allclose(x.grad, [2.0, 4.0])


class TestGradcheck:
    def test_sum_of_squares(self):
        report = gradcheck(lambda x: nx.sum(nx.square(x)), [np.array([1.0, 2.0])])
        np.testing.assert_allclose(report.analytic[0], [2.0, 4.0], atol=1e-12)
        assert report.max_rel_error < 1e-8
        assert report.passed()

    def test_conv_softmax_composite(self, rng):
        x = rng.uniform(0.5, 1.5, size=(1, 4, 4))
        w = rng.uniform(0.5, 1.5, size=(1, 1, 3, 3))
        weights = rng.uniform(0.5, 1.5, size=(1, 16))

        def f(x, w):
            logits = nx.reshape(nx.scale(nx.conv2d(x, w, padding=1), 0.1), (1, 16))
            return nx.sum(nx.mul(nx.row_softmax(logits), weights))

        assert gradcheck(f, [x, w]).max_rel_error < 1e-4

    def test_constant_function_has_zero_gradient(self):
        report = gradcheck(lambda x: Tensor(3.0), [np.array([1.0, -1.0])])
        np.testing.assert_array_equal(report.analytic[0], [0.0, 0.0])
        assert report.max_rel_error == 0.0

    def test_detects_a_wrong_gradient(self):
        def wrong_square(x):
            x = nx.as_tensor(x)
            return nx._result(x.data * x.data, (x,), lambda g: (3.0 * g * x.data,))

        report = gradcheck(lambda x: nx.sum(wrong_square(x)), [np.array([1.0, 2.0])])
        assert not report.passed()

    def test_step_outside_range(self):
        with pytest.raises(MattingError):
            gradcheck(lambda x: nx.sum(x), [np.ones(2)], h=1e-3)

    def test_vector_valued_function_is_rejected(self):
        with pytest.raises(ShapeError):
            gradcheck(lambda x: nx.square(x), [np.ones(2)])
