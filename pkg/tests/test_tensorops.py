"""Kernel-level tests: direct-summation and finite-difference oracles."""

import numpy as np
import pytest

from lvcoverage import tensorops as to
from lvcoverage.errors import DimensionError, ParameterError


def conv3d_reference(x, kernels, bias, stride):
    """Direct summation over every index tuple; the independent oracle."""
    cout, cin, kt, ks, kr = kernels.shape
    sd, sh, sw = stride
    d, h, w, _ = x.shape
    do, ho, wo = ((d - kt) // sd + 1, (h - ks) // sh + 1, (w - kr) // sw + 1)
    out = np.zeros((do, ho, wo, cout), dtype=x.dtype)
    for od in range(do):
        for oh in range(ho):
            for ow in range(wo):
                for co in range(cout):
                    acc = bias[co]
                    for ci in range(cin):
                        for dt in range(kt):
                            for dh in range(ks):
                                for dw in range(kr):
                                    acc += (x[od * sd + dt, oh * sh + dh,
                                              ow * sw + dw, ci]
                                            * kernels[co, ci, dt, dh, dw])
                    out[od, oh, ow, co] = acc
    return out


def central_diff(objective, arr, idx, h=1e-5):
    orig = arr[idx]
    arr[idx] = orig + h
    fp = objective()
    arr[idx] = orig - h
    fm = objective()
    arr[idx] = orig
    return (fp - fm) / (2 * h)


class TestConv3dForward:
    def test_table1_c1_shape(self, rng):
        x = rng.standard_normal((3, 120, 120, 1))
        k = rng.standard_normal((16, 1, 2, 7, 7))
        out = to.conv3d_forward(x, k, np.zeros(16))
        assert out.shape == (2, 114, 114, 16)

    def test_zero_input_gives_bias(self, rng):
        x = np.zeros((3, 6, 6, 2))
        k = rng.standard_normal((4, 2, 2, 3, 3))
        b = rng.standard_normal(4)
        out = to.conv3d_forward(x, k, b)
        assert np.allclose(out, np.broadcast_to(b, out.shape))

    def test_counting_kernel_volume(self):
        x = np.ones((3, 3, 3, 1))
        k = np.ones((1, 1, 2, 2, 2))
        out = to.conv3d_forward(x, k, np.zeros(1))
        assert out.shape == (2, 2, 2, 1)
        assert np.all(out == 8.0)

    def test_matches_direct_summation(self, rng):
        x = rng.standard_normal((4, 6, 5, 2))
        k = rng.standard_normal((3, 2, 2, 3, 3))
        b = rng.standard_normal(3)
        out = to.conv3d_forward(x, k, b, (1, 2, 1))
        assert np.allclose(out, conv3d_reference(x, k, b, (1, 2, 1)), atol=1e-12)

    def test_linear_in_input_with_zero_bias(self, rng):
        x = rng.standard_normal((3, 5, 5, 1))
        k = rng.standard_normal((2, 1, 2, 3, 3))
        b = np.zeros(2)
        lhs = to.conv3d_forward(3.5 * x, k, b)
        rhs = 3.5 * to.conv3d_forward(x, k, b)
        assert np.allclose(lhs, rhs, rtol=1e-12)

    def test_batched_matches_per_sample(self, rng):
        x = rng.standard_normal((3, 3, 6, 6, 2))
        k = rng.standard_normal((4, 2, 2, 3, 3))
        b = rng.standard_normal(4)
        batched = to.conv3d_forward(x, k, b)
        singles = np.stack([to.conv3d_forward(x[i], k, b) for i in range(3)])
        assert np.array_equal(batched, singles)

    def test_kernel_larger_than_input_names_axis(self, rng):
        x = rng.standard_normal((1, 4, 4, 1))
        k = rng.standard_normal((1, 1, 2, 3, 3))
        with pytest.raises(DimensionError, match="depth"):
            to.conv3d_forward(x, k, np.zeros(1))

    def test_channel_mismatch_raises(self, rng):
        x = rng.standard_normal((3, 4, 4, 2))
        k = rng.standard_normal((1, 3, 1, 2, 2))
        with pytest.raises(DimensionError, match="channels"):
            to.conv3d_forward(x, k, np.zeros(1))


class TestConv3dBackward:
    def test_zero_upstream_gradient(self, rng):
        x = rng.standard_normal((3, 5, 5, 2))
        k = rng.standard_normal((2, 2, 2, 2, 2))
        out_shape = to.conv3d_forward(x, k, np.zeros(2)).shape
        gx, gk, gb = to.conv3d_backward(np.zeros(out_shape), x, k)
        assert not gx.any() and not gk.any() and not gb.any()

    def test_single_element_kernel_grad_is_correlation(self, rng):
        x = rng.standard_normal((3, 4, 4, 2))
        k = rng.standard_normal((2, 2, 1, 1, 1))
        g = rng.standard_normal((3, 4, 4, 2))
        _, gk, _ = to.conv3d_backward(g, x, k)
        for co in range(2):
            for ci in range(2):
                assert np.isclose(gk[co, ci, 0, 0, 0], (x[..., ci] * g[..., co]).sum())

    def test_matches_finite_differences(self, rng):
        # Spec case: 6x6x3 input (HxWxD display), 3x3x2 kernel, 64-bit.
        x = rng.standard_normal((3, 6, 6, 1))
        k = rng.standard_normal((2, 1, 2, 3, 3))
        b = rng.standard_normal(2)
        g = rng.standard_normal(to.conv3d_forward(x, k, b).shape)

        def objective():
            return float((to.conv3d_forward(x, k, b) * g).sum())

        gx, gk, gb = to.conv3d_backward(g, x, k)
        worst = 0.0
        for arr, grad in ((x, gx), (k, gk)):
            for _ in range(25):
                idx = tuple(rng.integers(0, s) for s in arr.shape)
                num = central_diff(objective, arr, idx)
                worst = max(worst, abs(num - grad[idx]) / max(abs(num), 1e-9))
        assert worst < 1e-6

    def test_grad_bias_sums_channels(self, rng):
        x = rng.standard_normal((3, 5, 5, 1))
        k = rng.standard_normal((2, 1, 2, 2, 2))
        g = rng.standard_normal(to.conv3d_forward(x, k, np.zeros(2)).shape)
        _, _, gb = to.conv3d_backward(g, x, k)
        assert np.allclose(gb, g.sum(axis=(0, 1, 2)))


class TestMaxPool3d:
    def test_table1_m1_shape(self, rng):
        x = rng.standard_normal((2, 114, 114, 16))
        out, argmap = to.maxpool3d_forward(x, (1, 2, 2), (1, 2, 2))
        assert out.shape == (2, 57, 57, 16)
        assert argmap.shape == out.shape

    def test_constant_input_tie_breaks_first(self):
        x = np.ones((1, 4, 4, 1))
        out, argmap = to.maxpool3d_forward(x, (1, 2, 2), (1, 2, 2))
        assert np.all(out == 1.0)
        # First window element in row-major order: the window's own origin.
        expect = np.array([[[0, 2], [8, 10]]]).reshape(1, 2, 2, 1)
        assert np.array_equal(argmap, expect)

    def test_single_peak_appears_once(self):
        x = np.zeros((1, 4, 4, 1))
        x[0, 1, 2, 0] = 9.0
        out, _ = to.maxpool3d_forward(x, (1, 2, 2), (1, 2, 2))
        assert (out == 9.0).sum() == 1

    def test_output_equals_window_max_exhaustive(self, rng):
        x = rng.standard_normal((1, 3, 5, 4, 2))
        window, stride = (2, 2, 2), (1, 1, 2)
        out, _ = to.maxpool3d_forward(x, window, stride)
        for od in range(out.shape[1]):
            for oh in range(out.shape[2]):
                for ow in range(out.shape[3]):
                    for c in range(2):
                        win = x[0, od:od + 2, oh:oh + 2, 2 * ow:2 * ow + 2, c]
                        assert out[0, od, oh, ow, c] == win.max()

    def test_window_larger_than_input_raises(self, rng):
        with pytest.raises(DimensionError):
            to.maxpool3d_forward(rng.standard_normal((1, 4, 4, 1)), (2, 2, 2), (1, 1, 1))

    def test_backward_ones_nonoverlapping(self):
        x = np.arange(32, dtype=float).reshape(1, 2, 4, 4, 1)
        out, argmap = to.maxpool3d_forward(x, (1, 2, 2), (1, 2, 2))
        gin = to.maxpool3d_backward(np.ones_like(out), argmap, x.shape,
                                    overlapping=False)
        assert gin.sum() == out.size
        assert gin.max() == 1.0
        counts = gin.reshape(2, 2, 2, 2, 2, 1).sum(axis=(2, 4))
        assert np.all(counts == 1)

    def test_backward_zero_gradient(self, rng):
        x = rng.standard_normal((1, 2, 4, 4, 1))
        out, argmap = to.maxpool3d_forward(x, (1, 2, 2), (1, 2, 2))
        gin = to.maxpool3d_backward(np.zeros_like(out), argmap, x.shape)
        assert not gin.any()

    def test_backward_overlapping_accumulates(self):
        x = np.zeros((1, 1, 3, 3, 1))
        x[0, 0, 1, 1, 0] = 5.0  # wins all four overlapping 2x2 windows
        out, argmap = to.maxpool3d_forward(x, (1, 2, 2), (1, 1, 1))
        gin = to.maxpool3d_backward(np.ones_like(out), argmap, x.shape,
                                    overlapping=True)
        assert gin[0, 0, 1, 1, 0] == 4.0

    def test_backward_matches_finite_differences(self, rng):
        x = rng.standard_normal((2, 5, 5, 2))  # tie-free a.s.
        window, stride = (1, 2, 2), (1, 2, 2)
        out, argmap = to.maxpool3d_forward(x, window, stride)
        g = rng.standard_normal(out.shape)

        def objective():
            o, _ = to.maxpool3d_forward(x, window, stride)
            return float((o * g).sum())

        gin = to.maxpool3d_backward(g, argmap, x.shape, overlapping=False)
        worst = 0.0
        for _ in range(30):
            idx = tuple(rng.integers(0, s) for s in x.shape)
            num = central_diff(objective, x, idx)
            worst = max(worst, abs(num - gin[idx]) / max(abs(num), 1e-9))
        assert worst < 1e-6


class TestActivations:
    def test_relu_values(self):
        assert np.array_equal(to.relu(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])

    def test_relu_backward_subgradient_zero_at_zero(self):
        g = np.array([5.0, 5.0, 5.0])
        x = np.array([-1.0, 0.0, 2.0])
        assert np.array_equal(to.relu_backward(g, x), [0.0, 0.0, 5.0])

    def test_sigmoid_at_zero(self):
        assert float(to.sigmoid(np.array(0.0))) == 0.5

    def test_sigmoid_never_underflows_to_zero(self):
        val = float(to.sigmoid(np.array(-800.0)))
        assert val > 0.0
        assert float(to.sigmoid(np.array(800.0))) < 1.0

    def test_sigmoid_matches_high_precision(self):
        # Reference in extended precision over the representable range.
        z64 = np.linspace(-700, 700, 4001)
        ref = 1.0 / (1.0 + np.exp(-z64.astype(np.longdouble)))
        ours = to.sigmoid(z64)
        rel = np.abs(ours.astype(np.longdouble) - ref) / ref
        assert float(rel.max()) < 1e-12

    def test_sigmoid_float32_stays_open_interval(self):
        vals = to.sigmoid(np.array([-10000.0, 10000.0], dtype=np.float32))
        assert 0.0 < vals[0] and vals[1] < 1.0


class TestDense:
    def test_identity(self):
        x = np.array([1.0, -2.0, 3.0])
        assert np.array_equal(to.dense_forward(x, np.eye(3), np.zeros(3)), x)

    def test_table1_f1_f2_sizes(self, rng):
        flat = rng.standard_normal((4, 576))  # 3*3*1*64
        h1 = to.dense_forward(flat, rng.standard_normal((256, 576)), np.zeros(256))
        h2 = to.dense_forward(h1, rng.standard_normal((4, 256)), np.zeros(4))
        assert h1.shape == (4, 256) and h2.shape == (4, 4)

    def test_backward_matches_finite_differences(self, rng):
        x = rng.standard_normal((10, 7))
        w = rng.standard_normal((5, 7))
        b = rng.standard_normal(5)
        g = rng.standard_normal((10, 5))

        def objective():
            return float((to.dense_forward(x, w, b) * g).sum())

        gx, gw, gb = to.dense_backward(g, x, w)
        worst = 0.0
        for arr, grad in ((x, gx), (w, gw), (b, gb)):
            for _ in range(20):
                idx = tuple(rng.integers(0, s) for s in arr.shape)
                num = central_diff(objective, arr, idx)
                worst = max(worst, abs(num - grad[idx]) / max(abs(num), abs(grad[idx]), 1e-9))
        assert worst < 1e-8

    def test_dimension_errors(self, rng):
        with pytest.raises(DimensionError):
            to.dense_forward(rng.standard_normal(4), rng.standard_normal((3, 5)), np.zeros(3))
        with pytest.raises(DimensionError):
            to.dense_forward(rng.standard_normal(5), rng.standard_normal((3, 5)), np.zeros(4))


class TestDropout:
    def test_rate_zero_all_ones(self, rng):
        assert np.all(to.dropout_mask((50, 50), 0.0, rng) == 1.0)

    def test_kept_fraction_concentrates(self):
        rng = np.random.default_rng(3)
        mask = to.dropout_mask((1000, 1000), 0.1, rng)
        kept = (mask > 0).mean()
        assert abs(kept - 0.9) < 0.002
        # Inverted scaling: kept entries are exactly 1/(1-rate).
        assert np.allclose(mask[mask > 0], 1.0 / 0.9)

    def test_same_seed_identical(self):
        a = to.dropout_mask((64,), 0.3, np.random.default_rng(11))
        b = to.dropout_mask((64,), 0.3, np.random.default_rng(11))
        assert np.array_equal(a, b)

    def test_rate_one_rejected(self, rng):
        with pytest.raises(ParameterError):
            to.dropout_mask((4,), 1.0, rng)
