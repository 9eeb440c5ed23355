import numpy as np
import pytest

from gredp import layers as L
from gredp.mechanisms import DPSGD, GREDP, NoiseSpec, make_rng, spectral_dp
from oracles import (
    block_circulant,
    central_difference,
    conv2d_valid,
    conv2d_weight_grad as loop_conv_grad,
    rel_err,
)


def random_conv_shape(rng):
    # channel counts and kernel sizes drawn from the evaluated architectures
    d = int(rng.choice([3, 5]))
    return dict(
        c_in=int(rng.choice([1, 2, 3, 6, 7])),
        c_out=int(rng.choice([1, 2, 6, 7])),
        d=d,
        h=int(rng.integers(d, d + 9)),
        w=int(rng.integers(d, d + 9)),
    )


class TestConvForward:
    def test_identity_kernel(self, rng):
        x = rng.normal(size=(6, 5, 1))
        np.testing.assert_allclose(L.conv2d_forward(x, np.ones((1, 1, 1, 1))), x)

    def test_ones(self):
        out = L.conv2d_forward(np.ones((3, 3, 1)), np.ones((1, 1, 2, 2)))
        np.testing.assert_allclose(out, np.full((2, 2, 1), 4.0))

    def test_matches_loop(self, rng):
        x = rng.normal(size=(8, 8, 2))
        w = rng.normal(size=(2, 3, 3, 3))
        assert rel_err(L.conv2d_forward(x, w), conv2d_valid(x, w)) < 1e-9

    def test_batched(self, rng):
        x = rng.normal(size=(4, 7, 6, 2))
        w = rng.normal(size=(2, 3, 3, 3))
        out = L.conv2d_forward(x, w)
        for b in range(4):
            assert rel_err(out[b], conv2d_valid(x[b], w)) < 1e-12

    def test_shape_errors(self, rng):
        with pytest.raises(L.ShapeError, match="channels"):
            L.conv2d_forward(np.zeros((5, 5, 2)), np.zeros((3, 1, 3, 3)))
        with pytest.raises(L.ShapeError, match="larger"):
            L.conv2d_forward(np.zeros((2, 2, 1)), np.zeros((1, 1, 3, 3)))

    def test_input_grad_finite_difference(self, rng):
        x = rng.normal(size=(6, 7, 2))
        w = rng.normal(size=(2, 3, 3, 3))
        up = rng.normal(size=(4, 5, 3))
        fd = central_difference(lambda xx: np.sum(up * L.conv2d_forward(xx, w)), x)
        assert rel_err(L.conv2d_input_grad(up, w), fd) < 1e-6


class TestConvSpectralGrad:
    def test_zero_upstream(self, rng):
        x = rng.normal(size=(5, 5, 2))
        g = L.conv2d_weight_grad_spectral(np.zeros((3, 3, 4)), x, NoiseSpec(1, 0), GREDP, rng)
        np.testing.assert_allclose(g, 0, atol=1e-15)
        assert g.shape == (2, 4, 3, 3)

    def test_single_channel_ones(self, backend):
        x = np.arange(9.0).reshape(3, 3, 1)
        g = L.conv2d_weight_grad_spectral(np.ones((2, 2, 1)), x)
        assert rel_err(g, loop_conv_grad(x, np.ones((2, 2, 1)), 2)) < 1e-6

    def test_lenet_conv_finite_difference(self, rng):
        # six 3x3 kernels on a small single-channel input
        x = rng.normal(size=(9, 9, 1))
        w = rng.normal(size=(1, 6, 3, 3))
        up = rng.normal(size=(7, 7, 6))
        fd = central_difference(lambda ww: np.sum(up * L.conv2d_forward(x, ww)), w)
        g = L.conv2d_weight_grad_spectral(up, x, NoiseSpec(1e6, 0), GREDP, rng)
        assert rel_err(g, fd) < 1e-4

    def test_random_shapes_match_loop_oracle(self, backend):
        rng = np.random.default_rng(1)
        for _ in range(20):
            s = random_conv_shape(rng)
            x = rng.normal(size=(s["h"], s["w"], s["c_in"]))
            up = rng.normal(size=(s["h"] - s["d"] + 1, s["w"] - s["d"] + 1, s["c_out"]))
            g = L.conv2d_weight_grad_spectral(up, x)
            assert rel_err(g, loop_conv_grad(x, up, s["d"])) < 1e-6, s
            assert rel_err(L.conv2d_weight_grad(up, x, s["d"]), loop_conv_grad(x, up, s["d"])) < 1e-12

    def test_shape_mismatch(self, rng):
        with pytest.raises(L.ShapeError, match="expected"):
            L.conv2d_weight_grad_spectral(np.zeros((3, 4, 2)), np.zeros((5, 5, 1)), d=3)

    def test_per_kernel_clip(self, rng):
        x = rng.normal(size=(6, 6, 2))
        up = rng.normal(size=(4, 4, 3)) * 100
        c = 0.01
        g = L.conv2d_weight_grad_spectral(up, x, NoiseSpec(c, 0), GREDP, rng)
        # cropping can only shrink the clipped full-grid correlation
        assert np.all(np.linalg.norm(g.reshape(6, -1), axis=1) <= c + 1e-12)

    def test_dpsgd_path_clips_kernel(self, rng):
        x = rng.normal(size=(6, 6, 2))
        up = rng.normal(size=(4, 4, 3)) * 100
        g = L.conv2d_weight_grad_spectral(up, x, NoiseSpec(0.5, 0), DPSGD, rng)
        np.testing.assert_allclose(np.linalg.norm(g.reshape(6, -1), axis=1), 0.5)

    def test_noise_variance_on_kernel(self):
        # every cropped kernel entry carries 1/2 c^2 sigma^2 of noise
        rng = make_rng(3)
        x = np.zeros((10**4, 6, 6, 1))
        up = np.zeros((10**4, 4, 4, 1))
        g = L.conv2d_weight_grad_spectral(up, x, NoiseSpec(1, 1), GREDP, rng)
        assert abs(g.var(axis=0).mean() - 0.5) < 0.02

    def test_spectral_dp_damages_gradient(self, rng):
        x = rng.normal(size=(6, 6, 1))
        up = rng.normal(size=(4, 4, 1))
        exact = L.conv2d_weight_grad_spectral(up, x)
        filtered = L.conv2d_weight_grad_spectral(up, x, NoiseSpec(1e6, 0), spectral_dp(0.5), rng)
        assert rel_err(filtered, exact) > 0.01


class TestCirculant:
    def test_identity_blocks_sum_segments(self, rng):
        w = np.zeros((2, 3, 4))
        w[:, :, 0] = 1
        x = rng.normal(size=12)
        seg_sum = x.reshape(3, 4).sum(0)
        np.testing.assert_allclose(L.circfc_forward(x, w), np.tile(seg_sum, 2), atol=1e-12)

    def test_two_by_two(self):
        a, b, x1, x2 = 1.5, -0.7, 2.0, 3.0
        out = L.circfc_forward([x1, x2], [[[a, b]]])
        np.testing.assert_allclose(out, [a * x1 + b * x2, b * x1 + a * x2], atol=1e-14)

    def test_matches_dense(self, backend, rng):
        w = rng.normal(size=(2, 3, 4))
        x = rng.normal(size=12)
        assert rel_err(L.circfc_forward(x, w), block_circulant(w) @ x) < 1e-9

    @pytest.mark.parametrize("p,q,d", [(1, 1, 1), (3, 2, 5), (2, 4, 8), (5, 4, 24), (42, 5, 2)])
    def test_dense_various(self, rng, p, q, d):
        w = rng.normal(size=(p, q, d))
        x = rng.normal(size=(3, q * d))
        assert rel_err(L.circfc_forward(x, w), x @ block_circulant(w).T) < 1e-9

    def test_layer_dense_matches_oracle(self, rng):
        layer = L.CirculantFC(12, 8, 4)
        layer.params["w"] = rng.normal(size=layer.params["w"].shape)
        np.testing.assert_allclose(layer.dense(), block_circulant(layer.params["w"]))

    def test_input_grad(self, rng):
        w = rng.normal(size=(2, 3, 4))
        up = rng.normal(size=8)
        np.testing.assert_allclose(L.circfc_input_grad(up, w), block_circulant(w).T @ up, atol=1e-12)

    def test_zero_upstream(self, rng):
        g = L.circfc_weight_grad_spectral(np.zeros(8), rng.normal(size=12), NoiseSpec(1, 0), GREDP, rng, d=4)
        np.testing.assert_allclose(g, 0, atol=1e-15)
        assert g.shape == (2, 3, 4)

    def test_two_by_two_grad(self):
        # o1 = a x1 + b x2, o2 = b x1 + a x2 => dL/da = u1 x1 + u2 x2, dL/db = u1 x2 + u2 x1
        x1, x2, u1, u2 = 2.0, 3.0, 0.5, -1.25
        g = L.circfc_weight_grad_spectral([u1, u2], [x1, x2], d=2)
        np.testing.assert_allclose(g[0, 0], [u1 * x1 + u2 * x2, u1 * x2 + u2 * x1], atol=1e-12)

    def test_finite_difference(self, backend, rng):
        w = rng.normal(size=(2, 2, 4))
        x = rng.normal(size=8)
        up = rng.normal(size=8)
        fd = central_difference(lambda ww: np.sum(up * L.circfc_forward(x, ww)), w)
        g = L.circfc_weight_grad_spectral(up, x, NoiseSpec(1e6, 0), GREDP, make_rng(0), d=4)
        assert rel_err(g, fd) < 1e-4
        assert rel_err(L.circfc_weight_grad(up, x, 4), fd) < 1e-4

    def test_block_size_must_divide(self):
        with pytest.raises(L.ShapeError, match="divide"):
            L.CirculantFCSpec(10, 12, 4)
        with pytest.raises(L.ShapeError):
            L.circfc_weight_grad_spectral(np.zeros(10), np.zeros(12), d=4)


class TestActivationsAndPooling:
    def test_relu(self):
        np.testing.assert_array_equal(L.relu([-1.0, 2.0]), [0.0, 2.0])

    def test_max_pool(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None]
        np.testing.assert_array_equal(L.max_pool2d(x, 2), [[[4.0]]])

    def test_max_pool_drops_remainder(self, rng):
        assert L.max_pool2d(rng.normal(size=(5, 7, 2)), 2).shape == (2, 3, 2)

    def test_avg_pool(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None]
        np.testing.assert_array_equal(L.avg_pool2d(x, 2), [[[2.5]]])

    @pytest.mark.parametrize("shape", [(4, 6, 2), (5, 7, 3)])
    def test_pool_backward_finite_difference(self, rng, shape):
        x = rng.normal(size=shape)  # continuous draws keep away from max ties
        out_shape = L.max_pool2d(x).shape
        up = rng.normal(size=out_shape)
        fd = central_difference(lambda xx: np.sum(up * L.max_pool2d(xx)), x)
        assert rel_err(L.max_pool2d_backward(up, x), fd) < 1e-4
        fd = central_difference(lambda xx: np.sum(up * L.avg_pool2d(xx)), x)
        assert rel_err(L.avg_pool2d_backward(up, x), fd) < 1e-4

    def test_relu_backward_finite_difference(self, rng):
        x = rng.normal(size=20)
        x[np.abs(x) < 0.05] = 0.5
        up = rng.normal(size=20)
        fd = central_difference(lambda xx: np.sum(up * L.relu(xx)), x)
        assert rel_err(L.relu_backward(up, x), fd) < 1e-4

    def test_cross_entropy_gradient(self, rng):
        logits = rng.normal(size=(5, 10))
        labels = rng.integers(0, 10, size=5)
        fd = central_difference(lambda z: L.cross_entropy_loss(z, labels).sum(), logits)
        assert rel_err(L.cross_entropy_backward(logits, labels), fd) < 1e-4

    def test_cross_entropy_value(self):
        assert L.cross_entropy_loss(np.zeros(4), np.array(2)) == pytest.approx(np.log(4))

    def test_label_out_of_range(self):
        with pytest.raises(ValueError, match="label 10"):
            L.cross_entropy_loss(np.zeros((2, 10)), np.array([1, 10]))
