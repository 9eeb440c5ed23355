import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gredp import spectral
from gredp.mechanisms import (
    DPSGD,
    GREDP,
    Mechanism,
    NoiseSpec,
    clip,
    dpsgd_perturb,
    fre,
    fre2d,
    make_rng,
    perturb,
    prefix_mask,
    sample_complex_noise,
    spectral_dp,
    spectraldp_perturb,
)

H = 1 / math.sqrt(2)
TRIALS = 10**6


class TestNoiseSpec:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            NoiseSpec(0.0, 1.0)
        with pytest.raises(ValueError):
            NoiseSpec(1.0, -1.0)
        with pytest.raises(ValueError):
            NoiseSpec(1.0, 1.0, (0.5, 0.5))

    def test_split_tolerance(self):
        NoiseSpec(1.0, 1.0, (0.6, 0.8))
        NoiseSpec(1.0, 1.0, (H, H))


class TestMechanism:
    def test_parse(self):
        assert Mechanism.parse("gredp") == GREDP
        assert Mechanism.parse("DPSGD") == DPSGD
        assert Mechanism.parse("spectraldp:0.25") == spectral_dp(0.25)
        assert Mechanism.parse("spectral-dp") == spectral_dp(0.5)
        assert str(spectral_dp(0.5)) == "spectraldp:0.5"

    @pytest.mark.parametrize("rho", [0.0, -0.1, 1.5])
    def test_rejects_rho(self, rho):
        with pytest.raises(ValueError):
            spectral_dp(rho)

    def test_rejects_unknown(self):
        with pytest.raises(ValueError):
            Mechanism.parse("laplace")


class TestClip:
    def test_no_clip_branch(self):
        np.testing.assert_array_equal(clip([3.0, 4.0], 10), [3.0, 4.0])

    def test_scales_to_bound(self):
        np.testing.assert_allclose(clip([3.0, 4.0], 1), [0.6, 0.8], rtol=1e-15)

    def test_complex_norm_exact(self, rng):
        for _ in range(50):
            g = rng.normal(size=64) + 1j * rng.normal(size=64)
            out = clip(g, 0.5)
            assert abs(np.linalg.norm(out) - 0.5) < 1e-12
            # direction preserved
            np.testing.assert_allclose(out / np.linalg.norm(out), g / np.linalg.norm(g), atol=1e-14)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            clip([1.0], 0)

    def test_rows_independent(self):
        g = np.array([[3.0, 4.0], [0.3, 0.4]])
        np.testing.assert_allclose(clip(g, 1), [[0.6, 0.8], [0.3, 0.4]])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40), st.floats(1e-3, 1e3))
    def test_bound_and_idempotent(self, values, c):
        once = clip(values, c)
        assert np.linalg.norm(once) <= c + 1e-12 * max(1.0, c)
        np.testing.assert_allclose(clip(once, c), once, rtol=1e-12, atol=0)


class TestComplexNoise:
    def test_zero_sigma(self, rng):
        np.testing.assert_array_equal(sample_complex_noise(5, NoiseSpec(1, 0), rng), np.zeros(5))

    def test_even_split_variance(self):
        z = sample_complex_noise(TRIALS, NoiseSpec(1, 1), make_rng(1))
        assert 0.49 <= z.real.var() <= 0.51
        assert 0.49 <= z.imag.var() <= 0.51

    def test_uneven_split_variance(self):
        z = sample_complex_noise(TRIALS, NoiseSpec(1, 1, (0.6, 0.8)), make_rng(2))
        assert 0.353 <= z.real.var() <= 0.367
        assert 0.627 <= z.imag.var() <= 0.653

    def test_deterministic(self):
        spec = NoiseSpec(1, 1)
        a = sample_complex_noise(16, spec, make_rng(9, 3))
        b = sample_complex_noise(16, spec, make_rng(9, 3))
        c = sample_complex_noise(16, spec, make_rng(9, 4))
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)


class TestFRe:
    def test_zero_noise_preserves_gradient(self, backend, rng):
        out = fre([1.0, 2.0, 3.0, 4.0], NoiseSpec(100, 0), rng)
        np.testing.assert_allclose(out, [1, 2, 3, 4], atol=1e-9)

    def test_boundary_norm(self, rng):
        out = fre([0.6, 0.8], NoiseSpec(1, 0), rng)
        np.testing.assert_allclose(out, [0.6, 0.8], atol=1e-12)

    def test_clips_in_frequency_domain(self, rng):
        g = np.array([3.0, 4.0, 0.0, 12.0])
        out = fre(g, NoiseSpec(1, 0), rng)
        np.testing.assert_allclose(out, g / 13.0, atol=1e-12)

    def test_variance_is_half(self):
        out = fre(np.zeros((TRIALS, 8)), NoiseSpec(1, 1), make_rng(3))
        var = out.var(axis=0)
        assert np.all((0.49 <= var) & (var <= 0.51)), var

    def test_length_preserved(self, rng):
        assert fre(rng.normal(size=13), NoiseSpec(1, 1), rng).shape == (13,)

    def test_rejects_nan(self, rng):
        with pytest.raises(ValueError, match="index"):
            fre([0.0, np.nan], NoiseSpec(1, 1), rng)

    def test_deterministic(self):
        g = np.arange(10.0)
        a = fre(g, NoiseSpec(1, 2), make_rng(5))
        b = fre(g, NoiseSpec(1, 2), make_rng(5))
        np.testing.assert_array_equal(a, b)

    @settings(max_examples=100, deadline=None)
    @given(n=st.integers(1, 128), seed=st.integers(0, 2**31), c=st.floats(0.01, 100))
    def test_gradient_preservation_property(self, n, seed, c):
        r = np.random.default_rng(seed)
        g = r.normal(size=n)
        g *= r.uniform(0, c) / np.linalg.norm(g)
        out = fre(g, NoiseSpec(c, 0), r)
        assert np.linalg.norm(out - g) <= 1e-9 * max(np.linalg.norm(g), 1e-300)


class TestSplitVariance:
    """Per-coordinate variance of ``Re(ifft(tau))`` for an (a, b) split.

    Exact value: ``(a^2 S_cos + b^2 S_sin) / N`` with ``S_cos = sum_k cos^2(2 pi jk/N)``.
    It equals 1/2 except at coordinates with ``2j = 0 mod N``, where it is ``a^2``.
    """

    @staticmethod
    def exact(a, b, n):
        j = np.arange(n)[:, None]
        k = np.arange(n)[None, :]
        ang = 2 * np.pi * j * k / n
        return (a * a * (np.cos(ang) ** 2).sum(1) + b * b * (np.sin(ang) ** 2).sum(1)) / n

    @pytest.mark.parametrize("split", [(1.0, 0.0), (0.0, 1.0), (0.6, 0.8), (H, H)])
    def test_matches_exact_formula(self, split):
        out = fre(np.zeros((TRIALS, 8)), NoiseSpec(1, 1, split), make_rng(11))
        np.testing.assert_allclose(out.var(axis=0), self.exact(*split, 8), atol=0.01)

    @pytest.mark.parametrize("split", [(1.0, 0.0), (0.0, 1.0), (0.6, 0.8)])
    def test_interior_coordinates_are_half(self, split):
        out = fre(np.zeros((TRIALS, 8)), NoiseSpec(1, 1, split), make_rng(12))
        var = out.var(axis=0)
        interior = [1, 2, 3, 5, 6, 7]
        assert np.all(np.abs(var[interior] - 0.5) <= 0.01), var
        assert abs(var[0] - split[0] ** 2) <= 0.01


class TestDPSGD:
    def test_small_gradient_unchanged(self, rng):
        np.testing.assert_array_equal(dpsgd_perturb([0.1, 0.2], NoiseSpec(1, 0), rng), [0.1, 0.2])

    def test_clip_only(self, rng):
        np.testing.assert_allclose(dpsgd_perturb([3.0, 4.0], NoiseSpec(1, 0), rng), [0.6, 0.8])

    def test_variance_is_one(self):
        out = dpsgd_perturb(np.zeros((TRIALS, 4)), NoiseSpec(1, 1), make_rng(4))
        var = out.var(axis=0)
        assert np.all((0.98 <= var) & (var <= 1.02)), var


class TestSpectralDP:
    def test_rho_one_no_noise_identity(self, rng):
        g = np.array([0.1, -0.2, 0.3, 0.05])
        np.testing.assert_allclose(spectraldp_perturb(g, NoiseSpec(1, 0), 1.0, rng), g, atol=1e-9)

    def test_rho_one_equals_gredp_bitwise(self, rng):
        g = rng.normal(size=(20, 12))
        a = spectraldp_perturb(g, NoiseSpec(0.5, 0), 1.0, rng)
        b = fre(g, NoiseSpec(0.5, 0), rng)
        np.testing.assert_array_equal(a, b)

    def test_filtered_variance(self):
        out = spectraldp_perturb(np.zeros((TRIALS, 8)), NoiseSpec(1, 1), 0.5, make_rng(6))
        var = out.var(axis=0)
        assert np.all((0.245 <= var) & (var <= 0.255)), var

    def test_filter_destroys_gradient(self, rng):
        out = spectraldp_perturb([1.0, 2.0, 3.0, 4.0], NoiseSpec(100, 0), 0.5, rng)
        assert np.max(np.abs(out - [1, 2, 3, 4])) > 0.1

    def test_rejects_rho(self, rng):
        with pytest.raises(ValueError):
            spectraldp_perturb([1.0], NoiseSpec(1, 0), 0.0, rng)

    def test_prefix_mask(self):
        np.testing.assert_array_equal(prefix_mask(8, 0.5), [1, 1, 1, 1, 0, 0, 0, 0])
        np.testing.assert_array_equal(prefix_mask(5, 0.5), [1, 1, 1, 0, 0])
        np.testing.assert_array_equal(prefix_mask(10, 0.3), [1, 1, 1] + [0] * 7)
        assert prefix_mask((4, 4), 0.5).sum() == 8


class TestFRe2D:
    def test_zero(self, rng):
        np.testing.assert_array_equal(fre2d(np.zeros((4, 4)), NoiseSpec(1, 0), rng), np.zeros((4, 4)))

    def test_identity_under_bound(self, backend, rng):
        g = rng.normal(size=(4, 4))
        g *= 0.9 / np.linalg.norm(g)
        np.testing.assert_allclose(fre2d(g, NoiseSpec(1, 0), rng), g, atol=1e-9)

    def test_pooled_variance(self):
        out = fre2d(np.zeros((10**5, 8, 8)), NoiseSpec(1, 1), make_rng(7))
        assert 0.49 <= out.var(axis=0).mean() <= 0.51


def test_perturb_dispatch(rng):
    g = np.array([3.0, 4.0])
    np.testing.assert_allclose(perturb(g, NoiseSpec(1, 0), DPSGD, rng), [0.6, 0.8])
    np.testing.assert_allclose(perturb(g, NoiseSpec(1, 0), GREDP, rng), [0.6, 0.8])


def test_real_input_spectrum_noise_not_hermitian():
    # noise goes on all N coefficients independently, so the pre-selection signal is complex
    g = np.zeros(8)
    G = spectral.fft(g) + sample_complex_noise(8, NoiseSpec(1, 1), make_rng(0))
    assert np.abs(spectral.ifft(G).imag).max() > 1e-3
