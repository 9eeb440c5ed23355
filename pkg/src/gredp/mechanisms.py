"""Gradient perturbation mechanisms.

Three ways of privatizing a clipped gradient:

* ``gredp``: transform to the frequency domain, clip, add complex Gaussian
  noise, transform back and keep only the real part. The imaginary part
  carries nothing but noise, so dropping it halves the noise variance while
  every gradient coefficient survives.
* ``dpsgd``: clip in the time domain and add real Gaussian noise.
* ``spectraldp``: like ``gredp`` but zero the trailing ``1 - rho`` fraction
  of frequency coefficients before the inverse transform.

All functions operate on the last axis (or the last two axes for the 2D
variant) and vectorize over any leading axes, so a batch of ``T`` signals
of length ``N`` is an array of shape ``(T, N)``. Randomness always comes
from an explicit :class:`numpy.random.Generator`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import spectral

_HALF = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class NoiseSpec:
    """Clipping bound, noise multiplier and real/imaginary noise split.

    The clipping bound doubles as the l2 sensitivity, so per-coordinate noise
    has standard deviation ``clip * sigma`` (split ``a``/``b`` between the real
    and imaginary parts for complex noise).
    """

    clip: float
    sigma: float
    split: tuple[float, float] = (_HALF, _HALF)

    def __post_init__(self):
        if not self.clip > 0:
            raise ValueError(f"clip must be positive, got {self.clip}")
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")
        a, b = self.split
        if a < 0 or b < 0 or abs(a * a + b * b - 1.0) > 1e-12:
            raise ValueError(f"split must satisfy a^2 + b^2 = 1 with a, b >= 0, got {self.split}")

    @property
    def std(self) -> float:
        return self.clip * self.sigma


@dataclass(frozen=True)
class Mechanism:
    """Which perturbation path a gradient takes.

    ``rho`` is only meaningful for ``spectraldp`` and is the fraction of
    frequency coefficients kept by the filter.
    """

    kind: str
    rho: float = 1.0

    KINDS = ("gredp", "dpsgd", "spectraldp")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown mechanism {self.kind!r}; expected one of {self.KINDS}")
        if self.kind == "spectraldp" and not 0 < self.rho <= 1:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")

    @classmethod
    def parse(cls, text: str) -> "Mechanism":
        """Parse ``gredp``, ``dpsgd`` or ``spectraldp:<rho>``."""
        name, _, arg = text.strip().lower().replace("-", "").partition(":")
        if name == "spectraldp":
            return cls("spectraldp", float(arg) if arg else 0.5)
        if arg:
            raise ValueError(f"mechanism {name!r} takes no argument")
        return cls(name)

    @property
    def spectral(self) -> bool:
        return self.kind != "dpsgd"

    def __str__(self) -> str:
        return f"spectraldp:{self.rho:g}" if self.kind == "spectraldp" else self.kind


GREDP = Mechanism("gredp")
DPSGD = Mechanism("dpsgd")


def spectral_dp(rho: float) -> Mechanism:
    return Mechanism("spectraldp", rho)


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent, reproducible generator for ``(seed, stream)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stream])))


def clip(g, c: float, axes: int = 1) -> np.ndarray:
    """Scale each unit so its l2 norm is at most ``c``.

    A unit is the trailing ``axes`` axes; every leading index is clipped
    independently. Complex input is clipped by the norm of the complex
    magnitudes. Units already inside the ball are returned unchanged.
    """
    if not c > 0:
        raise ValueError(f"clipping bound must be positive, got {c}")
    g = np.asarray(g)
    if not np.issubdtype(g.dtype, np.inexact):
        g = g.astype(np.float64)
    lead = g.shape[:g.ndim - axes]
    flat = np.ascontiguousarray(g).reshape(lead + (-1,))
    if np.iscomplexobj(flat):
        flat = flat.view(np.float64)  # interleaved (re, im) pairs
    norms = np.sqrt(np.einsum("...i,...i->...", flat, flat))
    scale = np.maximum(1.0, norms / c)
    return g / scale.reshape(lead + (1,) * axes)


def sample_complex_noise(shape, spec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """Complex noise with real variance ``(a c sigma)^2`` and imaginary ``(b c sigma)^2``."""
    shape = (shape,) if isinstance(shape, (int, np.integer)) else tuple(shape)
    if any(s < 1 for s in shape):
        raise ValueError(f"noise shape must be positive, got {shape}")
    if spec.sigma == 0:
        return np.zeros(shape, dtype=np.complex128)
    a, b = spec.split
    pairs = rng.standard_normal(shape + (2,))
    pairs *= (a * spec.std, b * spec.std)
    return pairs.view(np.complex128)[..., 0]


def sample_real_noise(shape, spec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    shape = (shape,) if isinstance(shape, (int, np.integer)) else tuple(shape)
    if spec.sigma == 0:
        return np.zeros(shape)
    return rng.standard_normal(shape) * spec.std


def prefix_mask(shape, rho: float) -> np.ndarray:
    """Keep the first ``ceil(rho * n)`` coefficients of the row-major flattened unit."""
    shape = (shape,) if isinstance(shape, (int, np.integer)) else tuple(shape)
    n = int(np.prod(shape))
    keep = math.ceil(rho * n - 1e-12)
    mask = np.zeros(n)
    mask[:keep] = 1.0
    return mask.reshape(shape)


def perturb_spectrum(G, spec: NoiseSpec, mechanism: Mechanism, rng: np.random.Generator,
                     axes: int = 1) -> np.ndarray:
    """Clip each unit of a frequency-domain gradient, add noise, filter.

    Returns the noisy spectrum still in the frequency domain. The inverse
    transform and real-part selection are left to the caller because they
    commute with summation over samples.
    """
    if not mechanism.spectral:
        raise ValueError("perturb_spectrum needs a spectral mechanism")
    G = clip(np.asarray(G, dtype=np.complex128), spec.clip, axes)
    if mechanism.kind == "gredp":
        return G + sample_complex_noise(G.shape, spec, rng)
    # the filter baseline always splits noise evenly between the two parts
    even = NoiseSpec(spec.clip, spec.sigma)
    noisy = G + sample_complex_noise(G.shape, even, rng)
    if mechanism.rho < 1:
        noisy = noisy * prefix_mask(G.shape[G.ndim - axes:], mechanism.rho)
    return noisy


def _spectral_path(g, spec, mechanism, rng, two_d=False):
    g = np.asarray(g, dtype=np.float64)
    if two_d:
        G = spectral.fft2(_finite(g))
        return spectral.ifft2(perturb_spectrum(G, spec, mechanism, rng, axes=2)).real
    G = spectral.fft(_finite(g))
    return spectral.ifft(perturb_spectrum(G, spec, mechanism, rng, axes=1)).real


def _finite(g: np.ndarray) -> np.ndarray:
    if g.ndim == 0 or g.shape[-1] < 1:
        raise ValueError(f"expected a non-empty signal, got shape {g.shape}")
    if not np.isfinite(g).all():
        idx = tuple(int(i) for i in np.argwhere(~np.isfinite(g))[0])
        raise spectral.NonFiniteInputError(f"non-finite gradient entry at index {idx}")
    return g


def fre(g_time, spec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """Real part of ``ifft(clip(fft(g)) + tau)`` along the last axis."""
    return _spectral_path(g_time, spec, GREDP, rng)


def fre2d(g_time, spec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """2D version of :func:`fre` over the last two axes."""
    g = np.asarray(g_time, dtype=np.float64)
    if g.ndim < 2:
        raise ValueError(f"expected a matrix, got shape {g.shape}")
    return _spectral_path(g, spec, GREDP, rng, two_d=True)


def spectraldp_perturb(g_time, spec: NoiseSpec, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Spectral-DP baseline: keep the first ``ceil(rho N)`` coefficients."""
    return _spectral_path(g_time, spec, spectral_dp(rho), rng)


def dpsgd_perturb(g_time, spec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """Time-domain clip plus real Gaussian noise ``N(0, c^2 sigma^2)``."""
    g = clip(_finite(np.asarray(g_time, dtype=np.float64)), spec.clip)
    return g + sample_real_noise(g.shape, spec, rng)


def perturb(g_time, spec: NoiseSpec, mechanism: Mechanism, rng: np.random.Generator) -> np.ndarray:
    """Dispatch a 1D gradient (or a batch of them) through ``mechanism``."""
    if mechanism.kind == "dpsgd":
        return dpsgd_perturb(g_time, spec, rng)
    return _spectral_path(g_time, spec, mechanism, rng)
