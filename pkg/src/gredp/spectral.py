"""Unitary discrete Fourier transforms.

Forward and inverse transforms are both scaled by ``1/sqrt(N)`` so they
preserve the l2 norm. Power-of-two lengths use radix-2 Cooley-Tukey, every
other length falls back to the direct O(N^2) sum. Batched helpers
(:func:`fft`, :func:`ifft`, :func:`fft2`, :func:`ifft2`) transform the
trailing axis (or two axes) of arrays with arbitrary leading dimensions;
:func:`fft1d` and friends are the validated single-signal entry points.
"""

from __future__ import annotations

import numpy as np

from . import _backend


class NonFiniteInputError(ValueError):
    """Raised when a transform input contains NaN or infinity."""


def _check_finite(a: np.ndarray) -> None:
    bad = ~np.isfinite(a)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        where = idx[0] if len(idx) == 1 else idx
        raise NonFiniteInputError(f"non-finite entry {a[idx]!r} at index {where}")


def _along_last(x, inverse: bool) -> np.ndarray:
    a = np.asarray(x, dtype=np.complex128)
    if a.ndim == 0:
        raise ValueError("expected at least one dimension")
    lead = a.shape[:-1]
    out = _backend.dft_rows(a.reshape(-1, a.shape[-1]), inverse)
    return out.reshape(*lead, a.shape[-1])


def fft(x) -> np.ndarray:
    """Unitary forward DFT along the last axis."""
    return _along_last(x, inverse=False)


def ifft(x) -> np.ndarray:
    """Unitary inverse DFT along the last axis."""
    return _along_last(x, inverse=True)


def _two_axes(x, inverse: bool) -> np.ndarray:
    a = np.asarray(x, dtype=np.complex128)
    if a.ndim < 2:
        raise ValueError(f"expected at least 2 dimensions, got shape {a.shape}")
    rows = _along_last(a, inverse)
    cols = _along_last(np.swapaxes(rows, -1, -2), inverse)
    return np.swapaxes(cols, -1, -2)


def fft2(x) -> np.ndarray:
    """Unitary 2D DFT over the last two axes: rows first, then columns."""
    return _two_axes(x, inverse=False)


def ifft2(x) -> np.ndarray:
    """Unitary 2D inverse DFT over the last two axes."""
    return _two_axes(x, inverse=True)


def _vec(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.complex128)
    if a.ndim != 1 or a.shape[0] < 1:
        raise ValueError(f"expected a non-empty 1D sequence, got shape {a.shape}")
    _check_finite(a)
    return a


def _mat(m) -> np.ndarray:
    a = np.asarray(m, dtype=np.complex128)
    if a.ndim != 2 or min(a.shape) < 1:
        raise ValueError(f"expected a non-empty 2D matrix, got shape {a.shape}")
    _check_finite(a)
    return a


def fft1d(v) -> np.ndarray:
    """Forward transform ``y_i = N^-1/2 sum_n v_n exp(-2 pi j i n / N)``."""
    return fft(_vec(v))


def ifft1d(v) -> np.ndarray:
    """Inverse transform ``v_n = N^-1/2 sum_i y_i exp(+2 pi j i n / N)``."""
    return ifft(_vec(v))


def fft2d(m) -> np.ndarray:
    return fft2(_mat(m))


def ifft2d(m) -> np.ndarray:
    return ifft2(_mat(m))
