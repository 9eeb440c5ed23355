"""Pure numpy fallback for the compiled DFT kernels in ``_kernels.pyx``."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@lru_cache(maxsize=64)
def _bit_reversal(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=64)
def _dft_matrix(n: int, inverse: bool) -> np.ndarray:
    sign = 1.0 if inverse else -1.0
    k = np.arange(n)
    # reduce the exponent mod n before scaling to keep the phase exact-ish
    return np.exp(sign * 2j * np.pi * (np.outer(k, k) % n) / n)


def _radix2(a: np.ndarray, inverse: bool) -> np.ndarray:
    rows, n = a.shape
    a = a[:, _bit_reversal(n)]
    sign = 1.0 if inverse else -1.0
    length = 2
    while length <= n:
        half = length // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / length)
        blocks = a.reshape(rows, n // length, length)
        u = blocks[:, :, :half]
        v = blocks[:, :, half:] * tw
        a = np.concatenate((u + v, u - v), axis=2).reshape(rows, n)
        length *= 2
    return a


def dft_rows(x, inverse: bool = False) -> np.ndarray:
    """Unitary DFT of each row of ``x`` (shape ``(rows, n)``)."""
    a = np.ascontiguousarray(x, dtype=np.complex128)
    rows, n = a.shape
    if n == 0 or rows == 0:
        return a.copy()
    if _is_pow2(n):
        out = _radix2(a, inverse)
    else:
        out = a @ _dft_matrix(n, inverse).T
    return out / np.sqrt(n)
