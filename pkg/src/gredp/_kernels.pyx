# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled unitary DFT kernels.

Both kernels transform every row of a C-contiguous complex128 matrix along
its last axis and scale by 1/sqrt(n), so forward and inverse are adjoint.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, sqrt, M_PI

cnp.import_array()


cdef inline bint _is_pow2(Py_ssize_t n):
    return n > 0 and (n & (n - 1)) == 0


cdef void _radix2_row(double* re, double* im, Py_ssize_t n,
                      const double* twr, const double* twi) noexcept nogil:
    # in-place iterative Cooley-Tukey; tw[k] = exp(-+2*pi*i*k/n)
    cdef Py_ssize_t i, j, k, bit, length, half, step, start, p, q
    cdef double ur, ui, vr, vi, t
    j = 0
    for i in range(1, n):
        bit = n >> 1
        while j & bit:
            j ^= bit
            bit >>= 1
        j ^= bit
        if i < j:
            t = re[i]; re[i] = re[j]; re[j] = t
            t = im[i]; im[i] = im[j]; im[j] = t
    length = 2
    while length <= n:
        half = length >> 1
        step = n // length
        start = 0
        while start < n:
            for k in range(half):
                p = start + k
                q = p + half
                vr = re[q] * twr[k * step] - im[q] * twi[k * step]
                vi = re[q] * twi[k * step] + im[q] * twr[k * step]
                ur = re[p]
                ui = im[p]
                re[p] = ur + vr
                im[p] = ui + vi
                re[q] = ur - vr
                im[q] = ui - vi
            start += length
        length <<= 1


cdef void _direct_row(const double* re, const double* im, double* out_re, double* out_im,
                      Py_ssize_t n, const double* twr, const double* twi) noexcept nogil:
    # four outputs per pass keep independent accumulators in flight;
    # each index tracks (i * k) mod n without a division
    cdef Py_ssize_t i, k, i0, i1, i2, i3
    cdef double r0, j0, r1, j1, r2, j2, r3, j3, xr, xi
    i = 0
    while i + 4 <= n:
        r0 = j0 = r1 = j1 = r2 = j2 = r3 = j3 = 0.0
        i0 = 0; i1 = 0; i2 = 0; i3 = 0
        for k in range(n):
            xr = re[k]
            xi = im[k]
            r0 += xr * twr[i0] - xi * twi[i0]
            j0 += xr * twi[i0] + xi * twr[i0]
            r1 += xr * twr[i1] - xi * twi[i1]
            j1 += xr * twi[i1] + xi * twr[i1]
            r2 += xr * twr[i2] - xi * twi[i2]
            j2 += xr * twi[i2] + xi * twr[i2]
            r3 += xr * twr[i3] - xi * twi[i3]
            j3 += xr * twi[i3] + xi * twr[i3]
            i0 += i
            i1 += i + 1
            i2 += i + 2
            i3 += i + 3
            if i0 >= n: i0 -= n
            if i1 >= n: i1 -= n
            if i2 >= n: i2 -= n
            if i3 >= n: i3 -= n
        out_re[i] = r0; out_im[i] = j0
        out_re[i + 1] = r1; out_im[i + 1] = j1
        out_re[i + 2] = r2; out_im[i + 2] = j2
        out_re[i + 3] = r3; out_im[i + 3] = j3
        i += 4
    while i < n:
        r0 = j0 = 0.0
        i0 = 0
        for k in range(n):
            r0 += re[k] * twr[i0] - im[k] * twi[i0]
            j0 += re[k] * twi[i0] + im[k] * twr[i0]
            i0 += i
            if i0 >= n: i0 -= n
        out_re[i] = r0
        out_im[i] = j0
        i += 1


def dft_rows(x, bint inverse=False):
    """Unitary DFT of each row of ``x`` (shape ``(rows, n)``)."""
    cdef cnp.ndarray[cnp.complex128_t, ndim=2, mode="c"] src = np.ascontiguousarray(
        x, dtype=np.complex128)
    cdef Py_ssize_t rows = src.shape[0]
    cdef Py_ssize_t n = src.shape[1]
    if n == 0 or rows == 0:
        return np.empty((rows, n), dtype=np.complex128)
    cdef double sign = 1.0 if inverse else -1.0
    cdef double scale = 1.0 / sqrt(<double>n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] twr = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] twi = np.empty(n)
    cdef Py_ssize_t r, i
    cdef double ang
    for i in range(n):
        ang = sign * 2.0 * M_PI * i / n
        twr[i] = cos(ang)
        twi[i] = sin(ang)

    # interleaved complex128 viewed as (re, im) pairs
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] s = src.view(np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] o = np.empty((rows, 2 * n))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] bre = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] bim = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cre = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cim = np.empty(n)
    cdef double* pr = &bre[0]
    cdef double* pi = &bim[0]
    cdef double* qr = &cre[0]
    cdef double* qi = &cim[0]
    cdef double* srow
    cdef double* orow
    cdef bint pow2 = _is_pow2(n)
    with nogil:
        for r in range(rows):
            srow = &s[r, 0]
            orow = &o[r, 0]
            for i in range(n):
                pr[i] = srow[2 * i]
                pi[i] = srow[2 * i + 1]
            if pow2:
                _radix2_row(pr, pi, n, &twr[0], &twi[0])
                for i in range(n):
                    orow[2 * i] = pr[i] * scale
                    orow[2 * i + 1] = pi[i] * scale
            else:
                _direct_row(pr, pi, qr, qi, n, &twr[0], &twi[0])
                for i in range(n):
                    orow[2 * i] = qr[i] * scale
                    orow[2 * i + 1] = qi[i] * scale
    return o.view(np.complex128)
