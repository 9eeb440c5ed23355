"""Kernel backend selection.

``GREDP_BACKEND`` picks the row-DFT kernel:

* ``python``: the numpy fallback for every length;
* ``cython``: the compiled extension for every length;
* ``auto`` (default): compiled radix-2 for power-of-two lengths and the
  BLAS-backed direct product for the rest, which measures faster than the
  compiled direct loop (see ``benchmarks/bench_kernels.py``).

Without the compiled extension every choice falls back to ``python``.
"""

from __future__ import annotations

import os

from . import _kernels_py

try:
    from . import _kernels  # type: ignore[attr-defined]
except ImportError:
    _kernels = None


def _auto(x, inverse: bool = False):
    n = x.shape[-1]
    if _kernels_py._is_pow2(n):
        return _kernels.dft_rows(x, inverse)
    return _kernels_py.dft_rows(x, inverse)


def available_backends() -> dict:
    out = {"python": _kernels_py.dft_rows}
    if _kernels is not None:
        out["cython"] = _kernels.dft_rows
        out["auto"] = _auto
    return out


_choice = os.environ.get("GREDP_BACKEND", "auto").lower()
_kernels_found = available_backends()
BACKEND = _choice if _choice in _kernels_found else "python"
dft_rows = _kernels_found[BACKEND]
