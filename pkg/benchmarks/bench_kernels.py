"""Compare the compiled and numpy row-DFT kernels.

Run with ``python benchmarks/bench_kernels.py [--rows N] [--repeat R]``.
Prints one line per (length, backend) with the best wall time and the
speed-up over the numpy fallback.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from gredp._backend import BACKEND, available_backends

# powers of two take the radix-2 path; 12 and 28 are LeNet grid sizes
LENGTHS = (8, 12, 28, 32, 64, 256)


def bench(rows: int, repeat: int) -> list[tuple[int, str, float]]:
    kernels = available_backends()
    rng = np.random.default_rng(0)
    out = []
    for n in LENGTHS:
        x = rng.standard_normal((rows, n)) + 1j * rng.standard_normal((rows, n))
        ref = kernels["python"](x)
        for name, fn in kernels.items():
            err = np.abs(fn(x) - ref).max()
            if err > 1e-9:
                raise AssertionError(f"{name} disagrees with the fallback at n={n}: {err:.2e}")
            best = min(timeit.repeat(lambda: fn(x), number=1, repeat=repeat))
            out.append((n, name, best))
    return out


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, default=20000)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    print(f"default backend: {BACKEND}; rows={args.rows}")
    results = bench(args.rows, args.repeat)
    base = {n: t for n, name, t in results if name == "python"}
    print(f"{'n':>5} {'backend':>8} {'seconds':>10} {'speedup':>8}")
    for n, name, t in results:
        print(f"{n:>5} {name:>8} {t:>10.4f} {base[n] / t:>7.2f}x")


if __name__ == "__main__":
    main()
