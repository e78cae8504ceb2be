"""Compare the compiled kernels against the NumPy fallback.

Run with ``python benchmarks/bench_kernels.py``.  Each kernel is timed on
both backends for a few grid sizes; outputs are checked for agreement
before any number is printed.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from homoglab import _kernels_py

try:
    from homoglab import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _best(fn, repeat: int) -> float:
    number = 1
    while timeit.timeit(fn, number=number) < 0.05:
        number *= 2
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def bench_apply(sizes, repeat):
    rng = np.random.default_rng(0)
    rows = []
    for d, L in sizes:
        shape = (L,) * d
        c = rng.uniform(0.1, 1.0, (d,) + shape)
        u = rng.standard_normal(shape)
        py = _best(lambda: _kernels_py.divform_apply_diag(c, u, 1.0), repeat)
        cy = None
        if _ckernels is not None:
            np.testing.assert_allclose(_ckernels.divform_apply_diag(c, u, 1.0), _kernels_py.divform_apply_diag(c, u, 1.0), atol=1e-12)
            cy = _best(lambda: _ckernels.divform_apply_diag(c, u, 1.0), repeat)
        rows.append((f"divform_apply_diag d={d} L={L}", py, cy))
    return rows


def bench_paint(sizes, repeat):
    rng = np.random.default_rng(1)
    rows = []
    for d, L in sizes:
        shape = (L,) * d
        centers = rng.uniform(0, L, size=(max(1, L**d // 200), d))
        py = _best(lambda: _kernels_py.paint_balls(shape, centers, 3.0), repeat)
        cy = None
        if _ckernels is not None:
            assert np.array_equal(_ckernels.paint_balls(shape, centers, 3.0), _kernels_py.paint_balls(shape, centers, 3.0))
            cy = _best(lambda: _ckernels.paint_balls(shape, centers, 3.0), repeat)
        rows.append((f"paint_balls d={d} L={L} n={len(centers)}", py, cy))
    return rows


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--quick", action="store_true", help="small grids only")
    args = parser.parse_args(argv)
    apply_sizes = [(2, 128), (3, 32)] if args.quick else [(2, 256), (2, 1024), (3, 64)]
    paint_sizes = [(2, 128)] if args.quick else [(2, 512), (3, 64)]
    rows = bench_apply(apply_sizes, args.repeat) + bench_paint(paint_sizes, args.repeat)
    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'python [ms]':>12}  {'cython [ms]':>12}  {'speedup':>8}")
    for name, py, cy in rows:
        if cy is None:
            print(f"{name:<{width}}  {py * 1e3:12.3f}  {'n/a':>12}  {'':>8}")
        else:
            print(f"{name:<{width}}  {py * 1e3:12.3f}  {cy * 1e3:12.3f}  {py / cy:7.1f}x")


if __name__ == "__main__":
    main()
