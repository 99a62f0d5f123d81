"""Compare the numpy and numba kernel backends.

Runs every hot kernel on both backends, checks the outputs are
bit-identical, and prints per-size timings. The numba path is warmed
before timing so JIT compilation is not billed to the first repeat.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats N] [--sizes 48,96]
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from tractaug._kernels import _numpy

try:
    from tractaug._kernels import _numba
except ImportError:
    _numba = None


def _time_best(fn, *args, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _polyline(size: int, rng: np.random.Generator) -> np.ndarray:
    # a gentle arc through the volume, like the phantom centerlines
    t = np.linspace(0.15, 0.85, 6)
    pts = np.stack(
        [
            t * size,
            (0.5 + 0.25 * np.sin(t * 3.0)) * size,
            (0.5 + 0.25 * np.cos(t * 2.0)) * size,
        ],
        axis=1,
    )
    return pts + rng.normal(0.0, 0.5, size=pts.shape)


def bench(sizes, repeats):
    rng = np.random.default_rng(7)
    rows = []
    for size in sizes:
        data = rng.random((size, size, size))
        pts = _polyline(size, rng)
        cases = [
            ("neighborhood_mean_std", (data,)),
            ("gradient_magnitude", (data,)),
            ("tube_mask", ((size, size, size), pts, 2.0)),
        ]
        for name, args in cases:
            ref = getattr(_numpy, name)(*args)
            jit = getattr(_numba, name)(*args)
            if isinstance(ref, tuple):
                same = all(a.tobytes() == b.tobytes() for a, b in zip(ref, jit))
            else:
                same = ref.tobytes() == jit.tobytes()
            if not same:
                print(f"MISMATCH: {name} size={size}", file=sys.stderr)
                return 1
            t_np = _time_best(getattr(_numpy, name), *args, repeats=repeats)
            t_nb = _time_best(getattr(_numba, name), *args, repeats=repeats)
            rows.append((name, size, t_np * 1e3, t_nb * 1e3, t_np / t_nb))

    header = f"{'kernel':<24} {'size':>5} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, size, ms_np, ms_nb, ratio in rows:
        print(f"{name:<24} {size:>4}^3 {ms_np:>10.2f} {ms_nb:>10.2f} {ratio:>7.1f}x")
    return 0


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--sizes", default="48,96",
                        help="comma-separated cube edge lengths")
    args = parser.parse_args()
    if _numba is None:
        print("numba backend unavailable; nothing to compare", file=sys.stderr)
        return 1
    sizes = [int(s) for s in args.sizes.split(",")]

    # warm the JIT so compile time stays out of the measurements
    warm = np.zeros((4, 4, 4))
    _numba.neighborhood_mean_std(warm)
    _numba.gradient_magnitude(warm)
    _numba.tube_mask((4, 4, 4), np.array([[0.0, 0.0, 0.0], [3.0, 3.0, 3.0]]), 1.0)

    return bench(sizes, args.repeats)


if __name__ == "__main__":
    raise SystemExit(main())
