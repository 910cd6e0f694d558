"""Time the numba and pure-numpy variants of every hot kernel on the same inputs.

    python3 benchmarks/bench_kernels.py [--N 64] [--repeat 5]

Prints one row per kernel with the best-of-``repeat`` wall time of each path,
the speedup, and the max absolute difference between the two results.
The numba path is compiled once before timing.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from katolab import _kernels as K


def cases(N: int, rng: np.random.Generator):
    f = rng.standard_normal((N, N))
    r = max(2, N // 16)
    oy, ox = np.mgrid[-r : r + 1, -r : r + 1]
    inside = oy**2 + ox**2 <= r * r
    dy, dx = oy[inside].ravel(), ox[inside].ravel()
    w = np.array([0.25, 0.5, 0.25])
    m = min(N * 4, 512)
    t = np.triu(rng.standard_normal((m, m)) * 0.1) + np.diag(1 + rng.random(m))
    return [
        ("cube_oscillation_max", (f, r, r)),
        ("ball_maxima", (f, dy, dx)),
        ("smooth", (f, w, (0, 1))),
        ("sqrt_upper", (t.astype(complex),)),
    ]


def _diff(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':22s} {'numba [s]':>11s} {'numpy [s]':>11s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, a in cases(args.N, rng):
        nb = getattr(K, f"{name}_numba")
        npy = getattr(K, f"{name}_numpy")
        ref = nb(*a)  # compile
        d = _diff(ref, npy(*a))
        t_nb = min(timeit.repeat(lambda: nb(*a), number=1, repeat=args.repeat))
        t_np = min(timeit.repeat(lambda: npy(*a), number=1, repeat=args.repeat))
        print(f"{name:22s} {t_nb:11.2e} {t_np:11.2e} {t_np / t_nb:8.1f} {d:11.1e}")


if __name__ == "__main__":
    main()
