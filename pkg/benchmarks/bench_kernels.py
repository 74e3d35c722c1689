"""Compiled vs pure-numpy kernels.

    python benchmarks/bench_kernels.py [--repeat N]

Times each hot kernel on both backends with identical inputs and checks the
outputs agree.
"""
import argparse
import timeit

import numpy as np

from rmfg import _backend


def cases(n_paths, m, n_ctrl):
    rng = np.random.default_rng(0)
    ids = np.arange(n_paths, dtype=np.int64)
    x = np.abs(rng.normal(1, 1, n_paths))
    drift = rng.normal(size=n_paths)
    var = rng.uniform(0.1, 1.0, n_paths)
    v_next = rng.normal(size=m)
    mean = rng.normal(1, 1, (m, n_ctrl))
    scale = rng.uniform(0.05, 0.3, (m, n_ctrl))
    nodes, w = np.polynomial.hermite_e.hermegauss(7)
    w = w / w.sum()
    return {
        "normals": lambda k: k.normals(7, ids, 3),
        "euler_reflect": lambda k: k.euler_reflect(x, drift, var, 1e-3, 7, ids, 3),
        "euler_reflect refine=4": lambda k: k.euler_reflect(x, drift, var, 1e-3, 7, ids, 3, 4),
        "bellman_expectation": lambda k: k.bellman_expectation(v_next, 5.0, mean, scale, nodes, w, 0.1),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--paths", type=int, default=100_000)
    ap.add_argument("--states", type=int, default=4000)
    args = ap.parse_args()
    py = _backend.load("python")
    try:
        cy = _backend.load("cython")
    except ImportError:
        raise SystemExit("compiled extension not built; run pip install -e . first")
    print(f"{args.paths} paths, {args.states} state nodes x 3 controls, best of {args.repeat}")
    print(f"{'kernel':<24}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, fn in cases(args.paths, args.states, 3).items():
        a, b = fn(py), fn(cy)
        for u, v in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            np.testing.assert_allclose(u, v, rtol=1e-12, atol=1e-12)
        tp = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat)) * 1e3
        tc = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<24}{tp:>12.2f}{tc:>12.2f}{tp / tc:>9.1f}x")


if __name__ == "__main__":
    main()
