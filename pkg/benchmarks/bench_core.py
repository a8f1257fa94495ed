"""Compare the compiled kernel backend against the NumPy one.

Usage: python3 benchmarks/bench_core.py [n_points]

Times the density-with-partials kernel per family and the full posterior
gradient, which is what the sampler spends its life in.  COPSSM_PURE=1
would hide the compiled backend entirely, so this script imports both
implementations directly and reports the ratio.
"""

import sys
import time

import numpy as np

from copssm._core import pure

try:
    from copssm._core import _kernels
except ImportError:
    _kernels = None

FAMILIES = [
    ("gaussian", pure.CODE_GAUSSIAN, 0.0, 0.6),
    ("t3", pure.CODE_STUDENT_T, 3.0, 0.6),
    ("gumbel", pure.CODE_GUMBEL, 0.0, 2.0),
    ("clayton", pure.CODE_CLAYTON, 0.0, 1.5),
    ("frank", pure.CODE_FRANK, 0.0, 5.7),
]


def best_of(fn, repeats=7):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(n):
    rng = np.random.default_rng(0)
    u = rng.uniform(0.01, 0.99, size=n)
    v = rng.uniform(0.01, 0.99, size=n)
    print(f"logpdf_partials, n={n} (microseconds per call, best of 7)")
    print(f"{'family':<10}{'pure':>10}{'compiled':>10}{'speedup':>9}")
    for name, code, df, theta in FAMILIES:
        df_arg = int(df) if df else None
        t_pure = best_of(lambda: pure.logpdf_partials(code, theta, df_arg, u, v))
        if _kernels is None:
            print(f"{name:<10}{t_pure*1e6:>10.1f}{'-':>10}{'-':>9}")
            continue
        t_comp = best_of(lambda: _kernels.logpdf_partials(code, theta, df, u, v))
        print(f"{name:<10}{t_pure*1e6:>10.1f}{t_comp*1e6:>10.1f}{t_pure/t_comp:>8.1f}x")


def bench_posterior(n):
    from copssm import copulas as cop
    from copssm.model import ModelConfig, PosteriorTarget, simulate_series

    rng = np.random.default_rng(1)
    config = ModelConfig(cop.GAUSSIAN, cop.GAUSSIAN)
    data = simulate_series(config, 0.7, n, rng)
    target = PosteriorTarget(data, config)
    q = 0.3 * rng.standard_normal(n + 1)
    target.value_and_grad(q)
    loops = max(1, 200_000 // n)

    def timed():
        for _ in range(loops):
            target.value_and_grad(q)

    per_call = best_of(timed, repeats=5) / loops
    from copssm._core import BACKEND

    print(f"\nposterior value_and_grad, T={n}, backend={BACKEND}: {per_call*1e6:.1f} us")


if __name__ == "__main__":
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
    bench_kernels(n)
    bench_posterior(n)
