"""Timing comparison of the numba and numpy simulation backends.

Runs the same fixed-seed workloads through both backends and reports
wall time, million EM steps per second, and the speedup.  The two
backends draw from the same counter-based streams, so hit counts should
agree closely (exactly, up to rare tail-branch rounding; see
docs/rng.md).

Usage:  python3 benchmarks/kernel_bench.py [--paths N] [--repeat K]
"""

import argparse
import time

import numpy as np

from residence_lab.mc import aggregate
from residence_lab.sde import (Domain, gbm_cubic, linear_system,
                               poly_drift_unit_noise, simulate_paths)
from residence_lab._jit import HAVE_NUMBA


def workloads(paths):
    yield ("cubic drift, unit noise", poly_drift_unit_noise(3),
           Domain.ball(1.0), [2.0], paths, 1e-3, 10.0)
    yield ("GBM alpha1=0.25", gbm_cubic(0.25, 1.0, 0.0),
           Domain.ball(1.0), [2.0], paths, 1e-3, 50.0)
    A = np.array([[-16.0, 0.0], [0.0, -16.0]])
    C = np.eye(2)
    yield ("2-D linear, gain -16I", linear_system(A, None, C),
           Domain.ball(1.0), [2.0, 0.0], paths, 2e-4, 1.0)


def total_steps(result):
    return int(np.sum(np.minimum(np.round(result.t_end / result.dt),
                                 result.n_steps)))


def run_one(sys_, dom, x0, paths, dt, t_max, backend, repeat):
    best = np.inf
    result = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = simulate_paths(sys_, dom, x0, paths, dt, t_max,
                                backend=backend, threads=1)
        best = min(best, time.perf_counter() - t0)
    return best, result


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=4000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    backends = ["numpy"] + (["numba"] if HAVE_NUMBA else [])
    if not HAVE_NUMBA:
        print("numba not importable; timing the numpy backend only")

    # warm the JIT caches outside the timed region
    if HAVE_NUMBA:
        for _, sys_, dom, x0, _, dt, _ in workloads(8):
            simulate_paths(sys_, dom, x0, 8, dt, 5 * dt, backend="numba",
                           threads=1)

    print(f"{'workload':<26}{'backend':<9}{'time [s]':>10}"
          f"{'Msteps/s':>10}{'hits':>8}")
    for name, sys_, dom, x0, paths, dt, t_max in workloads(args.paths):
        times = {}
        for backend in backends:
            elapsed, result = run_one(sys_, dom, x0, paths, dt, t_max,
                                      backend, args.repeat)
            times[backend] = elapsed
            steps = total_steps(result)
            hits = aggregate(result).n_hit
            print(f"{name:<26}{result.backend:<9}{elapsed:>10.3f}"
                  f"{steps / elapsed / 1e6:>10.1f}{hits:>8}")
        if len(times) == 2:
            print(f"{'':<26}speedup numba/numpy: "
                  f"{times['numpy'] / times['numba']:.1f}x")


if __name__ == "__main__":
    main()
