"""Benchmark the numba-jitted hot kernels against their numpy fallbacks.

Runs each kernel with both implementations on representative workloads and
prints a timing table.  The package picks its backend at import time from
the ``INVDIFF_BACKEND`` environment variable (auto|numba|numpy); this
script times both code paths in one process, warming the JIT first.

Usage:
    python benchmarks/bench_backends.py [--reps N]
"""

import argparse
import time

import numpy as np

from invdiff import _accel


def best_of(fn, args, reps):
    best = np.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def workloads():
    rng = np.random.default_rng(0)

    image = rng.random((128, 128))
    kernel = rng.random((33, 33))
    kernel /= kernel.sum()
    yield "conv2_same (128x128 * 33x33)", "conv2_same", (image, kernel), 5

    c0 = np.zeros(600)
    c0[0] = 1.0 / 1e-6
    # dt respects the explicit-scheme stability bound dz^2 / (2 D)
    yield (
        "pde_sweep (600 cells x 5000 steps)",
        "pde_sweep",
        (c0, 5000, 2e-3, 1e-6, 1e-10, 1e-6, 1e-4),
        3,
    )

    rows = rng.standard_normal((16384, 7))
    support = np.array([True] * 6 + [False])
    yield "prox_rows (16384 x 7)", "prox_rows", (rows, 0.7, support), 20


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "--reps", type=int, default=None, help="override repetitions for every workload"
    )
    args = parser.parse_args()

    print(f"active backend: {_accel.backend_name()}")
    have_numba = _accel.conv2_same_numba is not None
    if not have_numba:
        print("numba is not importable; only the numpy path is timed")

    header = f"{'workload':<38} {'numpy':>10} {'numba':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for label, name, wargs, reps in workloads():
        reps = args.reps or reps
        t_np = best_of(getattr(_accel, f"{name}_numpy"), wargs, reps)
        if have_numba:
            jit = getattr(_accel, f"{name}_numba")
            jit(*wargs)  # warm the JIT outside the timed region
            t_nb = best_of(jit, wargs, reps)
            print(f"{label:<38} {t_np * 1e3:>8.2f}ms {t_nb * 1e3:>8.2f}ms {t_np / t_nb:>7.1f}x")
        else:
            print(f"{label:<38} {t_np * 1e3:>8.2f}ms {'-':>10} {'-':>8}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
