"""Compare the compiled kernel backend against the NumPy reference.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats 200]

Prints per-kernel median wall times for both backends and the speedup, on
workload shapes matching what the samplers actually produce (trajectory
bundles of a few agents over tens of steps, token rows of modest width).
"""

import argparse
import statistics
import time

import numpy as np

from projdiff.kernels import _reference
from projdiff.numerics import SeededRng

try:
    from projdiff.kernels import _speedups
except ImportError:
    _speedups = None


def time_call(fn, args, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def workloads(rng):
    pos = rng.uniform(0.0, 8.0, shape=(6, 32, 2))
    radii = rng.uniform(0.2, 0.6, shape=6)
    dmin = radii[:, None] + radii[None, :]
    centers = rng.uniform(0.0, 8.0, shape=(5, 2))
    obs_radii = rng.uniform(0.5, 1.2, shape=5)
    rows = rng.uniform(0.01, 1.0, shape=(64, 16))
    rows /= rows.sum(axis=1, keepdims=True)
    grams = rng.integers(0, 16, shape=(12, 3))
    weights = rng.uniform(0.1, 2.0, shape=12)
    return [
        ("pairwise_clearance", (pos, dmin)),
        ("obstacle_clearance", (pos, centers, obs_radii)),
        ("ngram_score", (rows, grams, weights)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if _speedups is None:
        print("compiled backend not built; nothing to compare")
        return

    rng = SeededRng(args.seed)
    print(f"{'kernel':22s} {'reference':>12s} {'compiled':>12s} {'speedup':>9s}")
    for name, call_args in workloads(rng):
        ref_fn = getattr(_reference, name)
        fast_fn = getattr(_speedups, name)
        v_ref = ref_fn(*call_args)[0]
        v_fast = fast_fn(*call_args)[0]
        assert abs(v_ref - v_fast) <= 1e-10 * max(1.0, abs(v_ref)), name
        t_ref = time_call(ref_fn, call_args, args.repeats)
        t_fast = time_call(fast_fn, call_args, args.repeats)
        print(
            f"{name:22s} {t_ref * 1e6:10.1f}us {t_fast * 1e6:10.1f}us "
            f"{t_ref / t_fast:8.1f}x"
        )


if __name__ == "__main__":
    main()
