"""Benchmark the compiled hashing kernels against the NumPy fallback.

Times the three kernel entry points plus an end-to-end library-build-and-gate
workload on synthetic data, and prints one table row per case.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from driftsketch._kernels import pure
from driftsketch.core import seeded_rng

try:
    from driftsketch._kernels import _fast as compiled
except ImportError:
    compiled = None


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def workloads():
    rng = seeded_rng(0, "bench")
    bins = rng.integers(-500, 500, size=4096).astype(np.int64)
    tokens = rng.integers(0, 2**64, size=2048, dtype=np.uint64)
    salts = rng.integers(0, 2**64, size=128, dtype=np.uint64)
    matrix = rng.integers(0, 16, size=(5000, 128)).astype(np.uint64)
    query = rng.integers(0, 16, size=128).astype(np.uint64)
    token_sets = [
        rng.integers(0, 2**64, size=96, dtype=np.uint64) for _ in range(500)
    ]

    def build_and_gate(backend):
        sigs = np.stack([backend.minhash_signature(t, salts) for t in token_sets])
        total = 0
        for t in token_sets[:50]:
            q = backend.minhash_signature(t, salts)
            total += int(backend.match_counts(sigs, q).max())
        return total

    return [
        ("hash_bins (4096 dims)", lambda b: b.hash_bins(bins)),
        ("minhash (2048 tokens x 128)", lambda b: b.minhash_signature(tokens, salts)),
        ("match_counts (5000 x 128)", lambda b: b.match_counts(matrix, query)),
        ("build+gate (500 sets, 50 probes)", build_and_gate),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    print(f"{'workload':<36} {'pure':>12} {'compiled':>12} {'speedup':>9}")
    for name, fn in workloads():
        t_pure = best_of(lambda: fn(pure), args.repeat)
        if compiled is None:
            print(f"{name:<36} {t_pure * 1e3:>10.3f}ms {'n/a':>12} {'n/a':>9}")
            continue
        t_fast = best_of(lambda: fn(compiled), args.repeat)
        out_pure = fn(pure)
        out_fast = fn(compiled)
        if isinstance(out_pure, np.ndarray):
            assert (out_pure == out_fast).all(), f"backend mismatch in {name}"
        else:
            assert out_pure == out_fast, f"backend mismatch in {name}"
        print(
            f"{name:<36} {t_pure * 1e3:>10.3f}ms {t_fast * 1e3:>10.3f}ms "
            f"{t_pure / t_fast:>8.1f}x"
        )
    if compiled is None:
        print("\ncompiled kernel not built; only the NumPy fallback was timed")


if __name__ == "__main__":
    main()
