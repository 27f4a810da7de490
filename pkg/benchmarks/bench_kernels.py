"""Benchmark the numba kernels against their pure-numpy fallbacks.

Run with the default backend to see both paths side by side:

    python benchmarks/bench_kernels.py

Workloads mirror the real call patterns: LCS over question-length token id
sequences (the inner loop of the Rouge-L matchers) and banded best-span
search over QA-length logit vectors (the answerability rule).
"""

from __future__ import annotations

import time

import numpy as np

from storyqg import kernels

if not kernels.NUMBA_ENABLED:
    raise SystemExit(
        "numba backend is disabled (STORYQG_NO_NUMBA is set); "
        "unset it to compare both paths"
    )

_numba_lcs = kernels._lcs_impl
_numba_span = kernels._span_impl


def bench(label: str, fn, args_iter, repeats: int = 3) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        for args in args_iter:
            fn(*args)
        best = min(best, time.perf_counter() - start)
    print(f"  {label:<24} {best * 1e3:9.1f} ms")
    return best


def main() -> None:
    rng = np.random.default_rng(0)

    print("LCS length: 20,000 question pairs, 8-16 tokens each")
    pairs = [
        (
            rng.integers(0, 50, size=rng.integers(8, 17)).astype(np.int64),
            rng.integers(0, 50, size=rng.integers(8, 17)).astype(np.int64),
        )
        for _ in range(20_000)
    ]
    _numba_lcs(*pairs[0])  # absorb jit compilation outside the timing
    t_nb = bench("numba", _numba_lcs, pairs)
    t_np = bench("numpy fallback", kernels.lcs_length_numpy, pairs)
    print(f"  speedup: {t_np / t_nb:.1f}x\n")

    print("LCS length: 2,000 passage pairs, 100-200 tokens each")
    long_pairs = [
        (
            rng.integers(0, 500, size=rng.integers(100, 201)).astype(np.int64),
            rng.integers(0, 500, size=rng.integers(100, 201)).astype(np.int64),
        )
        for _ in range(2_000)
    ]
    t_nb = bench("numba", _numba_lcs, long_pairs)
    t_np = bench("numpy fallback", kernels.lcs_length_numpy, long_pairs)
    print(f"  speedup: {t_np / t_nb:.1f}x\n")

    print("best span: 5,000 QA score vectors, 384 positions, max length 30")
    spans = []
    for _ in range(5_000):
        n = 384
        mask = np.zeros(n, dtype=bool)
        mask[20:370] = True
        spans.append((rng.normal(size=n), rng.normal(size=n), mask, 30))
    _numba_span(*spans[0])
    t_nb = bench("numba", _numba_span, spans)
    t_np = bench("numpy fallback", kernels.best_span_numpy, spans)
    print(f"  speedup: {t_np / t_nb:.1f}x")


if __name__ == "__main__":
    main()
