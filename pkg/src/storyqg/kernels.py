"""Hot numeric kernels: LCS length and banded best-span search.

Both kernels ship in two versions: a numba @njit build (default) and a pure
numpy fallback. Set ``STORYQG_NO_NUMBA=1`` to force the fallback; run
``benchmarks/bench_kernels.py`` to compare them.
"""

from __future__ import annotations

import os

import numpy as np

NUMBA_ENV_FLAG = "STORYQG_NO_NUMBA"

_NEG_INF = float("-inf")


def _lcs_length_np(a: np.ndarray, b: np.ndarray) -> int:
    """Row-vectorized LCS DP.

    Uses the relaxed recurrence dp[i][j] = max(dp[i-1][j], dp[i][j-1],
    dp[i-1][j-1] + match), whose row update reduces to a running maximum.
    """
    n, m = a.shape[0], b.shape[0]
    if n == 0 or m == 0:
        return 0
    prev = np.zeros(m + 1, dtype=np.int64)
    for i in range(n):
        cand = np.maximum(prev[1:], prev[:-1] + (b == a[i]))
        prev[1:] = np.maximum.accumulate(cand)
    return int(prev[m])


def _best_span_np(
    start_logits: np.ndarray,
    end_logits: np.ndarray,
    valid: np.ndarray,
    max_length: int,
) -> tuple[float, int, int]:
    """Exact max of start[s] + end[e] over valid spans s <= e < s + max_length.

    Ties resolve to the smallest start, then the smallest end. Returns
    (-inf, -1, -1) when no valid span exists.
    """
    n = start_logits.shape[0]
    width = min(max_length, n)
    if width <= 0:
        return _NEG_INF, -1, -1
    # scores[s, d] = start[s] + end[s + d]; row-major argmax gives the
    # (smallest s, smallest e) tie-break for free
    scores = np.full((n, width), _NEG_INF)
    for d in range(width):
        seg = start_logits[: n - d] + end_logits[d:]
        ok = valid[: n - d] & valid[d:]
        scores[: n - d, d] = np.where(ok, seg, _NEG_INF)
    flat = int(np.argmax(scores))
    s, d = divmod(flat, width)
    best = float(scores[s, d])
    if best == _NEG_INF:
        return _NEG_INF, -1, -1
    return best, s, s + d


def _numba_disabled() -> bool:
    return os.environ.get(NUMBA_ENV_FLAG, "").strip() in {"1", "true", "yes"}


if not _numba_disabled():
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        njit = None
else:
    njit = None

if njit is not None:

    @njit(cache=True)
    def _lcs_length_nb(a: np.ndarray, b: np.ndarray) -> int:  # pragma: no cover - jit
        n, m = a.shape[0], b.shape[0]
        if n == 0 or m == 0:
            return 0
        prev = np.zeros(m + 1, dtype=np.int64)
        cur = np.zeros(m + 1, dtype=np.int64)
        for i in range(n):
            for j in range(1, m + 1):
                if a[i] == b[j - 1]:
                    v = prev[j - 1] + 1
                else:
                    v = prev[j]
                if cur[j - 1] > v:
                    v = cur[j - 1]
                cur[j] = v
            prev, cur = cur, prev
        return int(prev[m])

    @njit(cache=True)
    def _best_span_nb(
        start_logits: np.ndarray,
        end_logits: np.ndarray,
        valid: np.ndarray,
        max_length: int,
    ) -> tuple[float, int, int]:  # pragma: no cover - jit
        n = start_logits.shape[0]
        best = _NEG_INF
        bs = -1
        be = -1
        for s in range(n):
            if not valid[s]:
                continue
            stop = s + max_length
            if stop > n:
                stop = n
            for e in range(s, stop):
                if not valid[e]:
                    continue
                score = start_logits[s] + end_logits[e]
                if score > best:
                    best = score
                    bs = s
                    be = e
        return best, bs, be

    NUMBA_ENABLED = True
    _lcs_impl = _lcs_length_nb
    _span_impl = _best_span_nb
else:
    NUMBA_ENABLED = False
    _lcs_impl = _lcs_length_np
    _span_impl = _best_span_np


def lcs_length(a: np.ndarray, b: np.ndarray) -> int:
    """Length of the longest common subsequence of two int64 id sequences."""
    a = np.ascontiguousarray(a, dtype=np.int64)
    b = np.ascontiguousarray(b, dtype=np.int64)
    return int(_lcs_impl(a, b))


def best_span(
    start_logits: np.ndarray,
    end_logits: np.ndarray,
    valid: np.ndarray,
    max_length: int,
) -> tuple[float, int, int]:
    """Best-scoring ordered span within the valid mask; see _best_span_np."""
    start_logits = np.ascontiguousarray(start_logits, dtype=np.float64)
    end_logits = np.ascontiguousarray(end_logits, dtype=np.float64)
    valid = np.ascontiguousarray(valid, dtype=np.bool_)
    if start_logits.shape != end_logits.shape or start_logits.shape != valid.shape:
        raise ValueError("start_logits, end_logits and valid must share shape")
    if max_length < 1:
        raise ValueError("max_length must be >= 1")
    score, s, e = _span_impl(start_logits, end_logits, valid, max_length)
    return float(score), int(s), int(e)


# fallbacks are always exposed for the benchmark and cross-checking tests
lcs_length_numpy = _lcs_length_np
best_span_numpy = _best_span_np
