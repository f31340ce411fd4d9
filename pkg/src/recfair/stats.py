"""Two-sample tests used for significance: Mann-Whitney U and Kolmogorov-Smirnov."""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np
from scipy.special import comb, kolmogorov, ndtr

EXACT_MAX_PRODUCT = 400
EXACT_TIES_MAX_ARRANGEMENTS = 20_000


def rankdata(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties given their mean (mid) rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x))
    i = 0
    n = len(x)
    while i < n:
        j = i
        while j + 1 < n and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def u_statistic(a, b) -> float:
    """U of sample ``a``: number of (a, b) pairs with a > b, ties counting one half."""
    a = np.asarray(a, dtype=np.float64)
    ranks = rankdata(np.concatenate([a, np.asarray(b, dtype=np.float64)]))
    n1 = len(a)
    return float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)


@lru_cache(maxsize=None)
def u_null_counts(m: int, n: int) -> tuple[int, ...]:
    """
    Number of arrangements giving each U value ``0..m*n`` for tie-free samples
    of sizes ``m`` and ``n`` (recursion on the largest observation).
    """
    if m == 0 or n == 0:
        return (1,)
    with_a = u_null_counts(m - 1, n)  # largest value belongs to a: adds n to U
    with_b = u_null_counts(m, n - 1)
    out = [0] * (m * n + 1)
    for k, c in enumerate(with_a):
        out[k + n] += c
    for k, c in enumerate(with_b):
        out[k] += c
    return tuple(out)


def _two_sided(lower: float, upper: float) -> float:
    return min(1.0, 2.0 * min(lower, upper))


def _exact_tie_free(u: float, m: int, n: int) -> float:
    counts = np.array(u_null_counts(m, n), dtype=np.float64)
    total = counts.sum()
    k = int(round(u))
    return _two_sided(counts[: k + 1].sum() / total, counts[k:].sum() / total)


def _exact_permutation(pooled: np.ndarray, m: int, u_obs: float) -> float:
    ranks = rankdata(pooled)
    base = m * (m + 1) / 2.0
    us = np.array([ranks[list(c)].sum() - base for c in itertools.combinations(range(len(pooled)), m)])
    tol = 1e-9
    return _two_sided(np.mean(us <= u_obs + tol), np.mean(us >= u_obs - tol))


def _normal_approx(u: float, m: int, n: int, ranks: np.ndarray) -> float:
    N = m + n
    _, ties = np.unique(ranks, return_counts=True)
    tie_term = float(((ties**3) - ties).sum())
    var = m * n / 12.0 * ((N + 1) - tie_term / (N * (N - 1)))
    if var <= 0:
        return 1.0
    z = max(abs(u - m * n / 2.0) - 0.5, 0.0) / math.sqrt(var)
    return min(1.0, 2.0 * float(ndtr(-z)))


def mann_whitney(a, b, method: str = "auto") -> tuple[float, float]:
    """
    Two-sided Mann-Whitney U test; returns ``(U of a, p)``.

    ``auto`` uses the exact null distribution for tie-free samples with
    ``len(a) * len(b) <= 400``, exact enumeration over arrangements of the
    pooled values for small samples with ties, and otherwise the normal
    approximation with tie and continuity corrections.  ``method`` may force
    ``"exact"`` or ``"normal"``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, n = len(a), len(b)
    if m < 1 or n < 1:
        raise ValueError("both samples must be non-empty")
    pooled = np.concatenate([a, b])
    ranks = rankdata(pooled)
    u = float(ranks[:m].sum() - m * (m + 1) / 2.0)
    if np.all(pooled == pooled[0]):
        return u, 1.0
    has_ties = len(np.unique(pooled)) < len(pooled)
    if method == "auto":
        if not has_ties and m * n <= EXACT_MAX_PRODUCT:
            method = "exact"
        elif has_ties and comb(m + n, m, exact=True) <= EXACT_TIES_MAX_ARRANGEMENTS:
            method = "exact"
        else:
            method = "normal"
    if method == "exact":
        if has_ties:
            return u, _exact_permutation(pooled, m, u)
        return u, _exact_tie_free(u, m, n)
    if method == "normal":
        return u, _normal_approx(u, m, n, ranks)
    raise ValueError(f"unknown method {method!r}")


def ks_statistic(x, y) -> float:
    """``sup |F_x - F_y|`` over the pooled sample points (empirical CDFs)."""
    x = np.sort(np.asarray(x, dtype=np.float64))
    y = np.sort(np.asarray(y, dtype=np.float64))
    if len(x) == 0 or len(y) == 0:
        raise ValueError("both samples must be non-empty")
    pts = np.concatenate([x, y])
    fx = np.searchsorted(x, pts, side="right") / len(x)
    fy = np.searchsorted(y, pts, side="right") / len(y)
    return float(np.max(np.abs(fx - fy)))


def ks_two_sample(x, y) -> tuple[float, float]:
    """KS statistic and asymptotic p-value with effective size ``n0 n1 / (n0 + n1)``."""
    d = ks_statistic(x, y)
    en = len(x) * len(y) / (len(x) + len(y))
    p = float(kolmogorov(math.sqrt(en) * d)) if d > 0 else 1.0
    return d, min(1.0, max(0.0, p))
