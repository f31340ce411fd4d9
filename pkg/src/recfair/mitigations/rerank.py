"""
User-oriented fair re-ranking (Li et al., 2021).

From each user's base list of ``m`` candidates, select ``n`` items maximizing
the total predicted score subject to ``|U_0 - U_1| <= eps``, where ``U_g`` is
the average over group-``g`` users of the mean predicted score of their
selection.  The integer program is approached greedily: start from the top-n
prefixes and repeatedly apply the single-item swap with the best resulting
total score among swaps that shrink the gap, until the constraint holds.
When no single swap shrinks the gap, a pair of swaps whose combined effect
does (each alone would overshoot) is tried before giving up.  The
least-infeasible selection seen is returned.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass

import numpy as np

from ..data import GroupAssignment
from ..models.base import TopNLists

_log = logging.getLogger(__name__)

_TOL = 1e-15


@dataclass
class RerankProblem:
    users: list[str]
    items: list[list[str]]
    scores: np.ndarray  # users x m, each row non-increasing; padded with -inf
    valid: np.ndarray  # users x m bool
    group: np.ndarray  # 0/1 per user
    n: int

    @classmethod
    def from_lists(cls, base: TopNLists, groups: GroupAssignment, n: int) -> RerankProblem:
        users = [u for u in base.lists if groups.labels.get(u) is not None]
        m = max((len(base.lists[u]) for u in users), default=0)
        scores = np.full((len(users), m), -np.inf)
        valid = np.zeros((len(users), m), dtype=bool)
        items = []
        for k, u in enumerate(users):
            recs = base.lists[u]
            items.append([i for i, _ in recs])
            scores[k, : len(recs)] = [s for _, s in recs]
            valid[k, : len(recs)] = True
        group = np.array([groups.labels[u] for u in users], dtype=np.int64)
        return cls(users, items, scores, valid, group, n)


def group_utilities(scores: np.ndarray, sel: np.ndarray, group: np.ndarray, n_sel: np.ndarray) -> tuple[float, float]:
    per_user = np.where(sel, scores, 0.0).sum(axis=1) / np.maximum(n_sel, 1)
    return float(per_user[group == 0].mean()), float(per_user[group == 1].mean())


def _best_swap(scores, valid, sel_row, coef, bound):
    """
    Highest-utility swap ``(delta, out, in)`` for one user whose gap change
    ``coef * delta`` lies strictly inside ``(-bound, 0)``; ``None`` if none.
    """
    out_idx = np.flatnonzero(sel_row)
    in_idx = np.flatnonzero(valid & ~sel_row)
    if coef == 0 or len(out_idx) == 0 or len(in_idx) == 0:
        return None
    delta = scores[in_idx][None, :] - scores[out_idx][:, None]
    change = coef * delta
    ok = (change < 0) & (change > -bound + _TOL)
    if not ok.any():
        return None
    cand = np.where(ok, delta, -np.inf)
    flat = int(np.argmax(cand))  # first (out, in) pair wins ties
    o, i = divmod(flat, len(in_idx))
    return float(cand[o, i]), int(out_idx[o]), int(in_idx[i])


def _single_swaps(S, valid, sel, weight):
    """Every admissible single swap: user, out, in, score change, gap change."""
    parts = []
    for u in range(S.shape[0]):
        out_idx = np.flatnonzero(sel[u])
        in_idx = np.flatnonzero(valid[u] & ~sel[u])
        if len(out_idx) == 0 or len(in_idx) == 0 or weight[u] == 0:
            continue
        o, i = np.meshgrid(out_idx, in_idx, indexing="ij")
        o, i = o.ravel(), i.ravel()
        d = S[u, i] - S[u, o]
        parts.append((np.full(len(o), u), o, i, d, weight[u] * d))
    if not parts:
        return None
    return tuple(np.concatenate(c) for c in zip(*parts))


def _best_pair(S, valid, sel, weight, gap):
    """
    Two non-conflicting swaps whose combined gap change lands strictly inside
    ``(-gap - |gap|, -gap + |gap|)``, maximizing the total score change;
    ``None`` if there is none.  Each candidate's best partner is found with a
    range-max query over swaps sorted by gap change.
    """
    sw = _single_swaps(S, valid, sel, weight)
    if sw is None:
        return None
    us, os_, is_, d, c = sw
    order = np.argsort(c, kind="stable")
    us, os_, is_, d, c = us[order], os_[order], is_[order], d[order], c[order]
    n = len(c)
    # sparse table of argmax(d) over power-of-two windows
    table = [np.arange(n)]
    span = 1
    while 2 * span <= n:
        prev = table[-1]
        a, b = prev[: n - 2 * span + 1], prev[span : n - span + 1]
        table.append(np.where(d[b] > d[a], b, a))
        span *= 2

    def range_argmax(lo, hi):  # half-open, vectorized; requires hi > lo
        length = hi - lo
        level = np.floor(np.log2(np.maximum(length, 1))).astype(np.int64)
        out = np.empty(len(lo), dtype=np.int64)
        for lv in np.unique(level):
            m = level == lv
            t = table[lv]
            a = t[lo[m]]
            b = t[hi[m] - (1 << lv)]
            out[m] = np.where(d[b] > d[a], b, a)
        return out

    low, high = -gap - abs(gap) + _TOL, -gap + abs(gap) - _TOL
    lo = np.searchsorted(c, low - c, side="right")
    hi = np.searchsorted(c, high - c, side="left")

    def conflict(a, b):
        return a == b or (us[a] == us[b] and (os_[a] == os_[b] or is_[a] == is_[b]))

    best, best_val = None, -np.inf
    ok = hi > lo
    idx = np.flatnonzero(ok)
    if len(idx) == 0:
        return None
    partner = range_argmax(lo[idx], hi[idx])
    vals = d[idx] + d[partner]
    for k in np.argsort(-vals, kind="stable"):
        a, b = int(idx[k]), int(partner[k])
        if vals[k] <= best_val:
            break
        if not conflict(a, b):
            best, best_val = (a, b), vals[k]
            break
        # conflicting partner: scan the window for the best compatible one
        for b2 in np.argsort(-d[lo[a] : hi[a]], kind="stable") + lo[a]:
            if not conflict(a, int(b2)):
                if d[a] + d[b2] > best_val:
                    best, best_val = (a, int(b2)), d[a] + d[b2]
                break
    if best is None:
        return None
    return [(int(us[x]), int(os_[x]), int(is_[x])) for x in best]


def _greedy(prob: RerankProblem, eps: float, max_iter: int) -> np.ndarray:
    """
    Repeatedly apply the swap with the best resulting total score among swaps
    that strictly shrink ``|gap|``.  Each user's best admissible swap sits in a
    max-heap; while the gap keeps its sign the admissible range only
    narrows, so stale entries are upper bounds and are re-checked lazily.
    """
    S, valid, group = prob.scores, prob.valid, prob.group
    S = np.where(valid, S, 0.0)
    n_users = len(prob.users)
    n_u = np.minimum(valid.sum(axis=1), prob.n)
    sel = np.zeros_like(valid)
    for k in range(n_users):
        sel[k, : n_u[k]] = True
    sizes = np.array([(group == 0).sum(), (group == 1).sum()], dtype=np.float64)
    # contribution of one unit of user score to U_0 - U_1
    weight = np.where(group == 0, 1.0 / sizes[0], -1.0 / sizes[1]) / np.maximum(n_u, 1)
    gap = float((np.where(sel, S, 0.0).sum(axis=1) * weight).sum())
    best_sel, best_gap = sel.copy(), abs(gap)

    def entry(u, sign, bound):
        sw = _best_swap(S[u], valid[u], sel[u], sign * weight[u], bound)
        return None if sw is None else (-sw[0], u, sw[1], sw[2])

    def rebuild(sign, bound):
        h = [e for e in (entry(u, sign, bound) for u in range(n_users)) if e is not None]
        heapq.heapify(h)
        return h

    sign = 1.0 if gap >= 0 else -1.0
    heap = rebuild(sign, 2 * abs(gap))
    for _ in range(max_iter):
        if abs(gap) <= eps:
            break
        if not heap:
            move = _best_pair(S, valid, sel, weight, gap)
            if move is None:
                break
            for u, o, i in move:
                sel[u, o] = False
                sel[u, i] = True
                gap += weight[u] * (S[u, i] - S[u, o])
            if abs(gap) < best_gap:
                best_sel, best_gap = sel.copy(), abs(gap)
            sign = 1.0 if gap >= 0 else -1.0
            heap = rebuild(sign, 2 * abs(gap))
            continue
        neg, u, o, i = heapq.heappop(heap)
        fresh = entry(u, sign, 2 * abs(gap))
        if fresh is None:
            continue
        if fresh != (neg, u, o, i):
            heapq.heappush(heap, fresh)
            continue
        sel[u, o] = False
        sel[u, i] = True
        gap += weight[u] * (S[u, i] - S[u, o])
        if abs(gap) < best_gap:
            best_sel, best_gap = sel.copy(), abs(gap)
        new_sign = 1.0 if gap >= 0 else -1.0
        if new_sign != sign:
            sign = new_sign
            heap = rebuild(sign, 2 * abs(gap))
        else:
            e = entry(u, sign, 2 * abs(gap))
            if e is not None:
                heapq.heappush(heap, e)
    if abs(gap) <= eps:
        return sel
    return best_sel


def rerank_fair(
    base: TopNLists,
    groups: GroupAssignment,
    n: int = 10,
    epsilon: float = 0.0,
    max_iter: int = 100_000,
) -> TopNLists:
    """
    Select ``n`` items per user out of ``base`` (ranked lists of length ``m >= n``).

    Users without a group label keep their top-n prefix.  Output lists are
    ordered by predicted score.
    """
    if epsilon < 0 or math.isnan(epsilon):
        raise ValueError("epsilon must be >= 0")
    prob = RerankProblem.from_lists(base, groups, n)
    out = {u: tuple(recs[:n]) for u, recs in base.lists.items()}
    if math.isinf(epsilon) or not prob.users or len(np.unique(prob.group)) < 2:
        return TopNLists(out)
    sel = _greedy(prob, epsilon, max_iter)
    for k, u in enumerate(prob.users):
        idx = np.flatnonzero(sel[k])
        out[u] = tuple((prob.items[k][j], float(prob.scores[k, j])) for j in idx)
    return TopNLists(out)


def selection_gap(base: TopNLists, chosen: TopNLists, groups: GroupAssignment) -> tuple[float, float]:
    """``(U_0 - U_1, total score)`` of ``chosen`` using predicted scores."""
    per_user = {u: np.mean([s for _, s in recs]) if recs else 0.0 for u, recs in chosen.lists.items()}
    g0 = [v for u, v in per_user.items() if groups.labels.get(u) == 0]
    g1 = [v for u, v in per_user.items() if groups.labels.get(u) == 1]
    total = sum(s for u, recs in chosen.lists.items() if groups.labels.get(u) is not None for _, s in recs)
    return float(np.mean(g0) - np.mean(g1)), float(total)
