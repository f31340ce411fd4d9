"""Utility (NDCG@k, RMSE) and consumer-fairness (DP, KS, GLV) measures."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .data import GroupAssignment, InteractionSet
from .models.base import ScoreTable, TopNLists
from .stats import ks_two_sample, mann_whitney


@dataclass(frozen=True)
class PerUserUtility:
    task: str  # "topn" or "rating"
    values: Mapping[str, float]

    def array(self, users) -> np.ndarray:
        return np.array([self.values[u] for u in users])

    def mean(self) -> float:
        return float(np.mean(list(self.values.values()))) if self.values else float("nan")


def significance_marker(p: float) -> str:
    if p < 0.01:
        return "^"
    if p < 0.05:
        return "*"
    return ""


@dataclass(frozen=True)
class FairnessResult:
    dp: float
    dp_p_value: float
    ks: float
    ks_p_value: float

    @property
    def dp_marker(self) -> str:
        return significance_marker(self.dp_p_value)

    @property
    def ks_marker(self) -> str:
        return significance_marker(self.ks_p_value)


def _test_items(test: InteractionSet) -> dict[str, set[str]]:
    out: dict[str, set[str]] = {}
    for u, i in zip(test.users, test.items):
        out.setdefault(test.user_ids[u], set()).add(test.item_ids[i])
    return out


def dcg(rels) -> float:
    rels = np.asarray(rels, dtype=np.float64)
    return float((rels / np.log2(np.arange(2, len(rels) + 2))).sum())


def ndcg_at_k(recs: TopNLists, test: InteractionSet, k: int = 10) -> PerUserUtility:
    """
    Binary-relevance NDCG@k for every user with at least one test item.

    Users without a recommendation list score 0; users without test items are skipped.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    truth = _test_items(test)
    out = {}
    for u, items in truth.items():
        rec = recs.items_of(u)[:k] if u in recs.lists else []
        rels = [1.0 if i in items else 0.0 for i in rec]
        ideal = dcg(np.ones(min(k, len(items))))
        out[u] = dcg(rels) / ideal
    return PerUserUtility("topn", out)


def rmse(scores: ScoreTable, test: InteractionSet) -> tuple[PerUserUtility, float]:
    """Per-user RMSE over each user's test pairs, plus the pooled RMSE."""
    pred = scores.aligned(test)
    err2 = (test.ratings - pred) ** 2
    overall = float(np.sqrt(err2.mean())) if len(err2) else float("nan")
    sums = np.bincount(test.users, weights=err2, minlength=test.n_users)
    counts = test.user_counts
    per_user = {
        test.user_ids[u]: float(np.sqrt(sums[u] / counts[u])) for u in np.flatnonzero(counts)
    }
    return PerUserUtility("rating", per_user), overall


def _split_groups(util: PerUserUtility, groups: GroupAssignment) -> tuple[np.ndarray, np.ndarray]:
    g0, g1 = [], []
    for u, v in util.values.items():
        g = groups.labels.get(u)
        if g == 0:
            g0.append(v)
        elif g == 1:
            g1.append(v)
    return np.array(g0), np.array(g1)


def demographic_parity(util: PerUserUtility, groups: GroupAssignment) -> tuple[float, float]:
    """
    ``mean(utility | group 0) - mean(utility | group 1)`` and the two-sided
    Mann-Whitney p-value comparing the per-user samples.
    """
    a, b = _split_groups(util, groups)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both groups need at least one evaluated user")
    dp = float(a.mean() - b.mean())
    _, p = mann_whitney(a, b)
    return dp, p


def group_score_samples(
    scores: ScoreTable | TopNLists, groups: GroupAssignment
) -> tuple[np.ndarray, np.ndarray]:
    """Pool predicted scores by the group of the user they belong to."""
    g0, g1 = [], []
    if isinstance(scores, TopNLists):
        for u, recs in scores.lists.items():
            g = groups.labels.get(u)
            if g is None:
                continue
            (g0 if g == 0 else g1).extend(s for _, s in recs)
    else:
        for u, s in zip(scores.users, scores.scores):
            g = groups.labels.get(u)
            if g is None:
                continue
            (g0 if g == 0 else g1).append(float(s))
    return np.array(g0), np.array(g1)


def ks_independence(scores: ScoreTable | TopNLists, groups: GroupAssignment) -> tuple[float, float]:
    a, b = group_score_samples(scores, groups)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both groups need at least one score")
    return ks_two_sample(a, b)


def fairness(util: PerUserUtility, scores, groups: GroupAssignment) -> FairnessResult:
    dp, dp_p = demographic_parity(util, groups)
    ks, ks_p = ks_independence(scores, groups)
    return FairnessResult(dp, dp_p, ks, ks_p)


def group_losses(scores: ScoreTable, pairs: InteractionSet, groups: GroupAssignment) -> tuple[float, float]:
    pred = scores.aligned(pairs)
    err2 = (pairs.ratings - pred) ** 2
    labels = groups.label_array(pairs.user_ids)[pairs.users]
    if not ((labels == 0).any() and (labels == 1).any()):
        raise ValueError("both groups need at least one pair")
    return float(err2[labels == 0].mean()), float(err2[labels == 1].mean())


def group_loss_variance(scores: ScoreTable, pairs: InteractionSet, groups: GroupAssignment) -> float:
    """Variance across the two groups of their mean squared error."""
    losses = np.array(group_losses(scores, pairs, groups))
    return float(((losses - losses.mean()) ** 2).mean())
