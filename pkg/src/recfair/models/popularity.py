"""Non-personalized baselines: TopPopular (interaction counts) and AvgRating (damped means)."""

from __future__ import annotations

import numpy as np

from ..data import InteractionSet
from .base import FittedModel, ModelSpec


class PopularityModel(FittedModel):
    def __init__(self, spec: ModelSpec, train: InteractionSet, item_scores: np.ndarray):
        super().__init__(spec, train)
        self.item_scores = item_scores

    def _score(self, u, i):
        return self.item_scores[i]

    def _score_rows(self, users):
        return np.broadcast_to(self.item_scores, (len(users), self.n_items)).copy()

    def state(self):
        return {"item_scores": self.item_scores}


def damped_means(train: InteractionSet, damping: float, prior: float | None = None) -> np.ndarray:
    """Per-item ``(damping * prior + sum) / (damping + count)``; prior defaults to the global mean."""
    if prior is None:
        prior = float(train.ratings.mean())
    sums = np.bincount(train.items, weights=train.ratings, minlength=train.n_items)
    counts = train.item_counts
    return (damping * prior + sums) / (damping + counts)


def fit_popularity(train: InteractionSet, mode: str = "count", damping: float = 10.0, spec: ModelSpec | None = None) -> PopularityModel:
    """
    ``count`` scores items by number of training interactions; ``mean_rating``
    by damped mean rating.  Scores do not depend on the user.
    """
    if len(train) == 0:
        raise ValueError("empty training set")
    if mode == "count":
        scores = train.item_counts.astype(np.float64)
        spec = spec or ModelSpec("popularity", {"mode": "count"})
    elif mode == "mean_rating":
        scores = damped_means(train, damping)
        spec = spec or ModelSpec("avg_rating", {"damping": damping})
    else:
        raise ValueError(f"unknown popularity mode {mode!r}")
    return PopularityModel(spec, train, scores)
