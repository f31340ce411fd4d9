"""
Post-hoc additive score adjustment (Ashokan & Haas, 2021).

``value``:  each user's predictions get ``delta_g``, the mean training residual
            (actual - predicted) of the user's group.
``parity``: group-1 predictions get ``mean_train_pred(g0) - mean_train_pred(g1)``.
"""

from __future__ import annotations

import numpy as np

from ..data import GroupAssignment, InteractionSet
from ..models.base import FittedModel, ModelSpec, ScoreTable, predict_scores


def group_offsets(model: FittedModel, train: InteractionSet, groups: GroupAssignment, mode: str) -> tuple[float, float]:
    """Additive offsets for groups 0 and 1 estimated on the training pairs."""
    pred = predict_scores(model, train).scores
    labels = groups.label_array(train.user_ids)[train.users]
    g0, g1 = labels == 0, labels == 1
    if not g0.any() or not g1.any():
        raise ValueError("both groups need training pairs")
    if mode == "value":
        resid = train.ratings - pred
        return float(resid[g0].mean()), float(resid[g1].mean())
    if mode == "parity":
        return 0.0, float(pred[g0].mean() - pred[g1].mean())
    raise ValueError(f"unknown adjust mode {mode!r}")


def adjust_ratings(
    predictions: ScoreTable,
    model: FittedModel,
    train: InteractionSet,
    groups: GroupAssignment,
    mode: str = "value",
    clip: bool = True,
) -> ScoreTable:
    """Shift predictions by their user's group offset, then clip to the rating scale."""
    off = group_offsets(model, train, groups, mode)
    labels = np.array([groups.labels.get(u, -1) for u in predictions.users])
    shift = np.where(labels == 0, off[0], np.where(labels == 1, off[1], 0.0))
    out = predictions.scores + shift
    if clip:
        lo, hi = train.rating_scale
        out = np.clip(out, lo, hi)
    return predictions.with_scores(out)


class AdjustedModel(FittedModel):
    """Wraps a fitted model so every scoring path applies the group offsets."""

    def __init__(self, base: FittedModel, offsets: tuple[float, float], groups: GroupAssignment, clip: bool = True):
        self.__dict__.update({k: v for k, v in base.__dict__.items()})
        self.base = base
        self.spec = ModelSpec(base.spec.family, base.spec.params, base.spec.seed)
        self.offsets = offsets
        self.clip = clip
        labels = groups.label_array(base.user_ids)
        self.user_shift = np.where(labels == 0, offsets[0], np.where(labels == 1, offsets[1], 0.0))

    def _finish(self, y):
        if self.clip:
            lo, hi = self.rating_scale
            y = np.clip(y, lo, hi)
        return y

    def score_codes(self, u, i):
        u = np.asarray(u, dtype=np.int64)
        y = self.base.score_codes(u, i)
        y = y + np.where(u >= 0, self.user_shift[np.maximum(u, 0)], 0.0)
        return self._finish(y)

    def score_rows(self, users):
        users = np.asarray(users, dtype=np.int64)
        return self._finish(self.base.score_rows(users) + self.user_shift[users][:, None])


def adjusted_model(model: FittedModel, train: InteractionSet, groups: GroupAssignment, mode: str) -> AdjustedModel:
    # popularity scores are counts, not ratings; clipping them would flatten the ranking
    clip = model.spec.family != "popularity"
    return AdjustedModel(model, group_offsets(model, train, groups, mode), groups, clip=clip)
