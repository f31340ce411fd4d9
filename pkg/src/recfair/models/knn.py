"""
Memory-based neighborhood models (UserKNN / ItemKNN) with dense similarity tables.

Similarities are computed on co-rated entries only and shrunk by
``|overlap| / (|overlap| + shrinkage)``.  Only positive similarities act as
neighbors.
"""

from __future__ import annotations

import numpy as np

from ..data import InteractionSet
from .base import FittedModel, ModelSpec


def overlap_similarity(values: np.ndarray, mask: np.ndarray, shrinkage: float = 0.0) -> np.ndarray:
    """
    Cosine similarity between rows of ``values`` restricted to columns both rows observe.

    ``values`` must be zero where ``mask`` is False.  Zero-norm overlaps get 0.
    """
    v = values
    m = mask.astype(np.float64)
    dot = v @ v.T
    sq = (v * v) @ m.T  # sq[a, b] = sum over b's observed columns of v[a]^2
    overlap = m @ m.T
    denom = np.sqrt(sq * sq.T)
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(denom > 0, dot / denom, 0.0)
    if shrinkage > 0:
        sim *= overlap / (overlap + shrinkage)
    np.fill_diagonal(sim, 0.0)
    return sim


class KNNModel(FittedModel):
    """
    ``axis='user'``: neighbors are users who rated the target item.
    ``axis='item'``: neighbors are items the target user rated.
    """

    def __init__(self, spec, train: InteractionSet, axis: str, sim: np.ndarray, centered: bool):
        super().__init__(spec, train)
        self.axis = axis
        self.N = int(spec.get("N"))
        self.centered = centered
        self.sim = sim
        self._set_ratings(train.to_dense())

    def _set_ratings(self, ratings):
        self.ratings = ratings
        self.mask = ratings != 0
        counts = self.mask.sum(axis=1)
        self.user_means = np.where(counts > 0, self.ratings.sum(axis=1) / np.maximum(counts, 1), self.global_mean)
        icounts = self.mask.sum(axis=0)
        self.item_means = np.where(icounts > 0, self.ratings.sum(axis=0) / np.maximum(icounts, 1), self.global_mean)

    def state(self):
        return {"sim": self.sim, "ratings": self.ratings}

    def restore(self, state):
        self.axis = "user" if self.spec.family == "user_knn" else "item"
        self.N = int(self.spec.get("N"))
        self.centered = self.spec.get("similarity", "cosine") == "pearson"
        self.sim = state["sim"]
        self._set_ratings(state["ratings"])

    def _neighbor_block(self, sims: np.ndarray, cand_mask: np.ndarray) -> np.ndarray:
        """
        Weight matrix keeping, per column, the ``N`` largest positive similarities
        among candidates (``sims`` is a vector over the neighbor axis, ``cand_mask``
        is neighbors x targets).
        """
        order = np.argsort(-sims, kind="stable")
        s = sims[order]
        pos = s > 0
        cm = cand_mask[order] & pos[:, None]
        rank = np.cumsum(cm, axis=0)
        keep = cm & (rank <= self.N)
        w = np.zeros(cand_mask.shape)
        w[order] = keep * s[:, None]
        return w

    def _predict_user(self, u: int, targets: np.ndarray) -> np.ndarray:
        if self.axis == "user":
            sims = self.sim[u]
            cand = self.mask[:, targets]
            w = self._neighbor_block(sims, cand)
            vals = self.ratings[:, targets]
            if self.centered:
                vals = np.where(cand, vals - self.user_means[:, None], 0.0)
            num = (w * vals).sum(axis=0)
            den = np.abs(w).sum(axis=0)
            base = self.user_means[u] if self.centered else 0.0
            fallback = self.item_means[targets]
        else:
            rated = np.flatnonzero(self.mask[u])
            sims_block = self.sim[np.ix_(targets, rated)]  # targets x rated
            vals = self.ratings[u, rated]
            if self.centered:
                vals = vals - self.item_means[rated]
            w = _topn_rows(sims_block, self.N)
            num = w @ vals
            den = np.abs(w).sum(axis=1)
            base = self.item_means[targets] if self.centered else 0.0
            fallback = self.item_means[targets]
        with np.errstate(invalid="ignore", divide="ignore"):
            pred = np.where(den > 0, base + num / np.where(den > 0, den, 1.0), fallback)
        return pred

    def _score(self, u, i):
        out = np.empty(len(u))
        for user in np.unique(u):
            sel = u == user
            out[sel] = self._predict_user(int(user), i[sel])
        return out

    def _score_rows(self, users):
        items = np.arange(self.n_items)
        return np.vstack([self._predict_user(int(x), items) for x in users]) if len(users) else np.empty((0, self.n_items))


def _topn_rows(block: np.ndarray, n: int) -> np.ndarray:
    """Zero all but the ``n`` largest positive entries of each row (ties by column order)."""
    w = np.where(block > 0, block, 0.0)
    if w.shape[1] <= n:
        return w
    order = np.argsort(-w, axis=1, kind="stable")
    out = np.zeros_like(w)
    rows = np.arange(w.shape[0])[:, None]
    top = order[:, :n]
    out[rows, top] = w[rows, top]
    return out


def fit_knn(
    train: InteractionSet,
    axis: str = "item",
    N: int = 20,
    similarity: str = "cosine",
    shrinkage: float = 0.0,
    spec: ModelSpec | None = None,
) -> KNNModel:
    if N < 1:
        raise ValueError("N must be >= 1")
    if axis not in ("user", "item"):
        raise ValueError(f"axis must be 'user' or 'item', got {axis!r}")
    if similarity not in ("cosine", "pearson"):
        raise ValueError(f"unknown similarity {similarity!r}")
    spec = spec or ModelSpec(f"{axis}_knn", {"N": N, "similarity": similarity, "shrinkage": shrinkage})
    vals = train.to_dense()
    mask = train.mask_dense()
    centered = similarity == "pearson"
    if axis == "item":
        vals, mask = vals.T, mask.T
    if centered:
        cnt = mask.sum(axis=1)
        means = np.where(cnt > 0, vals.sum(axis=1) / np.maximum(cnt, 1), 0.0)
        vals = np.where(mask, vals - means[:, None], 0.0)
    sim = overlap_similarity(vals, mask, shrinkage)
    return KNNModel(spec, train, axis, sim, centered)
