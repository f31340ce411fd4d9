"""Explicit-feedback ALS: alternating ridge solves for ``r_hat = p_u . q_i`` on observed entries."""

from __future__ import annotations

import logging
import math

import numpy as np

from ..data import InteractionSet
from .base import FittedModel, ModelSpec

_log = logging.getLogger(__name__)


def ridge_rows(
    rows_by_target: list[np.ndarray], other_idx: np.ndarray, values: np.ndarray, other: np.ndarray, reg: float
) -> np.ndarray:
    """
    Solve ``(F_S^T F_S + reg I) x = F_S^T v_S`` for every target, where ``S`` are the
    target's interaction rows, ``F`` the fixed factor matrix ``other``.
    """
    k = other.shape[1]
    eye = reg * np.eye(k)
    out = np.zeros((len(rows_by_target), k))
    for t, rows in enumerate(rows_by_target):
        if len(rows) == 0:
            continue
        F = other[other_idx[rows]]
        A = F.T @ F + eye
        out[t] = np.linalg.solve(A, F.T @ values[rows])
    return out


def als_objective(P, Q, u, i, r, reg) -> float:
    e = r - np.einsum("ij,ij->i", P[u], Q[i])
    return float(e @ e + reg * ((P**2).sum() + (Q**2).sum()))


class ALSModel(FittedModel):
    def __init__(self, spec, train, P, Q, rmse_history, obj_history):
        super().__init__(spec, train)
        self.P = P
        self.Q = Q
        self.rmse_history = rmse_history
        self.objective_history = obj_history

    def _score(self, u, i):
        return np.einsum("ij,ij->i", self.P[u], self.Q[i])

    def _score_rows(self, users):
        return self.P[users] @ self.Q.T

    def state(self):
        return {"P": self.P, "Q": self.Q}


def item_rows(train: InteractionSet) -> list[np.ndarray]:
    order = np.argsort(train.items, kind="stable")
    bounds = np.searchsorted(train.items[order], np.arange(train.n_items + 1))
    return [order[bounds[i] : bounds[i + 1]] for i in range(train.n_items)]


def fit_als(train: InteractionSet, spec: ModelSpec | None = None, **params) -> ALSModel:
    """
    Alternate user and item ridge solves, users first.

    Stops after ``epochs`` sweeps or once the train RMSE improves by less than
    ``tol`` (default 0: run every sweep).
    """
    if spec is None:
        seed = params.pop("seed", 0)
        spec = ModelSpec("als", params, seed)
    k = int(spec.get("k"))
    reg = float(spec.get("reg"))
    if reg <= 0:
        raise ValueError("ALS needs reg > 0")
    epochs = int(spec.get("epochs"))
    tol = float(spec.get("tol", 0.0))
    rng = np.random.default_rng(spec.seed)
    scale = 0.1 / math.sqrt(k)
    Q = rng.uniform(-scale, scale, (train.n_items, k))
    P = np.zeros((train.n_users, k))
    urows = train.by_user()
    irows = item_rows(train)
    u, i, r = train.users, train.items, train.ratings
    rmse_hist, obj_hist = [], []
    prev = math.inf
    for sweep in range(epochs):
        P = ridge_rows(urows, i, r, Q, reg)
        Q = ridge_rows(irows, u, r, P, reg)
        e = r - np.einsum("ij,ij->i", P[u], Q[i])
        rmse = float(np.sqrt(np.mean(e * e)))
        rmse_hist.append(rmse)
        obj_hist.append(als_objective(P, Q, u, i, r, reg))
        if prev - rmse < tol:
            break
        prev = rmse
    _log.debug("als: %d sweeps, train rmse %.6g", len(rmse_hist), rmse_hist[-1] if rmse_hist else float("nan"))
    return ALSModel(spec, train, P, Q, rmse_hist, obj_hist)
