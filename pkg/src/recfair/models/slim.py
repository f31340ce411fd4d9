"""
User-based SLIM (SLIM-U), optionally with a group-balance penalty on the peer weights.

For each target user ``u`` a non-negative weight vector ``w`` over peer users
(``w_u = 0``) solves::

    min  1/2 |r_u - R^T w|^2 + l1 |w|_1 + l2/2 |w|^2 + bal/2 (p . w)^2

with ``p_v = +1`` for non-protected and ``-1`` for protected peers, by cyclic
coordinate descent on the Gram form ``G = R R^T``.  Predictions are ``W R``.
"""

from __future__ import annotations

import logging
import warnings

import numpy as np
from numba import njit

from ..data import GroupAssignment, InteractionSet
from .base import FittedModel, ModelSpec

_log = logging.getLogger(__name__)


def slim_objective(w, G, b, c, l1, l2, bal, p) -> float:
    """Objective up to the constant ``1/2 |r_u|^2``; ``b = R r_u``."""
    pw = p @ w
    return 0.5 * w @ G @ w - b @ w + 0.5 * c + l1 * np.abs(w).sum() + 0.5 * l2 * w @ w + 0.5 * bal * pw * pw


def slim_gradient(w, G, b, l1, l2, bal, p) -> np.ndarray:
    """Gradient of :func:`slim_objective` where all weights are positive."""
    return G @ w - b + l1 + l2 * w + bal * (p @ w) * p


@njit(cache=True)
def _cd_user(u, G, b, l1, l2, bal, p, w, max_sweeps, tol):
    n = G.shape[0]
    Gw = G @ w
    pw = 0.0
    for v in range(n):
        pw += p[v] * w[v]
    sweeps = 0
    converged = False
    for sweep in range(max_sweeps):
        sweeps = sweep + 1
        delta = 0.0
        for v in range(n):
            if v == u:
                continue
            old = w[v]
            denom = G[v, v] + l2 + bal * p[v] * p[v]
            if denom <= 0.0:
                new = 0.0
            else:
                num = b[v] - (Gw[v] - G[v, v] * old) - l1 - bal * p[v] * (pw - p[v] * old)
                new = num / denom
                if new < 0.0:
                    new = 0.0
            d = new - old
            if d != 0.0:
                w[v] = new
                for j in range(n):
                    Gw[j] += G[j, v] * d
                pw += p[v] * d
                if abs(d) > delta:
                    delta = abs(d)
        if delta < tol:
            converged = True
            break
    return sweeps, converged


class SLIMModel(FittedModel):
    def __init__(self, spec, train, W: np.ndarray, R: np.ndarray, sweeps: np.ndarray):
        super().__init__(spec, train)
        self.W = W
        self.R = R
        self.sweeps = sweeps

    def _score(self, u, i):
        return np.einsum("ij,ji->i", self.W[u], self.R[:, i])

    def _score_rows(self, users):
        return self.W[users] @ self.R

    def state(self):
        return {"W": self.W, "R": self.R}


def fit_slim_u(
    train: InteractionSet,
    spec: ModelSpec | None = None,
    balance: tuple[GroupAssignment, float] | None = None,
    **params,
) -> SLIMModel:
    """
    Fit SLIM-U by coordinate descent.  ``balance=(groups, lam)`` adds the
    balance penalty; unlabeled users get ``p = 0``.

    Non-convergence within ``max_sweeps`` keeps the last iterate and warns.
    """
    if spec is None:
        seed = params.pop("seed", 0)
        spec = ModelSpec("slim_u", params, seed)
    l1 = float(spec.get("l1"))
    l2 = float(spec.get("l2"))
    max_sweeps = int(spec.get("max_sweeps", 2000))
    tol = float(spec.get("tol", 1e-10))
    R = train.to_dense()
    if spec.get("binary", False):
        R = (R != 0).astype(np.float64)
    G = R @ R.T
    n = train.n_users
    if balance is not None:
        groups, bal = balance
        labels = groups.label_array(train.user_ids)
        p = np.where(labels == 1, -1.0, np.where(labels == 0, 1.0, 0.0))
        bal = float(bal)
        if bal < 0:
            raise ValueError("balance weight must be >= 0")
    else:
        p = np.zeros(n)
        bal = 0.0
    W = np.zeros((n, n))
    sweeps = np.zeros(n, dtype=np.int64)
    unconverged = 0
    for u in range(n):
        if not train.user_counts[u]:
            continue
        w = np.zeros(n)
        s, ok = _cd_user(u, G, G[:, u].copy(), l1, l2, bal, p, w, max_sweeps, tol)
        W[u] = w
        sweeps[u] = s
        unconverged += not ok
    if unconverged:
        warnings.warn(f"SLIM-U: {unconverged} users did not converge in {max_sweeps} sweeps", RuntimeWarning, stacklevel=2)
    np.fill_diagonal(W, 0.0)
    return SLIMModel(spec, train, W, R, sweeps)
