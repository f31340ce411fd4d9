"""
Antidote data (Rastegarpanah et al., 2019).

``B`` synthetic users rate every item.  Their ratings ``X`` are tuned by
gradient descent so that the group loss variance (GLV) of the real users
shrinks once the ALS model is refit with them.

The refit is a fixed schedule starting from a pretrained model ``(P0, Q0)``:

1. antidote user factors  ``a_b = K^-1 Q0^T x_b`` with ``K = Q0^T Q0 + reg I``
2. item factors           ``q_i = M_i^-1 d_i`` using real ``P0`` plus the ``a_b``
3. real user factors      ``p_u = A_u^-1 c_u`` using the new ``q_i``
4. GLV over the real users' training pairs

The gradient with respect to ``X`` is obtained by differentiating each
normal-equation solve implicitly (reverse mode, by hand).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..data import SYNTHETIC_PREFIX, GroupAssignment, InteractionSet
from ..models.als import ALSModel, fit_als
from ..models.base import ModelSpec, TrainingError

_log = logging.getLogger(__name__)


def _outer_sum(index: np.ndarray, F: np.ndarray, n: int) -> np.ndarray:
    """``out[t] = sum over rows with index t of F_row F_row^T``."""
    k = F.shape[1]
    out = np.zeros((n, k, k))
    np.add.at(out, index, F[:, :, None] * F[:, None, :])
    return out


def _vec_sum(index: np.ndarray, F: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n, F.shape[1]))
    np.add.at(out, index, F)
    return out


def _solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.linalg.solve(A, b[..., None])[..., 0]


@dataclass
class _Forward:
    A: np.ndarray  # antidote user factors, B x k
    M: np.ndarray  # item normal matrices, n_items x k x k
    Q: np.ndarray
    Au: np.ndarray  # user normal matrices
    P: np.ndarray
    err: np.ndarray
    losses: tuple[float, float]
    glv: float


class AntidoteObjective:
    """GLV of real users as a function of the antidote rating matrix ``X``."""

    def __init__(self, train: InteractionSet, groups: GroupAssignment, model: ALSModel, reg: float):
        self.u, self.i, self.r = train.users, train.items, train.ratings
        self.n_users, self.n_items = train.n_users, train.n_items
        self.P0, self.Q0 = model.P, model.Q
        self.reg = float(reg)
        k = self.Q0.shape[1]
        self.eye = self.reg * np.eye(k)
        labels = groups.label_array(train.user_ids)[train.users]
        self.g0, self.g1 = labels == 0, labels == 1
        if not (self.g0.any() and self.g1.any()):
            raise ValueError("both groups need training pairs")
        self.K = self.Q0.T @ self.Q0 + self.eye
        P0r = self.P0[self.u]
        self.M_real = _outer_sum(self.i, P0r, self.n_items) + self.eye
        self.d_real = _vec_sum(self.i, self.r[:, None] * P0r, self.n_items)

    def forward(self, X: np.ndarray) -> _Forward:
        A = np.linalg.solve(self.K, self.Q0.T @ X.T).T
        M = self.M_real + (A.T @ A)[None]
        Q = _solve(M, self.d_real + X.T @ A)
        Qr = Q[self.i]
        Au = _outer_sum(self.u, Qr, self.n_users) + self.eye
        P = _solve(Au, _vec_sum(self.u, self.r[:, None] * Qr, self.n_users))
        err = self.r - np.einsum("ij,ij->i", P[self.u], Qr)
        L0 = float(np.mean(err[self.g0] ** 2))
        L1 = float(np.mean(err[self.g1] ** 2))
        return _Forward(A, M, Q, Au, P, err, (L0, L1), (L0 - L1) ** 2 / 4)

    def value(self, X: np.ndarray) -> float:
        return self.forward(X).glv

    def gradient(self, X: np.ndarray, fw: _Forward | None = None) -> tuple[float, np.ndarray]:
        fw = fw or self.forward(X)
        u, i, r = self.u, self.i, self.r
        L0, L1 = fw.losses
        Lbar = (L0 + L1) / 2
        # adjoint of each prediction
        gbar = np.zeros(len(r))
        gbar[self.g0] = (L0 - Lbar) * (-2 * fw.err[self.g0] / self.g0.sum())
        gbar[self.g1] = (L1 - Lbar) * (-2 * fw.err[self.g1] / self.g1.sum())
        P, Q = fw.P, fw.Q
        Pr, Qr = P[u], Q[i]
        pbar = _vec_sum(u, gbar[:, None] * Qr, self.n_users)
        qbar = _vec_sum(i, gbar[:, None] * Pr, self.n_items)
        # through p_u = A_u^-1 c_u
        z = _solve(fw.Au, pbar)
        zr = z[u]
        pq = np.einsum("ij,ij->i", Pr, Qr)
        zq = np.einsum("ij,ij->i", zr, Qr)
        qbar += _vec_sum(i, (r - pq)[:, None] * zr - zq[:, None] * Pr, self.n_items)
        # through q_i = M_i^-1 d_i
        y = _solve(fw.M, qbar)
        A = fw.A
        Xbar = A @ y.T
        abar = X @ y - (A @ Q.T) @ y - (A @ y.T) @ Q
        # through a_b = K^-1 Q0^T x_b
        Xbar += (self.Q0 @ np.linalg.solve(self.K, abar.T)).T
        if not np.all(np.isfinite(Xbar)):
            raise TrainingError("non-finite antidote gradient")
        return fw.glv, Xbar


@dataclass
class AntidoteResult:
    X: np.ndarray
    glv_history: list[float] = field(default_factory=list)


def optimize_antidote(
    train: InteractionSet,
    groups: GroupAssignment,
    spec: ModelSpec,
    budget: int,
    step: float,
    iterations: int,
    model: ALSModel | None = None,
) -> AntidoteResult:
    """
    Projected gradient descent on ``X`` (clipped to the rating scale).

    Steps are scaled by the gradient's largest entry, so ``step`` is in
    rating units: the most influential synthetic rating moves by at most
    ``step``.  A step that fails to lower GLV is halved, up to 30 times; if
    none succeeds the search stops early.
    """
    if spec.family != "als":
        raise ValueError("antidote data requires an als model")
    model = model or fit_als(train, spec)
    obj = AntidoteObjective(train, groups, model, float(spec.get("reg")))
    lo, hi = train.rating_scale
    X = np.full((budget, train.n_items), float(train.ratings.mean()))
    fw = obj.forward(X)
    history = [fw.glv]
    for it in range(iterations):
        f, g = obj.gradient(X, fw)
        gmax = np.abs(g).max()
        if gmax == 0:
            break
        g = g / gmax
        s = step
        for _ in range(30):
            cand = np.clip(X - s * g, lo, hi)
            fc = obj.forward(cand)
            if fc.glv < f:
                break
            s *= 0.5
        else:
            _log.info("antidote: no descent step at iteration %d", it)
            break
        X, fw = cand, fc
        history.append(fw.glv)
    _log.debug("antidote GLV %.6g -> %.6g", history[0], history[-1])
    return AntidoteResult(X, history)


def antidote_augment(
    train: InteractionSet,
    groups: GroupAssignment,
    spec: ModelSpec,
    budget: int = 5,
    step: float = 1.0,
    iterations: int = 10,
    seed: int = 0,
) -> InteractionSet:
    """
    Return ``train`` plus ``budget`` synthetic users rating every item.

    Synthetic ids are ``SYNTHETIC_PREFIX + str(b)``; they carry no group label
    so evaluation and group statistics ignore them.  ``seed`` seeds the ALS
    pretraining.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    if budget == 0:
        if iterations > 0:
            warnings.warn("antidote budget is 0: nothing to optimize", stacklevel=2)
        return train
    clash = [u for u in train.user_ids if u.startswith(SYNTHETIC_PREFIX)]
    if clash:
        raise ValueError(f"user ids already use the reserved prefix: {clash[:3]}")
    spec = ModelSpec(spec.family, spec.params, seed)
    res = optimize_antidote(train, groups, spec, budget, step, iterations)
    n_u, n_i = train.n_users, train.n_items
    users = np.concatenate([train.users, np.repeat(np.arange(n_u, n_u + budget), n_i)])
    items = np.concatenate([train.items, np.tile(np.arange(n_i), budget)])
    ratings = np.concatenate([train.ratings, res.X.ravel()])
    ts = None
    if train.timestamps is not None:
        ts = np.concatenate([train.timestamps, np.zeros(budget * n_i, dtype=np.int64)])
    out = InteractionSet(
        train.user_ids + tuple(f"{SYNTHETIC_PREFIX}{b}" for b in range(budget)),
        train.item_ids,
        users,
        items,
        ratings,
        ts,
        train.rating_scale,
    )
    out.validate()
    return out
