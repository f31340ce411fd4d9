"""
Matrix factorization trained by stochastic gradient descent.

Variants:

* ``funk``   - ``r_hat = p_u . q_i`` on raw ratings
* ``biased`` - ``r_hat = mu + b_u + b_i + p_u . q_i``
* ``pmf``    - ``p_u . q_i`` on ratings mapped linearly to [-1, 1], mapped back on output

The objective is ``sum (r - r_hat)^2 + reg * (|P|^2 + |Q|^2 [+ |b_u|^2 + |b_i|^2])``.
Each epoch visits the shuffled interactions once; a sample's share of the
regularizer for a row is ``reg / count(row)`` so an epoch of per-sample
gradients sums to the full gradient.  The regularizer is applied as an
implicit (proximal) shrink step, which stays stable for very large ``reg``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..data import InteractionSet
from .base import FittedModel, ModelSpec, TrainingError

_log = logging.getLogger(__name__)

VARIANTS = ("funk", "biased", "pmf")


@dataclass
class MFParams:
    P: np.ndarray
    Q: np.ndarray
    bu: np.ndarray
    bi: np.ndarray
    mu: float

    def copy(self) -> MFParams:
        return MFParams(self.P.copy(), self.Q.copy(), self.bu.copy(), self.bi.copy(), self.mu)


def to_internal(r, variant, scale):
    if variant != "pmf":
        return r
    lo, hi = scale
    return (r - (lo + hi) / 2.0) / ((hi - lo) / 2.0)


def from_internal(y, variant, scale):
    if variant != "pmf":
        return y
    lo, hi = scale
    return y * ((hi - lo) / 2.0) + (lo + hi) / 2.0


def mf_predict(params: MFParams, u: np.ndarray, i: np.ndarray, biased: bool) -> np.ndarray:
    y = np.einsum("ij,ij->i", params.P[u], params.Q[i])
    if biased:
        y = y + params.mu + params.bu[u] + params.bi[i]
    return y


def mf_objective(params: MFParams, u, i, r, reg: float, biased: bool) -> float:
    e = r - mf_predict(params, u, i, biased)
    val = float(e @ e) + reg * (float((params.P**2).sum()) + float((params.Q**2).sum()))
    if biased:
        val += reg * (float(params.bu @ params.bu) + float(params.bi @ params.bi))
    return val


def mf_gradient(params: MFParams, u, i, r, reg: float, biased: bool) -> MFParams:
    """Full-batch gradient of :func:`mf_objective` (``mu`` is held fixed)."""
    e = r - mf_predict(params, u, i, biased)
    gP = 2 * reg * params.P
    gQ = 2 * reg * params.Q
    np.add.at(gP, u, -2 * e[:, None] * params.Q[i])
    np.add.at(gQ, i, -2 * e[:, None] * params.P[u])
    gbu = np.zeros_like(params.bu)
    gbi = np.zeros_like(params.bi)
    if biased:
        gbu += 2 * reg * params.bu
        gbi += 2 * reg * params.bi
        np.add.at(gbu, u, -2 * e)
        np.add.at(gbi, i, -2 * e)
    return MFParams(gP, gQ, gbu, gbi, 0.0)


@njit(cache=True)
def _sgd_epoch(u, i, r, order, P, Q, bu, bi, mu, lr, reg, ucount, icount, biased, extra):
    # extra[s]: additional gradient of the objective w.r.t. sample s's prediction
    k = P.shape[1]
    for t in range(order.shape[0]):
        s = order[t]
        uu = u[s]
        ii = i[s]
        pred = 0.0
        for f in range(k):
            pred += P[uu, f] * Q[ii, f]
        if biased:
            pred += mu + bu[uu] + bi[ii]
        e = r[s] - pred - 0.5 * extra[s]
        # explicit loss step
        for f in range(k):
            pf = P[uu, f]
            P[uu, f] = pf + lr * 2.0 * e * Q[ii, f]
            Q[ii, f] = Q[ii, f] + lr * 2.0 * e * pf
        if biased:
            bu[uu] += lr * 2.0 * e
            bi[ii] += lr * 2.0 * e
        # implicit regularization step
        su = 1.0 / (1.0 + lr * 2.0 * reg / ucount[uu])
        si = 1.0 / (1.0 + lr * 2.0 * reg / icount[ii])
        for f in range(k):
            P[uu, f] *= su
            Q[ii, f] *= si
        if biased:
            bu[uu] *= su
            bi[ii] *= si


def init_params(n_users: int, n_items: int, k: int, seed: int, mu: float) -> MFParams:
    rng = np.random.default_rng(seed)
    scale = 0.1 / math.sqrt(k)
    P = rng.uniform(-scale, scale, (n_users, k))
    Q = rng.uniform(-scale, scale, (n_items, k))
    return MFParams(P, Q, np.zeros(n_users), np.zeros(n_items), mu)


class MFModel(FittedModel):
    def __init__(self, spec, train, params: MFParams, history: list[float]):
        super().__init__(spec, train)
        self.variant = spec.get("variant", "funk")
        self.params = params
        self.history = history

    @property
    def biased(self) -> bool:
        return self.variant == "biased"

    def _score(self, u, i):
        y = mf_predict(self.params, u, i, self.biased)
        return from_internal(y, self.variant, self.rating_scale)

    def _score_rows(self, users):
        y = self.params.P[users] @ self.params.Q.T
        if self.biased:
            y += self.params.mu + self.params.bu[users][:, None] + self.params.bi[None, :]
        return from_internal(y, self.variant, self.rating_scale)

    def state(self):
        p = self.params
        return {"P": p.P, "Q": p.Q, "bu": p.bu, "bi": p.bi, "mu": np.array([p.mu])}

    def restore(self, state):
        self.variant = self.spec.get("variant", "funk")
        self.history = []
        self.params = MFParams(state["P"], state["Q"], state["bu"], state["bi"], float(state["mu"][0]))


class SGDTrainer:
    """
    Epoch-level driver shared by plain MF and penalized variants.

    ``extra_grad(params)`` may return, per training row, the gradient of an
    additional objective term with respect to that row's prediction.  It is
    then re-evaluated every ``chunk`` samples and folded into the sample
    updates, so an epoch applies the full-batch gradient of the extra term.
    """

    def __init__(self, train: InteractionSet, spec: ModelSpec):
        variant = spec.get("variant", "funk")
        if variant not in VARIANTS:
            raise ValueError(f"unknown mf variant {variant!r}")
        self.spec = spec
        self.variant = variant
        self.biased = variant == "biased"
        self.k = int(spec.get("k"))
        self.lr = float(spec.get("lr"))
        self.reg = float(spec.get("reg"))
        self.epochs = int(spec.get("epochs"))
        self.train = train
        self.u = train.users
        self.i = train.items
        self.r = to_internal(train.ratings, variant, train.rating_scale)
        self.ucount = np.maximum(train.user_counts, 1).astype(np.float64)
        self.icount = np.maximum(train.item_counts, 1).astype(np.float64)
        mu = float(self.r.mean()) if (self.biased and len(self.r)) else 0.0
        self.params = init_params(train.n_users, train.n_items, self.k, spec.seed, mu)
        self.rng = np.random.default_rng(spec.seed + 1)

    def objective(self, params=None) -> float:
        return mf_objective(self.params if params is None else params, self.u, self.i, self.r, self.reg, self.biased)

    def rmse(self, params=None) -> float:
        e = self.r - mf_predict(self.params if params is None else params, self.u, self.i, self.biased)
        return float(np.sqrt(np.mean(e * e)))

    def run(self, extra_grad=None, extra_objective=None, chunk: int = 512) -> tuple[MFParams, list[float]]:
        p = self.params
        history = []
        zeros = np.zeros(len(self.u))
        for epoch in range(self.epochs):
            order = self.rng.permutation(len(self.u))
            if extra_grad is None:
                _sgd_epoch(self.u, self.i, self.r, order, p.P, p.Q, p.bu, p.bi, p.mu,
                           self.lr, self.reg, self.ucount, self.icount, self.biased, zeros)
            else:
                for start in range(0, len(order), chunk):
                    g = np.ascontiguousarray(extra_grad(p), dtype=np.float64)
                    _sgd_epoch(self.u, self.i, self.r, order[start : start + chunk], p.P, p.Q, p.bu, p.bi, p.mu,
                               self.lr, self.reg, self.ucount, self.icount, self.biased, g)
            obj = self.objective(p)
            if extra_objective is not None:
                obj += extra_objective(p)
            if not math.isfinite(obj) or not math.isfinite(self.rmse(p)):
                raise TrainingError(
                    f"mf_sgd diverged at epoch {epoch + 1} (objective {obj}); try a smaller learning rate"
                )
            history.append(obj)
        return p, history


def fit_mf_sgd(train: InteractionSet, variant: str | None = None, spec: ModelSpec | None = None, **params) -> MFModel:
    """
    Train an SGD matrix factorization model.

    ``spec`` carries ``k``, ``lr``, ``reg``, ``epochs`` (and ``variant``); keyword
    arguments build one when it is omitted.
    """
    if spec is None:
        seed = params.pop("seed", 0)
        params.setdefault("variant", variant or "funk")
        spec = ModelSpec("mf_sgd", params, seed)
    elif variant is not None:
        spec = spec.with_params(variant=variant)
    trainer = SGDTrainer(train, spec)
    params_, history = trainer.run()
    _log.debug("mf_sgd %s: final objective %.6g", trainer.variant, history[-1] if history else float("nan"))
    return MFModel(spec, train, params_, history)
