"""
Independence-penalized matrix factorization (Kamishima et al., 2018).

The MF objective gains ``eta * pen`` where ``pen`` compares the Gaussian
sufficient statistics (mean ``m_g``, variance ``v_g``) of the two groups'
predicted ratings over the training pairs:

* ``mean_m``    ``(m0 - m1)^2``
* ``bdist_m``   Bhattacharyya distance between ``N(m0, v0)`` and ``N(m1, v1)``
* ``mi_normal`` mutual information between prediction and group when each
                group and the pooled predictions are modeled as Gaussians

Training is ordinary ``mf_sgd`` whose sample updates also carry the
penalty's gradient, with the group statistics refreshed every few hundred
samples.  ``eta = 0`` therefore reproduces plain ``mf_sgd`` exactly.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from ..data import GroupAssignment, InteractionSet
from ..models.base import ModelSpec
from ..models.mf import MFModel, MFParams, SGDTrainer, from_internal, mf_gradient, mf_objective, mf_predict

_log = logging.getLogger(__name__)

TERMS = ("mean_m", "bdist_m", "mi_normal")
_EPS = 1e-12


def _stats(y, g1):
    y0, y1 = y[~g1], y[g1]
    return y0.mean(), y1.mean(), y0.var() + _EPS, y1.var() + _EPS, len(y0), len(y1)


def independence_penalty(term: str, y: np.ndarray, g1: np.ndarray) -> tuple[float, np.ndarray]:
    """
    Penalty value and its gradient with respect to each prediction.

    ``g1`` flags predictions belonging to protected-group users.
    """
    g1 = np.asarray(g1, dtype=bool)
    m0, m1, v0, v1, n0, n1 = _stats(y, g1)
    if n0 == 0 or n1 == 0:
        raise ValueError("both groups need training pairs")
    d = m0 - m1
    if term == "mean_m":
        val = d * d
        dm0, dm1, dv0, dv1 = 2 * d, -2 * d, 0.0, 0.0
    elif term == "bdist_m":
        s = v0 + v1
        val = d * d / (4 * s) + 0.5 * math.log(s / 2) - 0.25 * math.log(v0) - 0.25 * math.log(v1)
        dm0 = d / (2 * s)
        dm1 = -dm0
        common = -d * d / (4 * s * s) + 1 / (2 * s)
        dv0 = common - 1 / (4 * v0)
        dv1 = common - 1 / (4 * v1)
    elif term == "mi_normal":
        n = n0 + n1
        p0, p1 = n0 / n, n1 / n
        V = p0 * v0 + p1 * v1 + p0 * p1 * d * d
        val = 0.5 * math.log(V) - 0.5 * (p0 * math.log(v0) + p1 * math.log(v1))
        dm0 = p0 * p1 * d / V
        dm1 = -dm0
        dv0 = p0 / (2 * V) - p0 / (2 * v0)
        dv1 = p1 / (2 * V) - p1 / (2 * v1)
    else:
        raise ValueError(f"unknown independence term {term!r}")
    grad = np.empty_like(y)
    grad[~g1] = dm0 / n0 + dv0 * 2 * (y[~g1] - m0) / n0
    grad[g1] = dm1 / n1 + dv1 * 2 * (y[g1] - m1) / n1
    return float(val), grad


class PenalizedMF:
    """Objective and gradient of MF loss + ``eta`` * independence penalty."""

    def __init__(self, trainer: SGDTrainer, labels: np.ndarray, term: str, eta: float):
        self.t = trainer
        self.sel = np.flatnonzero(labels >= 0)
        self.g1 = labels[self.sel] == 1
        self.term = term
        self.eta = eta
        lo, hi = trainer.train.rating_scale
        self.out_scale = (hi - lo) / 2.0 if trainer.variant == "pmf" else 1.0

    def predictions(self, p: MFParams) -> np.ndarray:
        t = self.t
        return from_internal(mf_predict(p, t.u, t.i, t.biased), t.variant, t.train.rating_scale)

    def penalty(self, p: MFParams) -> float:
        return independence_penalty(self.term, self.predictions(p)[self.sel], self.g1)[0]

    def objective(self, p: MFParams) -> float:
        t = self.t
        return mf_objective(p, t.u, t.i, t.r, t.reg, t.biased) + self.eta * self.penalty(p)

    def gradient(self, p: MFParams) -> MFParams:
        t = self.t
        g = mf_gradient(p, t.u, t.i, t.r, t.reg, t.biased)
        gy = self.sample_gradient(p)
        np.add.at(g.P, t.u, gy[:, None] * p.Q[t.i])
        np.add.at(g.Q, t.i, gy[:, None] * p.P[t.u])
        if t.biased:
            np.add.at(g.bu, t.u, gy)
            np.add.at(g.bi, t.i, gy)
        return g

    def sample_gradient(self, p: MFParams) -> np.ndarray:
        """``eta`` times the penalty gradient w.r.t. each internal-scale prediction."""
        _, gsel = independence_penalty(self.term, self.predictions(p)[self.sel], self.g1)
        gy = np.zeros(len(self.t.u))
        gy[self.sel] = self.eta * self.out_scale * gsel
        return gy


def fit_pmf_independent(
    train: InteractionSet,
    groups: GroupAssignment,
    term: str = "mean_m",
    eta: float = 1.0,
    spec: ModelSpec | None = None,
    chunk: int = 512,
) -> MFModel:
    """
    Train ``mf_sgd`` (default variant ``pmf``) with an independence penalty
    weighted by ``eta``.  Same seed and ``eta = 0`` give the plain fit.
    """
    if term not in TERMS:
        raise ValueError(f"unknown independence term {term!r}")
    if not (math.isfinite(eta) and eta >= 0):
        raise ValueError("eta must be finite and >= 0")
    if spec is None:
        spec = ModelSpec("mf_sgd", {"variant": "pmf", "k": 10, "lr": 0.01, "reg": 0.05, "epochs": 30})
    trainer = SGDTrainer(train, spec)
    labels = groups.label_array(train.user_ids)[train.users]
    if not ((labels == 0).any() and (labels == 1).any()):
        raise ValueError("both groups need training pairs")
    if eta == 0:
        params, history = trainer.run()
    else:
        pen = PenalizedMF(trainer, labels, term, eta)
        params, history = trainer.run(pen.sample_gradient, lambda p: eta * pen.penalty(p), chunk)
    model = MFModel(spec, train, params, history)
    model.independence = {"term": term, "eta": eta}
    return model
