"""Bias mitigation procedures applied before (PRE), during (IN) or after (POST) training."""

from __future__ import annotations

from ..data import GroupAssignment, InteractionSet
from ..models import FittedModel, ModelSpec, TopNLists, fit_model, fit_slim_u, recommend_topn
from ..models.slim import SLIMModel
from .adjust import AdjustedModel, adjust_ratings, adjusted_model, group_offsets
from .antidote import AntidoteObjective, antidote_augment, optimize_antidote
from .compat import COMPATIBILITY, KINDS, LABELS, STAGE, MitigationSpec, compatible, matrix_csv
from .independence import TERMS, fit_pmf_independent, independence_penalty
from .rerank import rerank_fair, selection_gap
from .resample import resample_balanced


def apply_slim_balance(train: InteractionSet, groups: GroupAssignment, spec: ModelSpec, lambda_bal: float) -> SLIMModel:
    """SLIM-U with neighbor weights pushed toward group balance (Burke et al., 2018)."""
    return fit_slim_u(train, spec=spec, balance=(groups, lambda_bal))


def fit_mitigated(
    mit: MitigationSpec, spec: ModelSpec, train: InteractionSet, groups: GroupAssignment
) -> FittedModel:
    """
    Train ``spec`` under mitigation ``mit``.

    For ``li_rerank`` the returned model is the plain base model; the
    re-ranking happens in :func:`mitigated_topn`.
    """
    mit.check_family(spec.family)
    k = mit.kind
    if k == "resample":
        return fit_model(spec, resample_balanced(train, groups, mit.seed, str(mit.get("balance_by"))))
    if k == "antidote":
        aug = antidote_augment(
            train, groups, spec, int(mit.get("budget")), float(mit.get("step")), int(mit.get("iterations")), spec.seed
        )
        return fit_model(spec, aug)
    if k == "kamishima_independence":
        return fit_pmf_independent(
            train,
            groups,
            str(mit.get("term")),
            float(mit.get("eta")),
            spec=spec,
            chunk=int(mit.get("chunk") or 512),
        )
    if k == "slim_balance":
        return apply_slim_balance(train, groups, spec, float(mit.get("lambda_bal")))
    if k == "ashokan_adjust":
        return adjusted_model(fit_model(spec, train), train, groups, str(mit.get("mode")))
    if k == "li_rerank":
        return fit_model(spec, train)
    raise ValueError(f"unknown mitigation {k!r}")


def mitigated_topn(
    mit: MitigationSpec | None,
    model: FittedModel,
    train: InteractionSet,
    groups: GroupAssignment,
    n: int = 10,
    users=None,
) -> TopNLists:
    """Top-n lists, re-ranked from a pool of ``m`` candidates when ``mit`` is ``li_rerank``."""
    if mit is None or mit.kind != "li_rerank":
        return recommend_topn(model, train, n=n, users=users)
    pool = recommend_topn(model, train, n=max(n, int(mit.get("m"))), users=users)
    return rerank_fair(pool, groups, n=n, epsilon=float(mit.get("epsilon")))


__all__ = [
    "COMPATIBILITY", "KINDS", "LABELS", "STAGE", "TERMS",
    "AdjustedModel", "AntidoteObjective", "MitigationSpec",
    "adjust_ratings", "adjusted_model", "antidote_augment", "apply_slim_balance", "compatible",
    "fit_mitigated", "fit_pmf_independent", "group_offsets", "independence_penalty", "matrix_csv",
    "mitigated_topn", "optimize_antidote", "rerank_fair", "resample_balanced", "selection_gap",
]
