"""Which mitigation attaches to which model family (as in the originating studies)."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping

from ..models.base import FAMILIES

KINDS = ("resample", "kamishima_independence", "slim_balance", "li_rerank", "ashokan_adjust", "antidote")

STAGE = {
    "resample": "PRE",
    "kamishima_independence": "IN",
    "slim_balance": "IN",
    "li_rerank": "POST",
    "ashokan_adjust": "POST",
    "antidote": "PRE",
}

LABELS = {
    "resample": "Balanced resampling",
    "kamishima_independence": "Independence penalty",
    "slim_balance": "Balanced neighbors",
    "li_rerank": "Fair re-ranking",
    "ashokan_adjust": "Score adjustment",
    "antidote": "Antidote data",
}

COMPATIBILITY: dict[str, frozenset[str]] = {
    "resample": frozenset({"popularity", "avg_rating", "user_knn", "item_knn", "mf_sgd"}),
    "kamishima_independence": frozenset({"mf_sgd"}),
    "slim_balance": frozenset({"slim_u"}),
    "li_rerank": frozenset({"mf_sgd"}),
    # the additive shift only needs point predictions, so it attaches to every scoring family
    "ashokan_adjust": frozenset({"popularity", "avg_rating", "user_knn", "item_knn", "mf_sgd", "als"}),
    "antidote": frozenset({"als"}),
}

PARAM_DEFAULTS: dict[str, dict[str, object]] = {
    "resample": {"balance_by": "interactions"},
    "kamishima_independence": {"term": "mean_m", "eta": 1.0},
    "slim_balance": {"lambda_bal": 10.0},
    "li_rerank": {"m": 50, "epsilon": 0.0},
    "ashokan_adjust": {"mode": "value"},
    "antidote": {"budget": 5, "step": 1.0, "iterations": 10},
}


def compatible(kind: str, family: str) -> bool:
    return family in COMPATIBILITY.get(kind, ())


def matrix_csv() -> str:
    """Machine-readable compatibility table: one row per mitigation, one column per family."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mitigation", "stage", *FAMILIES])
    for k in KINDS:
        w.writerow([k, STAGE[k], *(int(compatible(k, f)) for f in FAMILIES)])
    return buf.getvalue()


@dataclass(frozen=True)
class MitigationSpec:
    kind: str
    params: Mapping[str, object] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown mitigation {self.kind!r}")
        p = {**PARAM_DEFAULTS[self.kind], **self.params}
        if self.kind == "kamishima_independence":
            if p["term"] not in ("mean_m", "bdist_m", "mi_normal"):
                raise ValueError(f"unknown independence term {p['term']!r}")
            if not float(p["eta"]) >= 0:
                raise ValueError("eta must be >= 0")
        elif self.kind == "slim_balance" and float(p["lambda_bal"]) < 0:
            raise ValueError("lambda_bal must be >= 0")
        elif self.kind == "li_rerank" and (float(p["epsilon"]) < 0 or int(p["m"]) < 1):
            raise ValueError("li_rerank needs epsilon >= 0 and m >= 1")
        elif self.kind == "ashokan_adjust" and p["mode"] not in ("value", "parity"):
            raise ValueError(f"unknown adjust mode {p['mode']!r}")
        elif self.kind == "antidote" and (int(p["budget"]) < 0 or int(p["iterations"]) < 0 or float(p["step"]) <= 0):
            raise ValueError("antidote needs budget >= 0, iterations >= 0, step > 0")
        elif self.kind == "resample" and p["balance_by"] not in ("interactions", "users"):
            raise ValueError(f"unknown balance_by {p['balance_by']!r}")

    def get(self, key):
        return self.params.get(key, PARAM_DEFAULTS[self.kind].get(key))

    def check_family(self, family: str) -> None:
        if not compatible(self.kind, family):
            allowed = sorted(COMPATIBILITY[self.kind])
            raise ValueError(f"mitigation {self.kind} does not apply to {family} (allowed: {allowed})")
