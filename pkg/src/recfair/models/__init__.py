"""Classical recommenders the mitigation procedures attach to."""

from .als import ALSModel, fit_als
from .base import (
    FAMILIES,
    FittedModel,
    ModelSpec,
    ScoreTable,
    TopNLists,
    TrainingError,
    predict_scores,
    recommend_topn,
)
from .checkpoint import load_model, save_model
from .knn import KNNModel, fit_knn
from .mf import MFModel, fit_mf_sgd
from .popularity import PopularityModel, fit_popularity
from .slim import SLIMModel, fit_slim_u

MODEL_CLASSES = {c.__name__: c for c in (ALSModel, KNNModel, MFModel, PopularityModel, SLIMModel)}


def fit_model(spec: ModelSpec, train) -> FittedModel:
    """Train the family named by ``spec`` on ``train``."""
    f = spec.family
    if f == "popularity":
        return fit_popularity(train, "count", spec=spec)
    if f == "avg_rating":
        return fit_popularity(train, "mean_rating", damping=float(spec.get("damping", 10.0)), spec=spec)
    if f in ("user_knn", "item_knn"):
        return fit_knn(
            train,
            axis=f.split("_")[0],
            N=int(spec.get("N")),
            similarity=spec.get("similarity", "cosine"),
            shrinkage=float(spec.get("shrinkage", 0.0)),
            spec=spec,
        )
    if f == "mf_sgd":
        return fit_mf_sgd(train, spec=spec)
    if f == "als":
        return fit_als(train, spec=spec)
    if f == "slim_u":
        return fit_slim_u(train, spec=spec)
    raise ValueError(f"unknown family {f!r}")


__all__ = [
    "FAMILIES", "FittedModel", "ModelSpec", "ScoreTable", "TopNLists", "TrainingError",
    "fit_als", "fit_knn", "fit_mf_sgd", "fit_model", "fit_popularity", "fit_slim_u",
    "load_model", "predict_scores", "recommend_topn", "save_model",
]
