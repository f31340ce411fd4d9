from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..data import InteractionSet

_log = logging.getLogger(__name__)

FAMILIES = ("popularity", "avg_rating", "user_knn", "item_knn", "mf_sgd", "als", "slim_u")

REQUIRED = {
    "popularity": (),
    "avg_rating": (),
    "user_knn": ("N",),
    "item_knn": ("N",),
    "mf_sgd": ("k", "lr", "reg", "epochs"),
    "als": ("k", "reg", "epochs"),
    "slim_u": ("l1", "l2"),
}

POSITIVE = {"k", "lr", "epochs", "N", "m"}
NONNEGATIVE = {"reg", "l1", "l2", "shrinkage", "damping", "tol"}


class TrainingError(RuntimeError):
    """Model training failed (divergence, all grid points failed, ...)."""


@dataclass(frozen=True)
class ModelSpec:
    """A model family plus its hyperparameters."""

    family: str
    params: Mapping[str, object] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}")
        missing = [k for k in REQUIRED[self.family] if k not in self.params]
        if missing:
            raise ValueError(f"{self.family} requires hyperparameters {missing}")
        for k, v in self.params.items():
            if k in POSITIVE and not (isinstance(v, (int, float)) and v > 0):
                raise ValueError(f"{self.family}.{k} must be positive, got {v!r}")
            if k in NONNEGATIVE and not (isinstance(v, (int, float)) and v >= 0):
                raise ValueError(f"{self.family}.{k} must be non-negative, got {v!r}")

    def get(self, key, default=None):
        return self.params.get(key, default)

    def with_params(self, **kw) -> ModelSpec:
        return ModelSpec(self.family, {**self.params, **kw}, self.seed)

    @property
    def label(self) -> str:
        if self.family == "mf_sgd":
            return {"funk": "FunkSVD", "biased": "BiasedMF", "pmf": "PMF"}[self.get("variant", "funk")]
        return {
            "popularity": "TopPopular",
            "avg_rating": "AvgRating",
            "user_knn": "UserKNN",
            "item_knn": "ItemKNN",
            "als": "ALS",
            "slim_u": "SLIM-U",
        }[self.family]


class FittedModel:
    """
    A trained recommender over the id universes of its training set.

    Subclasses implement :meth:`_score` (pairs of known codes) and may
    override :meth:`_score_rows` for efficient full-row scoring.  Users or
    items never seen in training are scored with the global training mean.
    """

    spec: ModelSpec

    def __init__(self, spec: ModelSpec, train: InteractionSet):
        self.spec = spec
        self.user_ids = train.user_ids
        self.item_ids = train.item_ids
        self.rating_scale = train.rating_scale
        self.global_mean = float(train.ratings.mean()) if len(train) else 0.0
        self.user_seen = train.user_counts > 0
        self.item_seen = train.item_counts > 0
        self.train_reference = f"{len(train)}x{train.n_users}x{train.n_items}"

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    def _score(self, u: np.ndarray, i: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _score_rows(self, users: np.ndarray) -> np.ndarray:
        """Scores of every item for each user code in ``users``."""
        out = np.empty((len(users), self.n_items))
        items = np.arange(self.n_items)
        for k, u in enumerate(users):
            out[k] = self._score(np.full(self.n_items, u), items)
        return out

    def score_codes(self, u: np.ndarray, i: np.ndarray) -> np.ndarray:
        """Score code pairs; codes may be -1 for unknown ids."""
        u = np.asarray(u, dtype=np.int64)
        i = np.asarray(i, dtype=np.int64)
        out = np.full(len(u), self.global_mean)
        ok = (u >= 0) & (i >= 0)
        ok[ok] = self.user_seen[u[ok]] & self.item_seen[i[ok]]
        if ok.any():
            out[ok] = self._score(u[ok], i[ok])
        return out

    def score_rows(self, users: np.ndarray) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        out = np.full((len(users), self.n_items), self.global_mean)
        known = self.user_seen[users]
        if known.any():
            rows = self._score_rows(users[known])
            rows[:, ~self.item_seen] = self.global_mean
            out[known] = rows
        return out

    def codes_for(self, user_ids: Sequence[str], item_ids: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        uidx = {u: k for k, u in enumerate(self.user_ids)}
        iidx = {i: k for k, i in enumerate(self.item_ids)}
        return (
            np.array([uidx.get(u, -1) for u in user_ids], dtype=np.int64),
            np.array([iidx.get(i, -1) for i in item_ids], dtype=np.int64),
        )

    # checkpoint hooks
    def state(self) -> dict[str, np.ndarray]:
        return {}

    def restore(self, state: Mapping[str, np.ndarray]) -> None:
        for k, v in state.items():
            setattr(self, k, v)


@dataclass(frozen=True, eq=False)
class ScoreTable:
    """Predicted relevance for a set of (user, item) id pairs."""

    users: tuple[str, ...]
    items: tuple[str, ...]
    scores: np.ndarray

    def __post_init__(self):
        if not (len(self.users) == len(self.items) == len(self.scores)):
            raise ValueError("ScoreTable columns differ in length")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("ScoreTable contains non-finite scores")

    def __len__(self):
        return len(self.scores)

    def as_dict(self) -> dict[tuple[str, str], float]:
        return {(u, i): float(s) for u, i, s in zip(self.users, self.items, self.scores)}

    def aligned(self, iset: InteractionSet) -> np.ndarray:
        """Scores in the row order of ``iset``; every pair must be covered."""
        lookup = self.as_dict()
        out = np.empty(len(iset))
        for k, (u, i) in enumerate(zip(iset.users, iset.items)):
            key = (iset.user_ids[u], iset.item_ids[i])
            try:
                out[k] = lookup[key]
            except KeyError:
                raise KeyError(f"no score for pair {key}") from None
        return out

    def with_scores(self, scores: np.ndarray) -> ScoreTable:
        return ScoreTable(self.users, self.items, np.asarray(scores, dtype=np.float64))

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write("user\titem\tscore\n")
            for u, i, s in zip(self.users, self.items, self.scores):
                f.write(f"{u}\t{i}\t{float(s)!r}\n")

    @classmethod
    def read(cls, path) -> ScoreTable:
        us, its, ss = [], [], []
        with open(path, encoding="utf-8") as f:
            next(f)
            for line in f:
                u, i, s = line.rstrip("\n").split("\t")
                us.append(u)
                its.append(i)
                ss.append(float(s))
        return cls(tuple(us), tuple(its), np.asarray(ss))


@dataclass(frozen=True, eq=False)
class TopNLists:
    """Per-user ranked recommendations, scores non-increasing."""

    lists: Mapping[str, tuple[tuple[str, float], ...]]

    def __getitem__(self, user):
        return self.lists[user]

    def __iter__(self):
        return iter(self.lists)

    def __len__(self):
        return len(self.lists)

    def items_of(self, user) -> list[str]:
        return [i for i, _ in self.lists[user]]

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write("user\trank\titem\tscore\n")
            for u, recs in self.lists.items():
                for r, (i, s) in enumerate(recs, start=1):
                    f.write(f"{u}\t{r}\t{i}\t{float(s)!r}\n")

    @classmethod
    def read(cls, path) -> TopNLists:
        lists: dict[str, list] = {}
        with open(path, encoding="utf-8") as f:
            next(f)
            for line in f:
                u, _, i, s = line.rstrip("\n").split("\t")
                lists.setdefault(u, []).append((i, float(s)))
        return cls({u: tuple(v) for u, v in lists.items()})


def predict_scores(model: FittedModel, pairs: Iterable[tuple[str, str]] | InteractionSet) -> ScoreTable:
    """Score (user id, item id) pairs; unknown ids receive the global training mean."""
    if isinstance(pairs, InteractionSet):
        users = tuple(pairs.user_ids[u] for u in pairs.users)
        items = tuple(pairs.item_ids[i] for i in pairs.items)
    else:
        pairs = list(pairs)
        users = tuple(str(u) for u, _ in pairs)
        items = tuple(str(i) for _, i in pairs)
    u, i = model.codes_for(users, items)
    return ScoreTable(users, items, model.score_codes(u, i))


def topn_from_scores(
    scores: np.ndarray, exclude: np.ndarray, n: int
) -> tuple[np.ndarray, np.ndarray]:
    """
    Rank one user's score row.

    Returns item codes and scores of the best ``n`` non-excluded items,
    descending by score, ties by ascending item code.
    """
    cand = np.flatnonzero(~exclude)
    if len(cand) == 0:
        return cand, scores[cand]
    s = scores[cand]
    # lexsort: last key is primary; stable on code for ties
    order = np.lexsort((cand, -s))[:n]
    return cand[order], s[order]


def recommend_topn(
    model: FittedModel,
    train: InteractionSet,
    n: int = 10,
    users: Sequence[str] | None = None,
    batch: int = 256,
) -> TopNLists:
    """
    Top-``n`` lists over all items minus each user's training items.

    ``users`` defaults to every user present in ``train``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if users is None:
        user_list = [train.user_ids[u] for u in train.present_users()]
    else:
        user_list = list(users)
    t_uidx = train.user_index
    m_uidx = {u: k for k, u in enumerate(model.user_ids)}
    # map model item codes to train item codes for exclusion
    train_items_by_user = train.by_user()
    item_map = np.array([train.item_index.get(i, -1) for i in model.item_ids], dtype=np.int64)
    out: dict[str, tuple] = {}
    for start in range(0, len(user_list), batch):
        chunk = user_list[start : start + batch]
        codes = np.array([m_uidx.get(u, -1) for u in chunk], dtype=np.int64)
        rows = np.full((len(chunk), model.n_items), model.global_mean)
        known = codes >= 0
        if known.any():
            rows[known] = model.score_rows(codes[known])
        for k, u in enumerate(chunk):
            excl = np.zeros(model.n_items, dtype=bool)
            tu = t_uidx.get(u)
            if tu is not None:
                titems = train.items[train_items_by_user[tu]]
                seen = np.isin(item_map, titems)
                excl |= seen
            icodes, sc = topn_from_scores(rows[k], excl, n)
            out[u] = tuple((model.item_ids[c], float(s)) for c, s in zip(icodes, sc))
    return TopNLists(out)
