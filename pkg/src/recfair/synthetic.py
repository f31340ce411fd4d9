"""
Synthetic interaction data with controllable group bias.

Ratings follow a low-rank model with user and item biases.  Group 1 users can
receive a planted additive rating offset and may prefer a different slice of
the catalog than group 0 (group-skewed popularity).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import AttributeTable, GroupAssignment, InteractionSet

_log = logging.getLogger(__name__)

# MovieLens 1M age codes with their published user counts
ML1M_AGE_COUNTS = {1: 222, 18: 1103, 25: 2096, 35: 1193, 45: 550, 50: 496, 56: 380}
ML1M_GENDER_COUNTS = {"F": 1709, "M": 4331}


@dataclass(frozen=True)
class PlantedBias:
    n_users: int = 300
    n_items: int = 200
    rank: int = 3
    per_user: tuple[int, int] = (20, 60)
    group1_share: float = 0.3
    offset: float = 0.0  # added to every group-1 rating
    popularity_skew: float = 0.0  # 0: shared popularity; 1: group 1 favors the other end of the catalog
    zipf: float = 0.8
    noise: float = 0.3
    integer: bool = False
    seed: int = 0


@dataclass
class SyntheticData:
    interactions: InteractionSet
    groups: GroupAssignment
    attributes: AttributeTable


def generate(cfg: PlantedBias = PlantedBias()) -> SyntheticData:
    """Draw a dataset; all randomness comes from ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    n_u, n_i = cfg.n_users, cfg.n_items
    n1 = int(round(cfg.group1_share * n_u))
    group = np.zeros(n_u, dtype=np.int64)
    group[rng.choice(n_u, size=n1, replace=False)] = 1
    P = rng.normal(0, 1 / np.sqrt(cfg.rank), (n_u, cfg.rank))
    Q = rng.normal(0, 1 / np.sqrt(cfg.rank), (n_i, cfg.rank))
    bu = rng.normal(0, 0.3, n_u)
    bi = rng.normal(0, 0.4, n_i)
    pop0 = (np.arange(n_i) + 1.0) ** -cfg.zipf
    pop0 /= pop0.sum()
    pop1 = (1 - cfg.popularity_skew) * pop0 + cfg.popularity_skew * pop0[::-1]
    records = []
    for u in range(n_u):
        m = int(rng.integers(cfg.per_user[0], cfg.per_user[1] + 1))
        items = rng.choice(n_i, size=min(m, n_i), replace=False, p=pop1 if group[u] else pop0)
        r = 3.5 + bu[u] + bi[items] + Q[items] @ P[u] + rng.normal(0, cfg.noise, len(items))
        if group[u]:
            r = r + cfg.offset
        r = np.clip(np.rint(r) if cfg.integer else r, 1.0, 5.0)
        ts = np.sort(rng.integers(9.5e8, 1e9, len(items)))
        order = rng.permutation(len(items))
        for j, t in zip(order, ts):
            records.append((f"u{u}", f"i{items[j]}", float(r[j]), int(t)))
    iset = InteractionSet.from_records(records)
    labels = {f"u{u}": int(group[u]) for u in range(n_u)}
    groups = GroupAssignment.from_labels("group", labels, "planted group")
    attrs = AttributeTable({f"u{u}": {"group": int(group[u])} for u in range(n_u)}, ("group",))
    return SyntheticData(iset, groups, attrs)


def ml1m_like_users(n_users: int = 6040, seed: int = 0) -> dict[str, tuple[str, int]]:
    """
    User ids mapped to ``(gender, age code)``.

    For ``n_users = 6040`` the marginal counts equal the published MovieLens
    1M ones exactly; otherwise codes are sampled from those marginals.
    """
    rng = np.random.default_rng(seed)
    if n_users == sum(ML1M_AGE_COUNTS.values()):
        ages = np.repeat(list(ML1M_AGE_COUNTS), list(ML1M_AGE_COUNTS.values()))
        genders = np.repeat(list(ML1M_GENDER_COUNTS), list(ML1M_GENDER_COUNTS.values()))
        ages, genders = rng.permutation(ages), rng.permutation(genders)
    else:
        pa = np.array(list(ML1M_AGE_COUNTS.values()), dtype=float)
        pg = np.array(list(ML1M_GENDER_COUNTS.values()), dtype=float)
        ages = rng.choice(list(ML1M_AGE_COUNTS), size=n_users, p=pa / pa.sum())
        genders = rng.choice(list(ML1M_GENDER_COUNTS), size=n_users, p=pg / pg.sum())
    return {str(u + 1): (str(g), int(a)) for u, (g, a) in enumerate(zip(genders, ages))}


def write_ml1m_users(users: dict[str, tuple[str, int]], path: str | Path) -> None:
    """``UserID::Gender::Age::Occupation::Zip`` (occupation 0, zip 00000)."""
    with open(path, "w", encoding="latin-1", newline="\n") as fh:
        for u, (g, a) in users.items():
            fh.write(f"{u}::{g}::{a}::0::00000\n")


def write_ml1m_ratings(iset: InteractionSet, path: str | Path) -> None:
    """``UserID::MovieID::Rating::Timestamp``; ratings must be integers."""
    import gzip

    if not np.all(iset.ratings == np.rint(iset.ratings)):
        raise ValueError("ML-1M format needs integer ratings")
    opener = gzip.open if str(path).endswith(".gz") else open
    ts = iset.timestamps if iset.timestamps is not None else np.zeros(len(iset), dtype=np.int64)
    with opener(path, "wt", encoding="latin-1", newline="\n") as fh:
        for u, i, r, t in zip(iset.users, iset.items, iset.ratings, ts):
            fh.write(f"{iset.user_ids[u]}::{iset.item_ids[i]}::{int(r)}::{int(t)}\n")


def ml1m_like_sample(users: dict[str, tuple[str, int]], n_items: int = 600, seed: int = 0) -> InteractionSet:
    """
    Integer-rated interactions for ``users`` (id -> (gender, age code)) with
    MovieLens-style ids.  Older users rate slightly higher and women lean
    toward a different part of the catalog, so the fairness metrics have
    something to detect.
    """
    n_users = len(users)
    rng = np.random.default_rng(seed)
    rank = 4
    P = rng.normal(0, 0.5, (n_users, rank))
    Q = rng.normal(0, 0.5, (n_items, rank))
    bi = rng.normal(0, 0.5, n_items)
    pop = (np.arange(n_items) + 1.0) ** -0.9
    pop /= pop.sum()
    alt = 0.6 * pop + 0.4 * pop[rng.permutation(n_items)]
    records = []
    for k, (uid, (g, a)) in enumerate(users.items()):
        m = int(min(n_items, 20 + rng.geometric(1 / 40)))
        items = rng.choice(n_items, size=m, replace=False, p=alt if g == "F" else pop)
        r = 3.4 + 0.15 * (a >= 35) + bi[items] + Q[items] @ P[k] + rng.normal(0, 0.7, m)
        r = np.clip(np.rint(r), 1, 5)
        ts = 956_703_932 + np.sort(rng.integers(0, 3 * 10**7, m))
        for j in range(m):
            records.append((uid, str(items[j] + 1), float(r[j]), int(ts[j])))
    return InteractionSet.from_records(records)
