"""Per-user train/validation/test partitioning."""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import CANONICAL, InteractionSet, load_interactions, write_interactions


@dataclass(frozen=True, eq=False)
class SplitBundle:
    train: InteractionSet
    validation: InteractionSet
    test: InteractionSet
    seed: int
    strategy: str
    test_frac: float = 0.0
    valid_frac: float = 0.0

    def check(self) -> None:
        """Assert disjointness and that the union covers the input sizes consistently."""
        keys = [s.pair_keys for s in (self.train, self.validation, self.test)]
        allk = np.concatenate(keys)
        if len(np.unique(allk)) != len(allk):
            raise AssertionError("split parts overlap")

    def metadata(self) -> dict:
        return {
            "seed": self.seed,
            "strategy": self.strategy,
            "test_frac": self.test_frac,
            "valid_frac": self.valid_frac,
            "rounding": "half_away_from_zero",
            "sizes": {"train": len(self.train), "validation": len(self.validation), "test": len(self.test)},
        }

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        write_interactions(self.train, d / "train.tsv")
        write_interactions(self.validation, d / "validation.tsv")
        write_interactions(self.test, d / "test.tsv")
        (d / "split.json").write_text(json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n")
        # id universes, so a reload reproduces the same integer codes
        (d / "users.txt").write_text("".join(u + "\n" for u in self.train.user_ids))
        (d / "items.txt").write_text("".join(i + "\n" for i in self.train.item_ids))


def load_split(directory: str | Path, rating_scale: tuple[float, float] = (1.0, 5.0)) -> SplitBundle:
    """Inverse of :meth:`SplitBundle.save`."""
    d = Path(directory)
    meta = json.loads((d / "split.json").read_text())
    users = (d / "users.txt").read_text().splitlines()
    items = (d / "items.txt").read_text().splitlines()

    def part(name):
        loaded = load_interactions(d / f"{name}.tsv", CANONICAL, rating_scale)
        return InteractionSet.from_records(loaded.records(), rating_scale, users, items)

    return SplitBundle(
        part("train"), part("validation"), part("test"),
        meta["seed"], meta["strategy"], meta["test_frac"], meta["valid_frac"],
    )


def merge_sets(a: InteractionSet, b: InteractionSet) -> InteractionSet:
    """Union of two disjoint sets over the same id universe."""
    if not a.same_universe(b):
        raise ValueError("sets have different id universes")
    ts = None
    if a.timestamps is not None and b.timestamps is not None:
        ts = np.concatenate([a.timestamps, b.timestamps])
    out = InteractionSet(
        a.user_ids, a.item_ids,
        np.concatenate([a.users, b.users]), np.concatenate([a.items, b.items]),
        np.concatenate([a.ratings, b.ratings]), ts, a.rating_scale,
    )
    out.validate()
    return out


def round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def _user_rng(seed: int, user_id: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(user_id.encode("utf-8"))])


def split_per_user(
    iset: InteractionSet,
    test_frac: float = 0.2,
    valid_frac: float = 0.0,
    seed: int = 0,
) -> SplitBundle:
    """
    Hold out the most recent ``test_frac`` of each user's interactions for test,
    then ``valid_frac`` of the remainder for validation.

    Without timestamps the held-out interactions are drawn at random; with
    timestamps, ties are broken by a seeded shuffle.  Counts are rounded half
    away from zero and capped so every user with two or more interactions
    keeps at least one training interaction.
    """
    if not (0 <= test_frac < 1 and 0 <= valid_frac < 1):
        raise ValueError("fractions must lie in [0, 1)")
    if test_frac + (1 - test_frac) * valid_frac >= 1:
        raise ValueError("split leaves nothing for training")
    temporal = iset.timestamps is not None
    part = np.zeros(len(iset), dtype=np.int8)  # 0 train, 1 validation, 2 test
    item_rank = np.empty(iset.n_items, dtype=np.int64)
    item_rank[np.argsort(np.array(iset.item_ids, dtype=object), kind="stable")] = np.arange(iset.n_items)
    for u, rows in enumerate(iset.by_user()):
        n = len(rows)
        if n < 2:
            continue
        rng = _user_rng(seed, iset.user_ids[u])
        # canonical starting order so the shuffle does not depend on row order
        rows = rows[np.argsort(item_rank[iset.items[rows]], kind="stable")]
        noise = rng.permutation(n)
        if temporal:
            order = rows[np.lexsort((noise, iset.timestamps[rows]))]
        else:
            order = rows[noise]
        n_test = min(round_half_away(test_frac * n), n - 1)
        rest = n - n_test
        n_valid = min(round_half_away(valid_frac * rest), rest - 1)
        if n_test:
            part[order[n - n_test :]] = 2
        if n_valid:
            part[order[rest - n_valid : rest]] = 1
    bundle = SplitBundle(
        iset.take(np.flatnonzero(part == 0)).sorted(),
        iset.take(np.flatnonzero(part == 1)).sorted(),
        iset.take(np.flatnonzero(part == 2)).sorted(),
        seed,
        "temporal" if temporal else "random",
        test_frac,
        valid_frac,
    )
    bundle.check()
    return bundle
