"""
Interaction and attribute data: ingestion, preprocessing, and group construction.

The central container is :class:`InteractionSet`, an immutable bundle of
parallel code arrays (user, item, rating, optional timestamp) plus the id
universes the codes index into.  Subsets produced by splitting or resampling
keep the parent's universe, so models and metrics can line sets up by code.
"""

from __future__ import annotations

import gzip
import io
import logging
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

_log = logging.getLogger(__name__)

SYNTHETIC_PREFIX = "__synthetic__:"


class DataError(ValueError):
    """Raised for malformed input data or violated data invariants."""


@dataclass(frozen=True)
class FormatSpec:
    """Column layout of a delimited text file."""

    delimiter: str = "\t"
    columns: tuple[str, ...] = ("user", "item", "rating", "timestamp")
    header: bool = False
    comment: str | None = None


ML1M_RATINGS = FormatSpec("::", ("user", "item", "rating", "timestamp"))
ML1M_USERS = FormatSpec("::", ("user", "gender", "age", "occupation", "zip"))
LFM_EVENTS = FormatSpec("\t", ("user", "timestamp", "artist_id", "artist", "track_id", "track"))
LFM_PROFILES = FormatSpec("\t", ("user", "gender", "age", "country", "registered"), header=True)
CANONICAL = FormatSpec("\t", ("user", "item", "rating", "timestamp"), header=True)

PRESETS: dict[str, dict[str, FormatSpec]] = {
    "ml1m": {"ratings": ML1M_RATINGS, "users": ML1M_USERS},
    "lfm1k": {"events": LFM_EVENTS, "users": LFM_PROFILES},
    "canonical": {"ratings": CANONICAL, "users": FormatSpec("\t", ("user", "gender", "age"), header=True)},
}


def _open_text(path: str | Path) -> io.TextIOBase:
    path = Path(path)
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8", errors="replace")
    return open(path, encoding="utf-8", errors="replace", newline="")


def _iter_rows(path, fmt: FormatSpec) -> Iterator[tuple[int, list[str]]]:
    with _open_text(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            if lineno == 1 and fmt.header:
                continue
            if fmt.comment and line.startswith(fmt.comment):
                continue
            yield lineno, line.split(fmt.delimiter)


@dataclass(frozen=True, eq=False)
class InteractionSet:
    """
    User-item-rating records over fixed user and item id universes.

    ``users`` and ``items`` hold integer codes into ``user_ids`` / ``item_ids``.
    A universe may contain ids with no interactions in this particular set
    (e.g. a test split), but every code refers to a declared id.
    """

    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    timestamps: np.ndarray | None = None
    rating_scale: tuple[float, float] = (1.0, 5.0)

    @classmethod
    def from_records(
        cls,
        records: Iterable[Sequence],
        rating_scale: tuple[float, float] = (1.0, 5.0),
        user_ids: Sequence[str] | None = None,
        item_ids: Sequence[str] | None = None,
    ) -> InteractionSet:
        """
        Build a set from ``(user, item, rating[, timestamp])`` tuples.

        Ids are assigned codes in order of first appearance unless explicit
        universes are passed.  Duplicate pairs and out-of-scale ratings raise
        :class:`DataError`.
        """
        uidx: dict[str, int] = {u: k for k, u in enumerate(user_ids)} if user_ids is not None else {}
        iidx: dict[str, int] = {i: k for k, i in enumerate(item_ids)} if item_ids is not None else {}
        grow_users = user_ids is None
        grow_items = item_ids is None
        us, its, rs, ts = [], [], [], []
        has_ts = None
        for rec in records:
            u, i, r = str(rec[0]), str(rec[1]), float(rec[2])
            t = rec[3] if len(rec) > 3 else None
            if has_ts is None:
                has_ts = t is not None
            if u not in uidx:
                if not grow_users:
                    raise DataError(f"unknown user id {u!r}")
                uidx[u] = len(uidx)
            if i not in iidx:
                if not grow_items:
                    raise DataError(f"unknown item id {i!r}")
                iidx[i] = len(iidx)
            us.append(uidx[u])
            its.append(iidx[i])
            rs.append(r)
            ts.append(-1 if t is None else int(t))
        out = cls(
            tuple(uidx),
            tuple(iidx),
            np.asarray(us, dtype=np.int64),
            np.asarray(its, dtype=np.int64),
            np.asarray(rs, dtype=np.float64),
            np.asarray(ts, dtype=np.int64) if has_ts else None,
            (float(rating_scale[0]), float(rating_scale[1])),
        )
        out.validate()
        return out

    def __len__(self) -> int:
        return len(self.users)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @cached_property
    def user_index(self) -> dict[str, int]:
        return {u: k for k, u in enumerate(self.user_ids)}

    @cached_property
    def item_index(self) -> dict[str, int]:
        return {i: k for k, i in enumerate(self.item_ids)}

    @cached_property
    def user_counts(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.n_users)

    @cached_property
    def item_counts(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.n_items)

    @property
    def pair_keys(self) -> np.ndarray:
        return self.users * self.n_items + self.items

    def present_users(self) -> np.ndarray:
        """Codes of users with at least one interaction, ascending."""
        return np.flatnonzero(self.user_counts > 0)

    def validate(self) -> None:
        """Check the type invariants; raise :class:`DataError` on violation."""
        n = len(self.users)
        if not (len(self.items) == n and len(self.ratings) == n):
            raise DataError("column arrays differ in length")
        if self.timestamps is not None and len(self.timestamps) != n:
            raise DataError("timestamp column differs in length")
        if len(set(self.user_ids)) != len(self.user_ids):
            raise DataError("user universe has duplicate ids")
        if len(set(self.item_ids)) != len(self.item_ids):
            raise DataError("item universe has duplicate ids")
        if n:
            if self.users.min() < 0 or self.users.max() >= self.n_users:
                raise DataError("user code out of range")
            if self.items.min() < 0 or self.items.max() >= self.n_items:
                raise DataError("item code out of range")
            lo, hi = self.rating_scale
            bad = np.flatnonzero((self.ratings < lo) | (self.ratings > hi) | ~np.isfinite(self.ratings))
            if len(bad):
                raise DataError(f"rating {self.ratings[bad[0]]} outside scale {self.rating_scale} (row {bad[0]})")
            keys = self.pair_keys
            uniq, first, counts = np.unique(keys, return_index=True, return_counts=True)
            if len(uniq) != n:
                dup = uniq[counts > 1][0]
                rows = np.flatnonzero(keys == dup)
                u, i = divmod(int(dup), self.n_items)
                raise DataError(
                    f"duplicate pair ({self.user_ids[u]}, {self.item_ids[i]}) at rows {rows.tolist()}"
                )

    def take(self, rows: np.ndarray) -> InteractionSet:
        """Subset by row indices (or a boolean mask), keeping the universes."""
        rows = np.asarray(rows)
        return InteractionSet(
            self.user_ids,
            self.item_ids,
            self.users[rows],
            self.items[rows],
            self.ratings[rows],
            None if self.timestamps is None else self.timestamps[rows],
            self.rating_scale,
        )

    def with_ratings(self, ratings: np.ndarray) -> InteractionSet:
        return InteractionSet(
            self.user_ids, self.item_ids, self.users, self.items,
            np.asarray(ratings, dtype=np.float64), self.timestamps, self.rating_scale,
        )

    def sorted(self) -> InteractionSet:
        """Canonical order: by user code, then item code."""
        order = np.lexsort((self.items, self.users))
        return self.take(order)

    def compact(self) -> InteractionSet:
        """Drop ids without interactions and rebuild contiguous codes (first-appearance order)."""
        _, ufirst = np.unique(self.users, return_index=True)
        _, ifirst = np.unique(self.items, return_index=True)
        ukeep = self.users[np.sort(ufirst)]
        ikeep = self.items[np.sort(ifirst)]
        umap = np.full(self.n_users, -1, dtype=np.int64)
        umap[ukeep] = np.arange(len(ukeep))
        imap = np.full(self.n_items, -1, dtype=np.int64)
        imap[ikeep] = np.arange(len(ikeep))
        return InteractionSet(
            tuple(self.user_ids[k] for k in ukeep),
            tuple(self.item_ids[k] for k in ikeep),
            umap[self.users],
            imap[self.items],
            self.ratings.copy(),
            None if self.timestamps is None else self.timestamps.copy(),
            self.rating_scale,
        )

    def records(self) -> Iterator[tuple]:
        for k in range(len(self)):
            u = self.user_ids[self.users[k]]
            i = self.item_ids[self.items[k]]
            if self.timestamps is None:
                yield (u, i, float(self.ratings[k]))
            else:
                yield (u, i, float(self.ratings[k]), int(self.timestamps[k]))

    def to_dense(self, fill: float = 0.0) -> np.ndarray:
        """Users x items matrix; missing entries set to ``fill``."""
        m = np.full((self.n_users, self.n_items), fill, dtype=np.float64)
        m[self.users, self.items] = self.ratings
        return m

    def mask_dense(self) -> np.ndarray:
        m = np.zeros((self.n_users, self.n_items), dtype=bool)
        m[self.users, self.items] = True
        return m

    def by_user(self) -> list[np.ndarray]:
        """Row indices grouped per user code."""
        order = np.argsort(self.users, kind="stable")
        bounds = np.searchsorted(self.users[order], np.arange(self.n_users + 1))
        return [order[bounds[u] : bounds[u + 1]] for u in range(self.n_users)]

    def same_universe(self, other: InteractionSet) -> bool:
        return self.user_ids == other.user_ids and self.item_ids == other.item_ids


def load_interactions(
    path: str | Path,
    format_spec: FormatSpec = CANONICAL,
    rating_scale: tuple[float, float] = (1.0, 5.0),
) -> InteractionSet:
    """
    Read a delimited interaction file.

    Row order is preserved.  Malformed rows, out-of-scale ratings and
    duplicate pairs raise :class:`DataError` with the offending line number.
    """
    cols = format_spec.columns
    try:
        cu, ci, cr = cols.index("user"), cols.index("item"), cols.index("rating")
    except ValueError:
        raise DataError(f"format {format_spec} lacks a user, item or rating column") from None
    ct = cols.index("timestamp") if "timestamp" in cols else None
    lo, hi = rating_scale
    uidx: dict[str, int] = {}
    iidx: dict[str, int] = {}
    seen: dict[tuple[int, int], int] = {}
    us, its, rs, ts = [], [], [], []
    n_ts = 0
    for lineno, parts in _iter_rows(path, format_spec):
        if len(parts) < max(cu, ci, cr) + 1:
            raise DataError(f"{path}:{lineno}: expected {len(cols)} fields, got {len(parts)}")
        u, i = parts[cu].strip(), parts[ci].strip()
        if not u or not i:
            raise DataError(f"{path}:{lineno}: empty user or item id")
        try:
            r = float(parts[cr])
        except ValueError:
            raise DataError(f"{path}:{lineno}: bad rating {parts[cr]!r}") from None
        if not (lo <= r <= hi):
            raise DataError(f"{path}:{lineno}: rating {r} outside scale [{lo}, {hi}]")
        t = -1
        if ct is not None and ct < len(parts) and parts[ct].strip():
            try:
                t = int(parts[ct])
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad timestamp {parts[ct]!r}") from None
            n_ts += 1
        uc = uidx.setdefault(u, len(uidx))
        ic = iidx.setdefault(i, len(iidx))
        prev = seen.setdefault((uc, ic), lineno)
        if prev != lineno:
            raise DataError(f"{path}:{lineno}: duplicate pair ({u}, {i}), first seen on line {prev}")
        us.append(uc)
        its.append(ic)
        rs.append(r)
        ts.append(t)
    if n_ts and n_ts != len(us):
        raise DataError(f"{path}: timestamps present on only {n_ts} of {len(us)} rows")
    out = InteractionSet(
        tuple(uidx), tuple(iidx),
        np.asarray(us, dtype=np.int64), np.asarray(its, dtype=np.int64),
        np.asarray(rs, dtype=np.float64),
        np.asarray(ts, dtype=np.int64) if n_ts else None,
        (float(lo), float(hi)),
    )
    _log.info("loaded %d interactions (%d users, %d items) from %s", len(out), out.n_users, out.n_items, path)
    return out


def write_interactions(iset: InteractionSet, path: str | Path) -> None:
    """Write the canonical tab-separated form (header, then user/item/rating/timestamp)."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("user\titem\trating\ttimestamp\n")
        for rec in iset.records():
            t = "" if len(rec) < 4 else str(rec[3])
            f.write(f"{rec[0]}\t{rec[1]}\t{rec[2]!r}\t{t}\n")


@dataclass(frozen=True)
class AttributeTable:
    """Per-user categorical attributes; ``schema`` lists the allowed attribute names."""

    rows: Mapping[str, Mapping[str, object]]
    schema: tuple[str, ...]

    def __post_init__(self):
        for u, row in self.rows.items():
            extra = set(row) - set(self.schema)
            if extra:
                raise DataError(f"user {u}: attributes {sorted(extra)} not in schema {self.schema}")

    def get(self, user: str, attribute: str):
        return self.rows.get(user, {}).get(attribute)


def _coerce_label(value: str):
    value = value.strip()
    if not value:
        return None
    try:
        return int(value)
    except ValueError:
        return value


def load_attributes(
    path: str | Path,
    format_spec: FormatSpec = ML1M_USERS,
    attributes: Sequence[str] = ("gender", "age"),
) -> AttributeTable:
    """Read a user attribute file; empty fields become missing values."""
    cols = format_spec.columns
    cu = cols.index("user")
    pos = {a: cols.index(a) for a in attributes}
    rows: dict[str, dict[str, object]] = {}
    for lineno, parts in _iter_rows(path, format_spec):
        if len(parts) <= cu:
            raise DataError(f"{path}:{lineno}: missing user field")
        u = parts[cu].strip()
        if u in rows:
            raise DataError(f"{path}:{lineno}: duplicate user {u}")
        row = {}
        for a, p in pos.items():
            v = _coerce_label(parts[p]) if p < len(parts) else None
            if v is not None:
                row[a] = v
        rows[u] = row
    return AttributeTable(rows, tuple(attributes))


def read_lfm_events(path: str | Path, format_spec: FormatSpec = LFM_EVENTS) -> Iterator[tuple[str, str, int, int]]:
    """
    Yield ``(user, artist, 1, timestamp)`` play events from a listening log.

    The artist key is the artist id when present, otherwise the artist name.
    ISO-8601 timestamps are converted to epoch seconds.
    """
    from datetime import datetime

    cols = format_spec.columns
    cu, ct = cols.index("user"), cols.index("timestamp")
    ca, cn = cols.index("artist_id"), cols.index("artist")
    for lineno, parts in _iter_rows(path, format_spec):
        if len(parts) <= max(cu, ct, cn):
            raise DataError(f"{path}:{lineno}: expected {len(cols)} fields, got {len(parts)}")
        artist = parts[ca].strip() or parts[cn].strip()
        if not artist:
            continue
        raw = parts[ct].strip()
        try:
            ts = int(datetime.fromisoformat(raw.replace("Z", "+00:00")).timestamp())
        except ValueError:
            raise DataError(f"{path}:{lineno}: bad timestamp {raw!r}") from None
        yield parts[cu].strip(), artist, 1, ts


def aggregate_and_normalize_events(
    events: Iterable[Sequence],
    attributes: AttributeTable,
    min_items: int = 20,
    age_bounds: tuple[int, int] = (0, 125),
) -> tuple[InteractionSet, AttributeTable]:
    """
    Turn play events into ratings on [1, 5].

    Users lacking gender or age, or with age outside the open interval
    ``age_bounds``, are dropped first; plays are summed per (user, artist);
    users with fewer than ``min_items`` distinct artists are dropped; then
    ``1 + 4 (ln(1+plays) - m) / (M - m)`` is applied with global ``m``/``M``
    computed on what remains.  Each pair keeps its latest event timestamp.
    """
    if min_items < 1:
        raise ValueError("min_items must be >= 1")
    lo_age, hi_age = age_bounds

    def eligible(u):
        row = attributes.rows.get(u)
        if row is None or row.get("gender") is None or row.get("age") is None:
            return False
        age = row["age"]
        return isinstance(age, int) and lo_age < age < hi_age

    plays: dict[tuple[str, str], int] = defaultdict(int)
    last_ts: dict[tuple[str, str], int] = {}
    ok: dict[str, bool] = {}
    for ev in events:
        u, a, n = str(ev[0]), str(ev[1]), int(ev[2])
        if n < 1:
            raise DataError(f"play count {n} < 1 for ({u}, {a})")
        if u not in ok:
            ok[u] = eligible(u)
        if not ok[u]:
            continue
        plays[(u, a)] += n
        if len(ev) > 3 and ev[3] is not None:
            last_ts[(u, a)] = max(int(ev[3]), last_ts.get((u, a), int(ev[3])))

    per_user: dict[str, int] = defaultdict(int)
    for u, _ in plays:
        per_user[u] += 1
    kept = [(ua, n) for ua, n in plays.items() if per_user[ua[0]] >= min_items]
    if not kept:
        raise DataError("all users filtered out")

    logp = np.log1p(np.array([n for _, n in kept], dtype=np.float64))
    m, big_m = logp.min(), logp.max()
    if big_m == m:
        warnings.warn("degenerate normalization: all play counts equal, ratings set to 5", RuntimeWarning, stacklevel=2)
        ratings = np.full(len(kept), 5.0)
    else:
        ratings = 1.0 + 4.0 * (logp - m) / (big_m - m)
        np.clip(ratings, 1.0, 5.0, out=ratings)
    has_ts = len(last_ts) == len(plays)
    recs = [
        (u, a, r, last_ts[(u, a)]) if has_ts else (u, a, r)
        for ((u, a), _), r in zip(kept, ratings)
    ]
    iset = InteractionSet.from_records(recs, (1.0, 5.0))
    users = set(iset.user_ids)
    table = AttributeTable(
        {u: dict(attributes.rows[u]) for u in attributes.rows if u in users},
        attributes.schema,
    )
    return iset, table


def filter_min_interactions(iset: InteractionSet, k: int) -> InteractionSet:
    """Single-pass removal of users with fewer than ``k`` interactions; codes rebuilt."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if k == 0:
        return iset
    keep = iset.user_counts[iset.users] >= k
    if not keep.any():
        raise DataError(f"no user has at least {k} interactions")
    out = iset.take(np.flatnonzero(keep)).compact()
    out.validate()
    return out


@dataclass(frozen=True)
class GroupAssignment:
    """
    Binary group label per user: 0 for the majority group, 1 for the protected minority.

    ``description`` records how the cut was made, e.g. ``"age < 35 | age >= 35"``.
    """

    attribute_name: str
    labels: Mapping[str, int]
    group_shares: tuple[float, float]
    description: str = ""
    categories: tuple[tuple, tuple] = field(default=((), ()))

    def __post_init__(self):
        vals = np.fromiter(self.labels.values(), dtype=np.int64, count=len(self.labels))
        if not set(np.unique(vals).tolist()) <= {0, 1}:
            raise DataError("group labels must be 0 or 1")
        n1 = int(vals.sum())
        if n1 == 0 or n1 == len(vals):
            raise DataError("both groups must be non-empty")
        s1 = n1 / len(vals)
        if abs(self.group_shares[0] - (1 - s1)) > 1e-12 or abs(self.group_shares[1] - s1) > 1e-12:
            raise DataError("group shares inconsistent with labels")

    @classmethod
    def from_labels(cls, attribute_name: str, labels: Mapping[str, int], description: str = "", categories=((), ())):
        labels = {str(u): int(g) for u, g in labels.items()}
        n1 = sum(labels.values())
        s1 = n1 / len(labels) if labels else 0.0
        return cls(attribute_name, labels, (1.0 - s1, s1), description, categories)

    def label_array(self, user_ids: Sequence[str]) -> np.ndarray:
        """Labels aligned with ``user_ids``; -1 where the user is unlabeled (e.g. synthetic)."""
        return np.array([self.labels.get(u, -1) for u in user_ids], dtype=np.int64)

    def swapped(self) -> GroupAssignment:
        return GroupAssignment(
            self.attribute_name,
            {u: 1 - g for u, g in self.labels.items()},
            (self.group_shares[1], self.group_shares[0]),
            self.description + " (swapped)",
            (self.categories[1], self.categories[0]),
        )


def _category_key(c):
    return (0, c, "") if isinstance(c, (int, float)) else (1, 0, str(c))


def binarize_attribute(table: AttributeTable, attribute: str, users: InteractionSet) -> GroupAssignment:
    """
    Split the ordered categories of ``attribute`` into two consecutive blocks.

    The cut minimizes the share imbalance over users present in ``users``;
    ties go to the lower cut.  Group 1 is the smaller block (on equal shares,
    the block of higher categories).  A two-category attribute passes through.
    """
    present = [users.user_ids[u] for u in users.present_users()]
    values = []
    for u in present:
        v = table.get(u, attribute)
        if v is None:
            raise DataError(f"user {u} lacks attribute {attribute!r}")
        values.append(v)
    cats = sorted(set(values), key=_category_key)
    if len(cats) < 2:
        raise DataError(f"attribute {attribute!r} has a single observed category {cats}")
    counts = np.array([sum(1 for v in values if v == c) for c in cats], dtype=np.int64)
    total = counts.sum()
    best_cut, best_gap = None, math.inf
    for cut in range(1, len(cats)):
        low = counts[:cut].sum()
        gap = abs(int(low) - int(total - low))
        if gap < best_gap:
            best_cut, best_gap = cut, gap
    low_cats, high_cats = tuple(cats[:best_cut]), tuple(cats[best_cut:])
    n_low = int(counts[:best_cut].sum())
    minority_low = n_low < total - n_low
    group1 = set(low_cats) if minority_low else set(high_cats)
    labels = {u: int(v in group1) for u, v in zip(present, values)}
    if len(cats) == 2:
        desc = f"{attribute}: {low_cats[0]} | {high_cats[0]}"
    else:
        desc = f"{attribute} < {high_cats[0]} | {attribute} >= {high_cats[0]}"
    cat_groups = (high_cats, low_cats) if minority_low else (low_cats, high_cats)
    return GroupAssignment.from_labels(attribute, labels, desc, cat_groups)
