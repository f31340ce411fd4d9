import math
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from recfair.data import (
    CANONICAL,
    ML1M_RATINGS,
    ML1M_USERS,
    AttributeTable,
    DataError,
    FormatSpec,
    InteractionSet,
    aggregate_and_normalize_events,
    binarize_attribute,
    filter_min_interactions,
    load_attributes,
    load_interactions,
    write_interactions,
)

CSV = FormatSpec(",", ("user", "item", "rating"))


def _write(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


def _profiles(users, gender="M", age=30):
    return AttributeTable({u: {"gender": gender, "age": age} for u in users}, ("gender", "age"))


def test_load_three_lines(tmp_path):
    p = _write(tmp_path / "r.csv", "u1,i1,5\nu1,i2,3\nu2,i1,4\n")
    s = load_interactions(p, CSV)
    assert (s.n_users, s.n_items, len(s)) == (2, 2, 3)
    assert list(s.records()) == [("u1", "i1", 5.0), ("u1", "i2", 3.0), ("u2", "i1", 4.0)]


def test_duplicate_names_line(tmp_path):
    p = _write(tmp_path / "r.csv", "u1,i1,5\nu2,i1,3\nu1,i1,4\n")
    with pytest.raises(DataError, match=r":3: duplicate pair \(u1, i1\), first seen on line 1"):
        load_interactions(p, CSV)


@pytest.mark.parametrize(
    "text, msg",
    [
        ("u1,i1,5\nu1,i2\n", ":2: expected"),
        ("u1,i1,7\n", ":1: rating 7.0 outside"),
        ("u1,i1,x\n", ":1: bad rating"),
    ],
)
def test_malformed_rows(tmp_path, text, msg):
    p = _write(tmp_path / "r.csv", text)
    with pytest.raises(DataError, match=msg):
        load_interactions(p, CSV)


def test_ml1m_preset(tmp_path):
    p = _write(tmp_path / "ratings.dat", "1::1193::5::978300760\n1::661::3::978302109\n2::1193::4::978298413\n")
    s = load_interactions(p, ML1M_RATINGS)
    assert (s.n_users, s.n_items, len(s)) == (2, 2, 3)
    assert s.timestamps.tolist() == [978300760, 978302109, 978298413]


@pytest.mark.skipif(not os.environ.get("RECFAIR_ML1M_RATINGS"), reason="full ML-1M ratings file not available")
def test_ml1m_full_counts():
    s = load_interactions(os.environ["RECFAIR_ML1M_RATINGS"], ML1M_RATINGS)
    assert (len(s), s.n_users) == (1_000_209, 6040)
    # 3,952 is the largest movie id; only 3,706 movies carry ratings
    assert s.n_items <= 3952 and max(int(i) for i in s.item_ids) == 3952


@given(
    st.lists(
        st.tuples(st.integers(0, 6), st.integers(0, 8), st.integers(1, 5), st.integers(0, 10**9)),
        min_size=1,
        max_size=40,
        unique_by=lambda t: (t[0], t[1]),
    )
)
def test_roundtrip_identity(tmp_path_factory, rows):
    recs = [(f"u{u}", f"i{i}", float(r), t) for u, i, r, t in rows]
    s = InteractionSet.from_records(recs)
    p = tmp_path_factory.mktemp("rt") / "x.tsv"
    write_interactions(s, p)
    back = load_interactions(p, CANONICAL)
    assert sorted(back.records()) == sorted(s.records())


def test_roundtrip_fractional_ratings(tmp_path):
    s = InteractionSet.from_records([("a", "x", 1.0 + 4 * math.log(2) / math.log(54)), ("b", "x", 3.3)])
    write_interactions(s, tmp_path / "x.tsv")
    back = load_interactions(tmp_path / "x.tsv", CANONICAL)
    assert list(back.records()) == list(s.records())


def test_validate_rejects_bad_sets():
    s = InteractionSet.from_records([("a", "x", 3.0), ("b", "y", 4.0)])
    dup = InteractionSet(s.user_ids, s.item_ids, np.array([0, 0]), np.array([0, 0]), s.ratings)
    with pytest.raises(DataError):
        dup.validate()
    with pytest.raises(DataError):
        InteractionSet.from_records([("a", "x", 6.0)])


# aggregation and normalization


def test_normalization_one_six_fiftythree():
    events = [("u", f"a{k}", 1) for k in range(20)]  # 20 distinct artists, one play each
    events += [("u", "a1", 5)] + [("u", "a2", 52)]
    iset, _ = aggregate_and_normalize_events(events, _profiles(["u"]))
    got = {i: r for _, i, r in iset.records()}
    m, big = math.log(2), math.log(54)
    assert got["a0"] == 1.0
    assert got["a2"] == 5.0
    assert got["a1"] == pytest.approx(1 + 4 * (math.log(7) - m) / (big - m), abs=1e-12)
    assert got["a1"] == pytest.approx(2.5204186607866, abs=1e-12)  # hand value; the middle point is not 3


def test_endpoints_map_to_one_and_five():
    events = [("u", f"a{k}", 2) for k in range(20)] + [("u", "lo", 1), ("u", "hi", 100)]
    iset, _ = aggregate_and_normalize_events(events, _profiles(["u"]))
    got = {i: r for _, i, r in iset.records()}
    assert (got["lo"], got["hi"]) == (1.0, 5.0)


def test_nineteen_artists_dropped():
    events = [("keep", f"a{k}", k + 1) for k in range(20)] + [("drop", f"a{k}", 3) for k in range(19)]
    iset, table = aggregate_and_normalize_events(events, _profiles(["keep", "drop"]), min_items=20)
    assert iset.user_ids == ("keep",)
    assert set(table.rows) == {"keep"}
    assert len(iset) == 20


def test_aggregation_sums_plays_and_keeps_latest_time():
    events = [("u", f"a{k}", 1, 100 + k) for k in range(20)] + [("u", "a0", 1, 5), ("u", "a0", 1, 999)]
    iset, _ = aggregate_and_normalize_events(events, _profiles(["u"]))
    ts = {i: t for _, i, _, t in iset.records()}
    assert ts["a0"] == 999
    r = {i: v for _, i, v, _ in iset.records()}
    assert r["a0"] == 5.0 and r["a1"] == 1.0  # a0 has 3 plays, the rest 1


def test_age_and_missing_attribute_filters():
    rows = {
        "ok": {"gender": "f", "age": 30},
        "zero": {"gender": "f", "age": 0},
        "old": {"gender": "m", "age": 125},
        "nog": {"age": 30},
        "noa": {"gender": "m"},
    }
    table = AttributeTable(rows, ("gender", "age"))
    events = [(u, f"a{k}", k + 1) for u in rows for k in range(20)]
    iset, out = aggregate_and_normalize_events(events, table)
    assert iset.user_ids == ("ok",)
    assert set(out.rows) == {"ok"}


def test_all_filtered_raises():
    with pytest.raises(DataError, match="all users filtered"):
        aggregate_and_normalize_events([("u", "a", 1)], _profiles(["u"]))


def test_degenerate_normalization_warns():
    events = [("u", f"a{k}", 4) for k in range(20)]
    with pytest.warns(RuntimeWarning, match="degenerate"):
        iset, _ = aggregate_and_normalize_events(events, _profiles(["u"]))
    assert np.all(iset.ratings == 5.0)


@given(st.lists(st.integers(1, 500), min_size=20, max_size=40))
def test_normalized_ratings_monotone(plays):
    events = [("u", f"a{k}", p) for k, p in enumerate(plays)]
    if len(set(plays)) == 1:
        return
    iset, _ = aggregate_and_normalize_events(events, _profiles(["u"]))
    r = {i: v for _, i, v in iset.records()}
    got = np.array([r[f"a{k}"] for k in range(len(plays))])
    assert got.min() >= 1.0 and got.max() <= 5.0
    order = np.argsort(plays, kind="stable")
    assert np.all(np.diff(got[order]) >= 0)


# filtering


def _counts_set(counts):
    recs = [(f"u{k}", f"i{j}", 3.0) for k, c in enumerate(counts) for j in range(c)]
    return InteractionSet.from_records(recs)


def test_filter_threshold():
    out = filter_min_interactions(_counts_set([25, 19, 20]), 20)
    assert out.user_ids == ("u0", "u2")
    assert len(out) == 45
    assert out.n_items == 25


def test_filter_zero_identity():
    s = _counts_set([3, 1])
    assert filter_min_interactions(s, 0) is s


def test_filter_empty_raises():
    with pytest.raises(DataError):
        filter_min_interactions(_counts_set([3, 1]), 5)


@pytest.mark.skipif(not os.environ.get("RECFAIR_LFM_EVENTS"), reason="LFM-1K listening log not available")
def test_lfm_full_counts():
    from recfair.data import LFM_PROFILES, read_lfm_events

    table = load_attributes(os.environ["RECFAIR_LFM_PROFILES"], LFM_PROFILES)
    iset, _ = aggregate_and_normalize_events(read_lfm_events(os.environ["RECFAIR_LFM_EVENTS"]), table)
    assert (iset.n_users, len(iset)) == (268, 200_586)


# binarization


def _with_labels(labels):
    users = list(labels)
    iset = InteractionSet.from_records([(u, "x", 3.0) for u in users])
    table = AttributeTable({u: {"age": v} for u, v in labels.items()}, ("age",))
    return iset, table


def test_three_equal_categories_lower_cut():
    labels = {f"{c}{k}": c for c in "ABC" for k in range(10)}
    iset, table = _with_labels(labels)
    g = binarize_attribute(table, "age", iset)
    assert g.categories == (("B", "C"), ("A",))
    assert {u for u, v in g.labels.items() if v == 1} == {f"A{k}" for k in range(10)}
    assert g.group_shares == pytest.approx((2 / 3, 1 / 3), abs=1e-15)


def test_binary_pass_through_minority_is_group1():
    labels = {**{f"m{k}": "M" for k in range(7)}, **{f"f{k}": "F" for k in range(3)}}
    iset, table = _with_labels(labels)
    g = binarize_attribute(table, "age", iset)
    assert all(g.labels[u] == (u[0] == "f") for u in labels)


def test_single_category_and_missing():
    iset, table = _with_labels({"a": 1, "b": 1})
    with pytest.raises(DataError, match="single"):
        binarize_attribute(table, "age", iset)
    iset2 = InteractionSet.from_records([("a", "x", 3.0), ("z", "x", 3.0)])
    with pytest.raises(DataError, match="lacks"):
        binarize_attribute(table, "age", iset2)


@given(st.lists(st.integers(0, 40), min_size=2, max_size=32).filter(lambda c: sum(1 for x in c if x) >= 2))
def test_cut_is_optimal_among_consecutive(counts):
    labels = {f"c{j}_{k}": j for j, c in enumerate(counts) for k in range(c)}
    iset, table = _with_labels(labels)
    g = binarize_attribute(table, "age", iset)
    observed = [c for c in counts if c]
    total = sum(observed)
    gaps = [abs(2 * sum(observed[:cut]) - total) for cut in range(1, len(observed))]
    n1 = sum(g.labels.values())
    assert abs(total - 2 * n1) == min(gaps)
    best = gaps.index(min(gaps)) + 1
    low = sum(observed[:best])
    assert n1 == min(low, total - low)
    # group 1 is a consecutive block at one end of the order
    ones = sorted({v for u, v in labels.items() if g.labels[u] == 1})
    zeros = sorted({v for u, v in labels.items() if g.labels[u] == 0})
    assert max(ones) < min(zeros) or min(ones) > max(zeros)


def test_ml1m_bundled_shares():
    from importlib.resources import files

    path = files("recfair.datasets") / "ml1m_users.dat"
    table = load_attributes(path, ML1M_USERS)
    iset = InteractionSet.from_records([(u, "x", 3.0) for u in table.rows])
    age = binarize_attribute(table, "age", iset)
    gender = binarize_attribute(table, "gender", iset)
    assert iset.n_users == 6040
    assert age.description == "age < 35 | age >= 35"
    assert age.group_shares[0] == pytest.approx(0.566, abs=1e-3)
    assert gender.group_shares[0] == pytest.approx(0.717, abs=1e-3)
    assert gender.categories == (("M",), ("F",))
