import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import loss_toy, real_user_glv, rerank_bruteforce

from recfair.data import SYNTHETIC_PREFIX, GroupAssignment, InteractionSet
from recfair.mitigations import (
    COMPATIBILITY,
    AntidoteObjective,
    MitigationSpec,
    adjust_ratings,
    antidote_augment,
    apply_slim_balance,
    compatible,
    fit_mitigated,
    fit_pmf_independent,
    independence_penalty,
    matrix_csv,
    mitigated_topn,
    optimize_antidote,
    rerank_fair,
    resample_balanced,
    selection_gap,
)
from recfair.mitigations.adjust import group_offsets
from recfair.mitigations.independence import TERMS, PenalizedMF
from recfair.models import FittedModel, ModelSpec, TopNLists, fit_als, fit_mf_sgd, fit_model, predict_scores
from recfair.models.mf import SGDTrainer
from recfair.synthetic import PlantedBias, generate


def _counted(n0, n1, n_items=60):
    recs, labels = [], {}
    for g, total in ((0, n0), (1, n1)):
        for k in range(total):
            u = f"g{g}u{k // n_items}"
            labels[u] = g
            recs.append((u, f"i{k % n_items}", 3.0))
    return InteractionSet.from_records(recs), GroupAssignment.from_labels("g", labels)


def _group_counts(iset, groups):
    lab = groups.label_array(iset.user_ids)[iset.users]
    return int((lab == 0).sum()), int((lab == 1).sum())


# resampling


def test_resample_balanced_no_op():
    s, g = _counted(100, 100)
    out = resample_balanced(s, g, 0)
    assert sorted(out.records()) == sorted(s.records())


def test_resample_counts_and_minority_untouched():
    s, g = _counted(200, 100)
    out = resample_balanced(s, g, 0)
    assert _group_counts(out, g) == (100, 100)
    g1 = lambda x: {r for r in x.records() if r[0].startswith("g1")}  # noqa: E731
    assert g1(out) == g1(s)
    assert set(out.records()) <= set(s.records())


def test_resample_seeds():
    s, g = _counted(200, 100)
    a, b, c = (set(resample_balanced(s, g, k).records()) for k in (0, 0, 1))
    assert a == b and a != c


@given(st.integers(1, 300), st.integers(1, 300), st.integers(0, 100))
def test_resample_equal_counts_property(n0, n1, seed):
    s, g = _counted(n0, n1)
    out = resample_balanced(s, g, seed)
    c0, c1 = _group_counts(out, g)
    assert c0 == c1 == min(n0, n1)


def test_resample_by_users(tiny, tiny_groups):
    out = resample_balanced(tiny, tiny_groups, 0, "users")
    assert len(np.unique(out.users)) == 4


def test_resample_needs_both_groups(tiny):
    g = GroupAssignment.from_labels("g", {"u0": 0, "u1": 0, "u2": 0, "u3": 0, "zz": 1})
    with pytest.raises(ValueError):
        resample_balanced(tiny, g, 0)


# score adjustment


def test_parity_equalizes_train_means(tiny, tiny_groups):
    m = fit_model(ModelSpec("item_knn", {"N": 3}), tiny)
    pred = predict_scores(m, tiny)
    adj = adjust_ratings(pred, m, tiny, tiny_groups, "parity", clip=False)
    lab = tiny_groups.label_array(tiny.user_ids)[tiny.users]
    assert abs(adj.scores[lab == 0].mean() - adj.scores[lab == 1].mean()) <= 1e-12
    d = pred.scores[lab == 0].mean() - pred.scores[lab == 1].mean()
    assert np.allclose(adj.scores[lab == 1] - pred.scores[lab == 1], d, atol=1e-15)


def test_value_mode_zero_residual_identity():
    # rank-1 complete data recovered exactly by ALS: residuals vanish
    recs = [(f"u{a}", f"i{b}", float((a + 1) * (b + 1)) / 4 + 1) for a in range(3) for b in range(3)]
    s = InteractionSet.from_records(recs)
    g = GroupAssignment.from_labels("g", {"u0": 0, "u1": 0, "u2": 1})
    m = fit_als(s, k=3, reg=1e-9, epochs=50)
    pred = predict_scores(m, s)
    assert np.allclose(adjust_ratings(pred, m, s, g, "value").scores, pred.scores, atol=1e-6)


class _ShiftedOracle(FittedModel):
    """Reproduces the training ratings, minus ``bias`` for group-1 users."""

    def __init__(self, train, groups, bias):
        super().__init__(ModelSpec("als", {"k": 1, "reg": 1.0, "epochs": 1}), train)
        self.table = train.to_dense()
        self.shift = bias * (groups.label_array(train.user_ids) == 1)

    def _score(self, u, i):
        return self.table[u, i] - self.shift[u]


def test_value_mode_removes_injected_bias():
    data = generate(PlantedBias(n_users=40, n_items=30, noise=0.0, per_user=(10, 20), seed=3))
    s, g = data.interactions, data.groups
    model = _ShiftedOracle(s, g, 0.5)
    assert group_offsets(model, s, g, "value") == pytest.approx((0.0, 0.5), abs=1e-12)
    adj = adjust_ratings(predict_scores(model, s), model, s, g, "value", clip=False)
    resid = s.ratings - adj.scores
    lab = g.label_array(s.user_ids)[s.users]
    assert abs(resid[lab == 1].mean()) <= 1e-9 * 0.5


def test_adjusted_model_scores_consistent(tiny, tiny_groups):
    spec = ModelSpec("als", {"k": 2, "reg": 0.1, "epochs": 5})
    mit = MitigationSpec("ashokan_adjust", {"mode": "parity"})
    m = fit_mitigated(mit, spec, tiny, tiny_groups)
    rows = m.score_rows(np.arange(tiny.n_users))
    s = predict_scores(m, tiny)
    assert np.allclose(rows[tiny.users, tiny.items], s.scores, atol=1e-12)
    lo, hi = tiny.rating_scale
    assert rows.min() >= lo and rows.max() <= hi


# independence penalty


@pytest.mark.parametrize("term", TERMS)
def test_penalty_gradient_fd(term):
    rng = np.random.default_rng(0)
    for _ in range(20):
        y = rng.normal(3, 1, 10)
        g1 = np.arange(10) >= 5  # 5 users per group, two predictions each
        val, grad = independence_penalty(term, y, g1)
        fd = np.empty_like(y)
        h = 1e-6
        for k in range(len(y)):
            e = np.zeros_like(y)
            e[k] = h
            fd[k] = (independence_penalty(term, y + e, g1)[0] - independence_penalty(term, y - e, g1)[0]) / (2 * h)
        assert val >= 0
        assert np.linalg.norm(fd - grad) <= 1e-4 * max(np.linalg.norm(fd), 1e-8)


@pytest.mark.parametrize("term", TERMS)
def test_penalty_zero_for_equal_statistics(term):
    y = np.array([1.0, 2.0, 3.0, 3.0, 2.0, 1.0])
    val, _ = independence_penalty(term, y, np.arange(6) >= 3)
    assert abs(val) <= 1e-12


@pytest.mark.parametrize("term", TERMS)
def test_penalized_objective_gradient_fd(tiny, tiny_groups, term):
    spec = ModelSpec("mf_sgd", {"variant": "pmf", "k": 2, "lr": 0.01, "reg": 0.1, "epochs": 1}, 0)
    t = SGDTrainer(tiny, spec)
    rng = np.random.default_rng(1)
    p = t.params
    p.P[:] = rng.normal(size=p.P.shape)
    p.Q[:] = rng.normal(size=p.Q.shape)
    pen = PenalizedMF(t, tiny_groups.label_array(tiny.user_ids)[tiny.users], term, 2.0)
    g = pen.gradient(p)
    h = 1e-6
    for name in ("P", "Q"):
        arr, grad = getattr(p, name), getattr(g, name)
        fd = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = pen.objective(p)
            arr[idx] = old - h
            dn = pen.objective(p)
            arr[idx] = old
            fd[idx] = (up - dn) / (2 * h)
        assert np.linalg.norm(fd - grad) <= 1e-4 * np.linalg.norm(fd)


def test_eta_zero_is_plain_mf(tiny, tiny_groups):
    spec = ModelSpec("mf_sgd", {"variant": "pmf", "k": 2, "lr": 0.01, "reg": 0.1, "epochs": 5}, 4)
    a = fit_pmf_independent(tiny, tiny_groups, "mean_m", 0.0, spec)
    b = fit_mf_sgd(tiny, spec=spec)
    assert np.array_equal(a.params.P, b.params.P) and np.array_equal(a.params.Q, b.params.Q)


def test_eta_validation(tiny, tiny_groups):
    for eta in (-1.0, float("inf"), float("nan")):
        with pytest.raises(ValueError):
            fit_pmf_independent(tiny, tiny_groups, "mean_m", eta)


def _train_gap(model, train, groups):
    s = predict_scores(model, train).scores
    lab = groups.label_array(train.user_ids)[train.users]
    return float(s[lab == 0].mean() - s[lab == 1].mean())


def test_mean_m_shrinks_planted_train_gap():
    data = generate(PlantedBias(offset=1.0, noise=0.3, seed=1))
    spec = ModelSpec("mf_sgd", {"variant": "pmf", "k": 10, "lr": 0.01, "reg": 0.05, "epochs": 30}, 0)
    plain = _train_gap(fit_pmf_independent(data.interactions, data.groups, "mean_m", 0.0, spec), data.interactions, data.groups)
    fair = _train_gap(fit_pmf_independent(data.interactions, data.groups, "mean_m", 1e4, spec), data.interactions, data.groups)
    assert abs(fair) <= 0.2 * abs(plain)


# re-ranking


def _pool(score_rows, prefix="i"):
    return TopNLists(
        {f"u{k}": tuple((f"{prefix}{j}", float(s)) for j, s in enumerate(row)) for k, row in enumerate(score_rows)}
    )


def test_rerank_infinite_eps_is_prefix():
    rng = np.random.default_rng(0)
    rows = -np.sort(-rng.random((6, 8)), axis=1)
    base = _pool(rows)
    g = GroupAssignment.from_labels("g", {f"u{k}": int(k >= 3) for k in range(6)})
    out = rerank_fair(base, g, n=3, epsilon=float("inf"))
    assert out.lists == {u: recs[:3] for u, recs in base.lists.items()}


def test_rerank_two_user_example():
    rows = [[0.9, 0.8, 0.1], [0.5, 0.4, 0.3]]
    g = GroupAssignment.from_labels("g", {"u0": 0, "u1": 1})
    out = rerank_fair(_pool(rows), g, n=2, epsilon=0.25)
    gap, total = selection_gap(_pool(rows), out, g)
    _, best, feasible = rerank_bruteforce(rows, [0, 1], 2, 0.25)
    assert feasible and abs(gap) <= 0.25
    assert total == pytest.approx(best, abs=1e-12)
    assert out.items_of("u0") == ["i0", "i2"] and out.items_of("u1") == ["i0", "i1"]


@given(st.integers(0, 2**31), st.integers(2, 6), st.integers(2, 8), st.floats(0.0, 0.3))
def test_rerank_structure_and_gap_never_grows(seed, n_users, m, eps):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, m))
    rows = -np.sort(-rng.uniform(0.05, 1.0, (n_users, m)), axis=1)
    group = np.array([0] + [1] + list(rng.integers(0, 2, n_users - 2)))
    g = GroupAssignment.from_labels("g", {f"u{k}": int(group[k]) for k in range(n_users)})
    base = _pool(rows)
    out = rerank_fair(base, g, n=n, epsilon=eps)
    for u in base:
        assert set(out.items_of(u)) <= set(base.items_of(u)) and len(out[u]) == n
        sc = [s for _, s in out[u]]
        assert sc == sorted(sc, reverse=True)
    prefix = TopNLists({u: recs[:n] for u, recs in base.lists.items()})
    assert abs(selection_gap(base, out, g)[0]) <= abs(selection_gap(base, prefix, g)[0]) + 1e-12


def test_rerank_pair_move_escapes_overshoot():
    # single swaps all overshoot; one swap per user lands inside the tolerance
    rows = [[0.964, 0.618, 0.453, 0.123], [0.822, 0.499, 0.479, 0.116]]
    g = GroupAssignment.from_labels("g", {"u0": 0, "u1": 1})
    out = rerank_fair(_pool(rows), g, n=1, epsilon=0.125)
    gap, total = selection_gap(_pool(rows), out, g)
    _, best, feasible = rerank_bruteforce(rows, [0, 1], 1, 0.125)
    assert feasible and abs(gap) <= 0.125
    assert total == pytest.approx(best, abs=1e-12)


def test_rerank_negative_eps(tiny_groups):
    with pytest.raises(ValueError):
        rerank_fair(_pool([[1.0]]), tiny_groups, n=1, epsilon=-0.1)


def test_rerank_unlabeled_users_keep_prefix():
    rows = [[0.9, 0.8, 0.1], [0.5, 0.4, 0.3], [0.7, 0.6, 0.5]]
    g = GroupAssignment.from_labels("g", {"u0": 0, "u1": 1})
    out = rerank_fair(_pool(rows), g, n=2, epsilon=0.0)
    assert out.items_of("u2") == ["i0", "i1"]


def test_mitigated_topn_uses_pool(tiny, tiny_groups):
    spec = ModelSpec("mf_sgd", {"variant": "biased", "k": 2, "lr": 0.01, "reg": 0.1, "epochs": 3})
    m = fit_mf_sgd(tiny, spec=spec)
    mit = MitigationSpec("li_rerank", {"m": 4, "epsilon": 0.0})
    out = mitigated_topn(mit, m, tiny, tiny_groups, n=2)
    assert all(len(v) <= 2 for v in out.lists.values())


# antidote


def test_antidote_gradient_fd():
    train, groups = loss_toy(n_users=6, n_items=4, seed=2)
    model = fit_als(train, k=1, reg=0.1, epochs=20)
    obj = AntidoteObjective(train, groups, model, 0.1)
    X = np.random.default_rng(0).uniform(1, 5, (2, 4))
    _, g = obj.gradient(X)
    fd = np.zeros_like(X)
    h = 1e-5
    for idx in np.ndindex(X.shape):
        e = np.zeros_like(X)
        e[idx] = h
        fd[idx] = (obj.value(X + e) - obj.value(X - e)) / (2 * h)
    assert np.linalg.norm(fd - g) <= 1e-3 * np.linalg.norm(fd)


@pytest.mark.parametrize("seed", range(3))
def test_antidote_lowers_glv(seed):
    train, groups = loss_toy(seed=seed)
    spec = ModelSpec("als", {"k": 1, "reg": 0.1, "epochs": 20}, 0)
    before = real_user_glv(fit_als(train, spec), train, groups)
    aug = antidote_augment(train, groups, spec, budget=1, step=1.0, iterations=20)
    after = real_user_glv(fit_als(aug, spec), aug, groups)
    assert after < before
    res = optimize_antidote(train, groups, spec, 1, 1.0, 20)
    assert all(b < a for a, b in zip(res.glv_history, res.glv_history[1:]))


def test_antidote_budget_zero_identity(tiny, tiny_groups):
    spec = ModelSpec("als", {"k": 1, "reg": 0.1, "epochs": 5})
    with pytest.warns(UserWarning):
        out = antidote_augment(tiny, tiny_groups, spec, budget=0, iterations=3)
    assert out is tiny
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert antidote_augment(tiny, tiny_groups, spec, budget=0, iterations=0) is tiny


def test_antidote_appends_reserved_users(tiny, tiny_groups):
    spec = ModelSpec("als", {"k": 1, "reg": 0.1, "epochs": 5})
    out = antidote_augment(tiny, tiny_groups, spec, budget=2, iterations=2)
    real = {r for r in out.records() if not r[0].startswith(SYNTHETIC_PREFIX)}
    assert real == set(tiny.records())
    synth = [r for r in out.records() if r[0].startswith(SYNTHETIC_PREFIX)]
    assert len(synth) == 2 * tiny.n_items
    assert all(1.0 <= r[2] <= 5.0 for r in synth)
    assert all(tiny_groups.labels.get(r[0]) is None for r in synth)


# SLIM balance


def _balance_toy():
    R = np.array([[5, 3, 4, 1], [5, 3, 4, 1], [5, 3, 4, 1], [1, 2, 1, 5], [2, 5, 3, 1]], dtype=float)
    recs = [(f"u{a}", f"i{b}", R[a, b]) for a in range(5) for b in range(4)]
    groups = GroupAssignment.from_labels("g", {"u0": 0, "u1": 0, "u2": 1, "u3": 1, "u4": 0})
    return InteractionSet.from_records(recs), groups


def test_slim_balance_sweep_monotone():
    train, groups = _balance_toy()
    spec = ModelSpec("slim_u", {"l1": 0.0, "l2": 1.0})
    p = np.where(groups.label_array(train.user_ids) == 1, -1.0, 1.0)
    prev = None
    for lam in (0.0, 1.0, 10.0, 100.0):
        W = apply_slim_balance(train, groups, spec, lam).W
        imb = np.abs(W @ p)
        if prev is not None:
            assert np.all(imb <= prev + 1e-9)
        prev = imb
    assert imb[0] <= 1e-1


def test_slim_balance_zero_identity():
    train, groups = _balance_toy()
    spec = ModelSpec("slim_u", {"l1": 0.1, "l2": 1.0})
    a = fit_model(spec, train).W
    b = apply_slim_balance(train, groups, spec, 0.0).W
    assert np.abs(a - b).max() <= 1e-9


# compatibility


def test_compatibility_matrix():
    assert compatible("antidote", "als") and not compatible("antidote", "mf_sgd")
    lines = matrix_csv().splitlines()
    assert lines[0].startswith("mitigation,stage,popularity")
    assert len(lines) == 1 + len(COMPATIBILITY)
    with pytest.raises(ValueError):
        fit_mitigated(MitigationSpec("antidote"), ModelSpec("popularity"), *_balance_toy())


def test_mitigation_spec_validation():
    for kind, params in (
        ("kamishima_independence", {"term": "nope"}),
        ("li_rerank", {"epsilon": -1}),
        ("antidote", {"step": 0}),
        ("ashokan_adjust", {"mode": "x"}),
    ):
        with pytest.raises(ValueError):
            MitigationSpec(kind, params)
