import math

import pytest

from recfair.harness.cli import main
from recfair.harness.config import ConfigError, parse_config
from recfair.harness.report import CellMetrics, MetricReport, ReportRow, emit_csv, emit_markdown, parse_csv
from recfair.harness.runner import Experiment, grid_search, run_experiment
from recfair.models.base import TrainingError

SYNTH = """
[experiment]
name = synth
task = topn
seed = 0

[data]
preset = synthetic
n_users = 50
n_items = 40
per_user_min = 10
per_user_max = 20

[split]
test_frac = 0.2
valid_frac = 0.1

[metrics]
k = 5

[model.popularity]

[mitigation.resample]
balance_by = interactions
"""


def _cfg(text=SYNTH, **replace):
    for old, new in replace.items():
        text = text.replace(old, new)
    return parse_config(text)


# -- grid search -------------------------------------------------------------


def test_grid_search_singleton():
    best, trace = grid_search(["only"], lambda c: 0.3)
    assert best == 0 and trace[0]["score"] == 0.3


def test_grid_search_minimizes_rmse():
    scores = {"a": 0.9, "b": 0.8}
    best, _ = grid_search(["a", "b"], scores.__getitem__, maximize=False)
    assert best == 1


def test_grid_search_ties_keep_first():
    best, _ = grid_search([0, 1, 2], lambda c: 1.0)
    assert best == 0


def test_grid_search_skips_failed_points():
    def ev(c):
        if c == 0:
            raise TrainingError("diverged")
        return c

    best, trace = grid_search([0, 1, 2], ev)
    assert best == 2 and trace[0]["status"] == "failed"
    with pytest.raises(TrainingError):
        grid_search([0], ev)


# -- configuration -----------------------------------------------------------


@pytest.mark.parametrize(
    "old,new",
    [
        ("[metrics]", "[bogus]"),
        ("[mitigation.resample]", "[mitigation.slim_balance]"),
        ("preset = synthetic", "preset = nope"),
        ("valid_frac = 0.1", "valid_frac = 1.5"),
        ("task = topn", "task = ranking"),
        ("k = 5", "k = 0"),
    ],
)
def test_config_errors(old, new):
    with pytest.raises(ConfigError):
        _cfg(**{old: new})


def test_incompatible_mitigation_rejected_before_training():
    text = SYNTH + "\n[mitigation.kamishima_independence]\nmodels = popularity\n"
    with pytest.raises(ConfigError, match="does not apply"):
        parse_config(text)


def test_rerank_needs_topn_task():
    text = SYNTH.replace("task = topn", "task = rating") + "\n[model.mf_sgd]\n[mitigation.li_rerank]\n"
    with pytest.raises(ConfigError, match="topn"):
        parse_config(text)


def test_grid_without_validation_rejected():
    text = SYNTH.replace("valid_frac = 0.1", "valid_frac = 0") + "\n[model.item_knn]\nN = 5, 10\n"
    with pytest.raises(ConfigError, match="valid_frac"):
        parse_config(text)


def test_default_targets_follow_compatibility():
    cfg = parse_config(SYNTH + "\n[model.slim_u]\nl1 = 0.1\nl2 = 1.0\n")
    assert cfg.mitigation("resample").models == ("popularity",)
    assert cfg.cells() == [("popularity", None), ("slim_u", None), ("popularity", "resample")]


def test_grid_expansion_order():
    cfg = parse_config(SYNTH + "\n[model.mf_sgd]\nk = 2, 4\nlr = 0.01\nreg = 0.1, 0.2\nepochs = 5\n")
    specs = cfg.model("mf_sgd").specs()
    assert [(s.params["k"], s.params["reg"]) for s in specs] == [(2, 0.1), (2, 0.2), (4, 0.1), (4, 0.2)]


# -- report ------------------------------------------------------------------


def _report():
    a = CellMetrics(0.25, 0.004, 0.004, 0.04, 0.04, 10)
    b = CellMetrics(0.2, -0.01, 0.3, 0.1 / 3, 0.049999, 10)
    c = CellMetrics(math.nan, 0.0, 1.0, 0.0, 1.0, 0)
    return MetricReport("topn", "NDCG@10", (ReportRow("Balanced resampling", "PRE", "TopPopular", a, b),
                                             ReportRow("Score adjustment", "POST", "ItemKNN", b, c)), {"x": [1, 2]})


def test_markers():
    a, b, c = _report().rows[0].base, _report().rows[0].mit, _report().rows[1].mit
    assert (a.dp_marker, a.ks_marker) == ("^", "*")
    assert (b.dp_marker, b.ks_marker) == ("", "*")
    assert c.dp_marker == ""
    md = emit_markdown(_report())
    assert "0.004^" in md and "0.040*" in md and "n/a" in md


def test_csv_round_trip_is_lossless():
    text = emit_csv(_report())
    back = parse_csv(text)
    assert emit_csv(back) == text
    assert back.rows[0].mit.ks == 0.1 / 3


# -- end to end --------------------------------------------------------------


def test_synthetic_run_shape_and_cache(tmp_path):
    cfg = _cfg()
    exp = Experiment(cfg, tmp_path)
    rep = exp.run()
    assert len(rep.rows) == 1
    row = rep.rows[0]
    assert (row.procedure, row.stage, row.model) == ("Balanced resampling", "PRE", "TopPopular")
    assert row.base.n_users == row.mit.n_users > 0
    assert exp.complete
    first = (exp.dir / "report.csv").read_bytes()
    # a second experiment on the same directory reuses the finished artifacts
    again = Experiment(cfg, tmp_path).run()
    assert emit_csv(again).encode() == first


def test_byte_identical_across_runs(tmp_path):
    a = run_experiment(_cfg(), tmp_path / "a")
    b = run_experiment(_cfg(), tmp_path / "b")
    assert emit_csv(a) == emit_csv(b)
    assert emit_markdown(a) == emit_markdown(b)


def test_config_change_moves_run_directory(tmp_path):
    a = Experiment(_cfg(), tmp_path)
    b = Experiment(_cfg(**{"seed = 0": "seed = 1"}), tmp_path)
    assert a.dir != b.dir


def test_independence_penalty_run_lowers_ks(tmp_path):
    text = """
[experiment]
name = planted
task = rating
seed = 0
[data]
preset = synthetic
offset = 1.0
noise = 0.3
seed = 1
[split]
test_frac = 0.2
valid_frac = 0
[model.mf_sgd]
variant = pmf
k = 10
lr = 0.01
reg = 0.05
epochs = 30
[mitigation.kamishima_independence]
term = mean_m
eta = 10000
"""
    rep = run_experiment(parse_config(text), tmp_path)
    (row,) = rep.rows
    assert row.mit.ks < row.base.ks
    assert abs(row.mit.dp) <= abs(row.base.dp) + 0.05


# -- command line ------------------------------------------------------------


def test_cli_compat(capsys):
    assert main(["compat"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].startswith("mitigation,stage,")


def test_cli_config_error(tmp_path):
    p = tmp_path / "bad.ini"
    p.write_text(SYNTH.replace("[metrics]", "[bogus]"))
    assert main(["run", str(p), "--cache", str(tmp_path / "c")]) == 2
    assert main(["run", str(tmp_path / "missing.ini")]) == 2


def test_cli_data_error(tmp_path):
    p = tmp_path / "bad.ini"
    p.write_text(
        "[experiment]\nname = x\n[data]\npreset = canonical\nratings = nowhere.tsv\nusers = nowhere.tsv\n"
        "attribute = gender\n[model.popularity]\n"
    )
    assert main(["prepare", str(p), "--cache", str(tmp_path / "c")]) == 3


def test_cli_run_csv(tmp_path, capsys):
    p = tmp_path / "ok.ini"
    p.write_text(SYNTH)
    assert main(["run", str(p), "--cache", str(tmp_path / "c"), "--format", "csv"]) == 0
    rep = parse_csv(capsys.readouterr().out)
    assert len(rep.rows) == 1 and rep.task == "topn"
