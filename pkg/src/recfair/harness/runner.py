"""
End-to-end protocol: load, preprocess, split, grid-search, train Base, apply
mitigations, evaluate, report.

Every stage writes its artifacts under a content-addressed run directory
``<cache root>/<name>-<config digest>``.  A stage whose ``DONE`` marker exists
is loaded instead of recomputed, and a finished run (``COMPLETE``) is never
written again.  Wall-clock timestamps live only in ``manifest.json`` so that
reports of identical configurations are byte-identical.
"""

from __future__ import annotations

import json
import logging
import os
import platform
import re
from contextlib import contextmanager
from dataclasses import dataclass, fields
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .. import __version__
from ..data import (
    LFM_EVENTS,
    PRESETS,
    DataError,
    GroupAssignment,
    InteractionSet,
    aggregate_and_normalize_events,
    binarize_attribute,
    filter_min_interactions,
    load_attributes,
    load_interactions,
    read_lfm_events,
)
from ..metrics import demographic_parity, ks_independence, ndcg_at_k, rmse
from ..mitigations import fit_mitigated, mitigated_topn
from ..mitigations.compat import LABELS, STAGE, MitigationSpec
from ..models import FittedModel, ModelSpec, ScoreTable, TopNLists, TrainingError, fit_model, predict_scores
from ..splitting import SplitBundle, load_split, merge_sets, split_per_user
from ..synthetic import PlantedBias, generate
from .config import ConfigError, ExperimentConfig
from .report import CellMetrics, MetricReport, ReportRow, emit_report, parse_csv

_log = logging.getLogger(__name__)

CACHE_ENV = "RECFAIR_CACHE"

# documented choices recorded with every report
DECISIONS = {
    "split_rounding": "half_away_from_zero",
    "split_order": "timestamp, ties and missing timestamps by seeded shuffle",
    "min_interaction_filter": "single pass",
    "binarization_ties": "lower cut; group 1 is the smaller block",
    "lfm_normalization": "global log min-max after the item filter",
    "grid_selection": "validation utility only, ties to declaration order",
    "final_training_data": "train split without validation",
    "mann_whitney": "exact enumeration for small samples, else normal approximation",
    "ks_pvalue": "asymptotic Kolmogorov distribution",
}


class StageError(RuntimeError):
    """A protocol stage failed; ``cause`` keeps the original exception."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class Prepared:
    split: SplitBundle
    groups: GroupAssignment
    seen: InteractionSet  # train plus validation, excluded from test recommendations


def grid_search(candidates: Sequence, evaluate: Callable, maximize: bool = True) -> tuple[int, list[dict]]:
    """
    Evaluate every candidate and return the index of the best plus the trace.

    Ties keep the earliest candidate.  Candidates raising :class:`TrainingError`
    or ``FloatingPointError`` are recorded as failed; if all fail the error
    propagates.
    """
    trace: list[dict] = []
    best, best_score = None, None
    for idx, cand in enumerate(candidates):
        try:
            score = float(evaluate(cand))
        except (TrainingError, FloatingPointError, np.linalg.LinAlgError) as exc:
            _log.warning("grid point %d failed: %s", idx, exc)
            trace.append({"index": idx, "status": "failed", "error": str(exc)})
            continue
        trace.append({"index": idx, "status": "ok", "score": score})
        if np.isnan(score):
            continue
        if best is None or (score > best_score if maximize else score < best_score):
            best, best_score = idx, score
    if best is None:
        raise TrainingError(f"all {len(candidates)} grid points failed")
    return best, trace


def _bundled(name: str) -> Path:
    return Path(str(resources.files("recfair.datasets") / name))


def load_dataset(cfg: ExperimentConfig) -> tuple[InteractionSet, GroupAssignment]:
    d = cfg.data
    preset = d["preset"]
    scale = (float(d.get("rating_min", 1.0)), float(d.get("rating_max", 5.0)))
    if preset == "synthetic":
        names = {f.name for f in fields(PlantedBias)}
        params = {k: v for k, v in d.items() if k in names}
        if "per_user_min" in d or "per_user_max" in d:
            params["per_user"] = (int(d.get("per_user_min", 20)), int(d.get("per_user_max", 60)))
        params.setdefault("seed", cfg.seed)
        syn = generate(PlantedBias(**params))
        return syn.interactions, syn.groups
    if preset == "lfm1k":
        attrs = load_attributes(cfg.resolve(d["users"]), PRESETS["lfm1k"]["users"], ("gender", "age"))
        events = read_lfm_events(cfg.resolve(d["events"]), LFM_EVENTS)
        iset, attrs = aggregate_and_normalize_events(events, attrs, int(d.get("min_items", 20)))
    else:
        if preset == "ml1m_sample":
            ratings, users, fmt = _bundled("ml1m_sample_ratings.dat.gz"), _bundled("ml1m_sample_users.dat"), "ml1m"
        else:
            ratings, fmt = cfg.resolve(d["ratings"]), preset
            users = cfg.resolve(d["users"]) if "users" in d else None
        if users is None:
            raise DataError("data.users is required to derive groups")
        iset = load_interactions(ratings, PRESETS[fmt]["ratings"], scale)
        attrs = load_attributes(users, PRESETS[fmt]["users"], ("gender", "age"))
        if int(d.get("min_items", 0)) > 0:
            iset = filter_min_interactions(iset, int(d["min_items"]))
    return iset, binarize_attribute(attrs, str(d["attribute"]), iset)


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "-", name).strip("-") or "run"


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")


def _save_groups(groups: GroupAssignment, d: Path) -> None:
    with open(d / "groups.tsv", "w", encoding="utf-8", newline="") as f:
        f.write("user\tgroup\n")
        for u in sorted(groups.labels):
            f.write(f"{u}\t{groups.labels[u]}\n")
    _write_json(
        d / "groups.json",
        {
            "attribute": groups.attribute_name,
            "description": groups.description,
            "categories": [list(c) for c in groups.categories],
            "shares": list(groups.group_shares),
        },
    )


def _load_groups(d: Path) -> GroupAssignment:
    meta = json.loads((d / "groups.json").read_text())
    labels = {}
    with open(d / "groups.tsv", encoding="utf-8") as f:
        next(f)
        for line in f:
            u, g = line.rstrip("\n").split("\t")
            labels[u] = int(g)
    cats = tuple(tuple(c) for c in meta["categories"])
    return GroupAssignment.from_labels(meta["attribute"], labels, meta["description"], cats)


class Experiment:
    """One configuration bound to its run directory."""

    def __init__(self, config: ExperimentConfig, cache_root: str | Path | None = None):
        self.cfg = config
        root = cache_root or config.output or os.environ.get(CACHE_ENV) or "runs"
        self.root = Path(root)
        paths = {k: str(config.resolve(v).resolve()) for k, v in config.data.items() if k in ("ratings", "users", "events")}
        self.digest = config.digest({"version": __version__, "paths": paths})
        self.dir = self.root / f"{_slug(config.name)}-{self.digest}"
        self._prepared: Prepared | None = None
        self._models: dict[str, tuple[ModelSpec, FittedModel]] = {}

    @contextmanager
    def stage(self, name: str):
        _log.info("stage %s", name)
        try:
            yield
        except StageError:
            raise
        except Exception as exc:
            _log.error("stage %s failed: %s", name, exc)
            raise StageError(name, exc) from exc

    @property
    def complete(self) -> bool:
        return (self.dir / "COMPLETE").exists()

    def _cell_dir(self, model: str, kind: str | None) -> Path:
        return self.dir / "cells" / _slug(model) / (kind or "base")

    # -- prepare -------------------------------------------------------------
    def prepare(self) -> Prepared:
        if self._prepared is not None:
            return self._prepared
        d = self.dir / "prepared"
        scale = (float(self.cfg.data.get("rating_min", 1.0)), float(self.cfg.data.get("rating_max", 5.0)))
        with self.stage("prepare"):
            if (d / "DONE").exists():
                split = load_split(d, scale)
                groups = _load_groups(d)
            else:
                d.mkdir(parents=True, exist_ok=True)
                iset, groups = load_dataset(self.cfg)
                split = split_per_user(iset, self.cfg.test_frac, self.cfg.valid_frac, self.cfg.split_seed)
                split.check()
                split.save(d)
                _save_groups(groups, d)
                (d / "DONE").write_text("")
            self._prepared = Prepared(split, groups, merge_sets(split.train, split.validation))
        return self._prepared

    # -- utility helpers -----------------------------------------------------
    def _validation_score(self, model: FittedModel, mit: MitigationSpec | None) -> float:
        p = self.prepare()
        val, train = p.split.validation, p.split.train
        if self.cfg.task == "topn":
            users = [val.user_ids[u] for u in val.present_users()]
            recs = mitigated_topn(mit, model, train, p.groups, n=self.cfg.k, users=users)
            return ndcg_at_k(recs, val, self.cfg.k).mean()
        return rmse(predict_scores(model, val), val)[1]

    def _write_outputs(self, model: FittedModel, mit: MitigationSpec | None, d: Path) -> None:
        p = self.prepare()
        test = p.split.test
        if self.cfg.task == "topn":
            users = [test.user_ids[u] for u in test.present_users()]
            mitigated_topn(mit, model, p.seen, p.groups, n=self.cfg.k, users=users).write(d / "topn.tsv")
        if self.cfg.task == "rating" or self.cfg.ks_population == "test_pairs":
            predict_scores(model, test).write(d / "scores.tsv")

    # -- train / mitigate ----------------------------------------------------
    def train(self, name: str) -> ModelSpec:
        """Grid-search and fit the Base model ``name``; returns the selected spec."""
        d = self._cell_dir(name, None)
        if (d / "DONE").exists():
            return _spec_from_json(json.loads((d / "best.json").read_text()))
        entry = self.cfg.model(name)
        p = self.prepare()
        with self.stage(f"train:{name}"):
            d.mkdir(parents=True, exist_ok=True)
            specs = entry.specs()
            fitted: dict[int, FittedModel] = {}

            def evaluate(idx):
                model = fit_model(specs[idx], p.split.train)
                fitted.clear()
                fitted[idx] = model
                return self._validation_score(model, None) if len(specs) > 1 else 0.0

            best, trace = grid_search(range(len(specs)), evaluate, maximize=self.cfg.task == "topn")
            for t in trace:
                t["params"] = dict(specs[t["index"]].params)
            _write_json(d / "trace.json", trace)
            model = fitted.get(best) or fit_model(specs[best], p.split.train)
            _write_json(d / "best.json", _spec_json(specs[best]))
            self._models[name] = (specs[best], model)
            self._write_outputs(model, None, d)
            (d / "DONE").write_text("")
        return specs[best]

    def mitigate(self, name: str, kind: str) -> MitigationSpec:
        """Fit Base's selected hyperparameters under each mitigation setting; keep the best on validation."""
        d = self._cell_dir(name, kind)
        if (d / "DONE").exists():
            return _mit_from_json(json.loads((d / "best.json").read_text()))
        base_spec = self.train(name)
        p = self.prepare()
        with self.stage(f"mitigate:{name}:{kind}"):
            d.mkdir(parents=True, exist_ok=True)
            mits = self.cfg.mitigation(kind).specs()
            fitted: dict[int, FittedModel] = {}

            def evaluate(idx):
                model = fit_mitigated(mits[idx], base_spec, p.split.train, p.groups)
                fitted.clear()
                fitted[idx] = model
                return self._validation_score(model, mits[idx]) if len(mits) > 1 else 0.0

            best, trace = grid_search(range(len(mits)), evaluate, maximize=self.cfg.task == "topn")
            for t in trace:
                t["params"] = dict(mits[t["index"]].params)
            _write_json(d / "trace.json", trace)
            model = fitted.get(best) or fit_mitigated(mits[best], base_spec, p.split.train, p.groups)
            _write_json(d / "best.json", {"kind": kind, "params": dict(mits[best].params), "seed": mits[best].seed})
            self._write_outputs(model, mits[best], d)
            (d / "DONE").write_text("")
        return mits[best]

    # -- evaluate ------------------------------------------------------------
    def evaluate(self, name: str, kind: str | None) -> CellMetrics:
        d = self._cell_dir(name, kind)
        mfile = d / "metrics.json"
        if mfile.exists():
            m = json.loads(mfile.read_text())
            return CellMetrics(**m)
        if kind is None:
            self.train(name)
        else:
            self.mitigate(name, kind)
        p = self.prepare()
        test = p.split.test
        with self.stage(f"evaluate:{name}:{kind or 'base'}"):
            if self.cfg.task == "topn":
                recs = TopNLists.read(d / "topn.tsv")
                util = ndcg_at_k(recs, test, self.cfg.k)
                overall = util.mean()
            else:
                util, overall = rmse(ScoreTable.read(d / "scores.tsv"), test)
            labeled = {u: v for u, v in util.values.items() if u in p.groups.labels}
            dp, dp_p = demographic_parity(util, p.groups)
            pop = recs if self.cfg.task == "topn" and self.cfg.ks_population == "recommended" else None
            if pop is None:
                pop = ScoreTable.read(d / "scores.tsv")
            ks, ks_p = ks_independence(pop, p.groups)
            cell = CellMetrics(float(overall), dp, dp_p, ks, ks_p, len(labeled))
            with open(d / "per_user.tsv", "w", encoding="utf-8", newline="") as f:
                f.write("user\tgroup\tutility\n")
                for u in sorted(util.values):
                    f.write(f"{u}\t{p.groups.labels.get(u, '')}\t{util.values[u]!r}\n")
            _write_json(mfile, cell.as_dict())
        return cell

    # -- report --------------------------------------------------------------
    def model_label(self, name: str) -> str:
        entry = self.cfg.model(name)
        spec = self.train(name)
        label = spec.label
        return label if name == entry.family else f"{label} [{name}]"

    def report(self) -> MetricReport:
        if self.complete:
            return parse_csv((self.dir / "report.csv").read_text())
        started = datetime.now(timezone.utc).isoformat()
        p = self.prepare()
        rows = []
        best_params: dict[str, dict] = {}
        for name, kind in self.cfg.cells():
            cell = self.evaluate(name, kind)
            if kind is None:
                best_params[f"{name}/base"] = dict(self.train(name).params)
                continue
            base = self.evaluate(name, None)
            if base.n_users != cell.n_users:
                raise StageError("report", AssertionError(f"{name}: Base and Mit evaluated different users"))
            best_params[f"{name}/{kind}"] = dict(self.mitigate(name, kind).params)
            rows.append(ReportRow(LABELS[kind], STAGE[kind], self.model_label(name), base, cell))
        provenance = {
            "config_hash": self.digest,
            "version": __version__,
            "seeds": {
                "experiment": self.cfg.seed,
                "split": self.cfg.split_seed,
                "models": {m.name: m.seed for m in self.cfg.models},
                "mitigations": {m.kind: m.seed for m in self.cfg.mitigations},
            },
            "selected": best_params,
            "groups": {
                "attribute": p.groups.attribute_name,
                "description": p.groups.description,
                "shares": list(p.groups.group_shares),
            },
            "split": p.split.metadata(),
            "metrics": {"k": self.cfg.k, "ks_population": self.cfg.ks_population},
            "decisions": DECISIONS,
        }
        utility_name = f"NDCG@{self.cfg.k}" if self.cfg.task == "topn" else "RMSE"
        report = MetricReport(self.cfg.task, utility_name, tuple(rows), provenance)
        emit_report(report, "csv", self.dir / "report.csv")
        emit_report(report, "markdown", self.dir / "report.md")
        _write_json(
            self.dir / "manifest.json",
            {
                "started": started,
                "finished": datetime.now(timezone.utc).isoformat(),
                "python": platform.python_version(),
                "config": self.cfg.canonical(),
            },
        )
        (self.dir / "COMPLETE").write_text("")
        return report

    def run(self) -> MetricReport:
        return self.report()


def _spec_json(spec: ModelSpec) -> dict:
    return {"family": spec.family, "params": dict(spec.params), "seed": spec.seed}


def _spec_from_json(d: dict) -> ModelSpec:
    return ModelSpec(d["family"], d["params"], d["seed"])


def _mit_from_json(d: dict) -> MitigationSpec:
    return MitigationSpec(d["kind"], d["params"], d["seed"])


def run_experiment(config: ExperimentConfig, cache_root: str | Path | None = None) -> MetricReport:
    return Experiment(config, cache_root).run()


__all__ = ["CACHE_ENV", "ConfigError", "Experiment", "StageError", "grid_search", "load_dataset", "run_experiment"]
