"""
Experiment configuration read from an INI-style file.

Example::

    [experiment]
    name = ml1m-gender
    task = topn            ; or rating
    seed = 0

    [data]
    preset = ml1m          ; ml1m, lfm1k, canonical, synthetic, ml1m_sample
    ratings = ratings.dat
    users = users.dat
    attribute = gender

    [split]
    test_frac = 0.2
    valid_frac = 0.1

    [metrics]
    k = 10
    ks_population = recommended   ; or test_pairs

    [model.mf_sgd]
    variant = biased
    k = 10, 20             ; comma-separated values form a grid
    lr = 0.01
    reg = 0.02, 0.1
    epochs = 20

    [mitigation.resample]
    balance_by = interactions
    models = mf_sgd        ; optional; default is every compatible model

Each ``[model.<name>]`` section may set ``family`` (default: ``<name>``).
Grids expand in declaration order, last key varying fastest.
"""

from __future__ import annotations

import configparser
import hashlib
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..mitigations.compat import COMPATIBILITY, KINDS, MitigationSpec
from ..models.base import FAMILIES, ModelSpec

TASKS = ("topn", "rating")
KS_POPULATIONS = ("recommended", "test_pairs")
DATA_PRESETS = ("ml1m", "lfm1k", "canonical", "synthetic", "ml1m_sample")

# documented default grids, used when a model section lists no hyperparameters
DEFAULT_GRIDS: dict[str, dict[str, list]] = {
    "popularity": {},
    "avg_rating": {"damping": [0.0, 10.0]},
    "user_knn": {"N": [20, 50], "similarity": ["cosine"]},
    "item_knn": {"N": [20, 50], "similarity": ["cosine"]},
    "mf_sgd": {"variant": ["biased"], "k": [10, 20], "lr": [0.01], "reg": [0.02, 0.1], "epochs": [20]},
    "als": {"k": [10, 20], "reg": [0.1, 1.0], "epochs": [10]},
    "slim_u": {"l1": [0.1, 1.0], "l2": [1.0, 10.0]},
}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def parse_value(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("inf", "+inf", "infinity"):
        return float("inf")
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        return t


def parse_grid(text: str) -> list:
    vals = [parse_value(v) for v in text.split(",") if v.strip()]
    if not vals:
        raise ConfigError(f"empty value list {text!r}")
    return vals


def expand(grid: dict[str, list]) -> list[dict]:
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


@dataclass(frozen=True)
class ModelEntry:
    name: str
    family: str
    grid: dict[str, list]
    seed: int

    def specs(self) -> list[ModelSpec]:
        return [ModelSpec(self.family, p, self.seed) for p in expand(self.grid)]


@dataclass(frozen=True)
class MitigationEntry:
    kind: str
    grid: dict[str, list]
    models: tuple[str, ...]  # model entry names this mitigation applies to
    seed: int

    def specs(self) -> list[MitigationSpec]:
        return [MitigationSpec(self.kind, p, self.seed) for p in expand(self.grid)]


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    task: str
    seed: int
    data: dict[str, object]
    test_frac: float
    valid_frac: float
    split_seed: int
    k: int
    ks_population: str
    models: tuple[ModelEntry, ...]
    mitigations: tuple[MitigationEntry, ...]
    output: str | None = None
    base_dir: str = "."
    extra: dict = field(default_factory=dict)

    def canonical(self) -> dict:
        """Everything that influences results, in a stable JSON-friendly form."""
        return {
            "name": self.name,
            "task": self.task,
            "seed": self.seed,
            "data": {k: self.data[k] for k in sorted(self.data)},
            "split": {"test_frac": self.test_frac, "valid_frac": self.valid_frac, "seed": self.split_seed},
            "metrics": {"k": self.k, "ks_population": self.ks_population},
            "models": [{"name": m.name, "family": m.family, "grid": m.grid, "seed": m.seed} for m in self.models],
            "mitigations": [
                {"kind": m.kind, "grid": m.grid, "models": list(m.models), "seed": m.seed} for m in self.mitigations
            ],
        }

    def digest(self, extra: dict | None = None) -> str:
        blob = json.dumps({**self.canonical(), **(extra or {})}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def model(self, name: str) -> ModelEntry:
        for m in self.models:
            if m.name == name:
                return m
        raise ConfigError(f"no model named {name!r}")

    def mitigation(self, kind: str) -> MitigationEntry:
        for m in self.mitigations:
            if m.kind == kind:
                return m
        raise ConfigError(f"no mitigation {kind!r}")

    def cells(self) -> list[tuple[str, str | None]]:
        """``(model name, mitigation kind or None)`` in report order."""
        out: list[tuple[str, str | None]] = [(m.name, None) for m in self.models]
        for mit in self.mitigations:
            out.extend((name, mit.kind) for name in mit.models)
        return out

    def resolve(self, path) -> Path:
        p = Path(str(path))
        return p if p.is_absolute() else Path(self.base_dir) / p


def _section(cp, name) -> dict[str, str]:
    return dict(cp[name]) if cp.has_section(name) else {}


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), base_dir=str(path.parent))


def parse_config(text: str, base_dir: str = ".") -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    cp.optionxform = str  # hyperparameter names are case-sensitive (N)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    known = {"experiment", "data", "split", "metrics"}
    for s in cp.sections():
        if s not in known and not s.startswith(("model.", "mitigation.")):
            raise ConfigError(f"unknown section [{s}]")

    exp = _section(cp, "experiment")
    try:
        seed = int(exp.get("seed", "0"))
    except ValueError as exc:
        raise ConfigError("experiment.seed must be an integer") from exc
    task = exp.get("task", "topn").strip()
    if task not in TASKS:
        raise ConfigError(f"task must be one of {TASKS}, got {task!r}")

    data = {k: parse_value(v) for k, v in _section(cp, "data").items()}
    preset = data.get("preset")
    if preset not in DATA_PRESETS:
        raise ConfigError(f"data.preset must be one of {DATA_PRESETS}, got {preset!r}")
    if preset in ("ml1m", "canonical") and "ratings" not in data:
        raise ConfigError("data.ratings is required for this preset")
    if preset == "lfm1k" and not ("events" in data and "users" in data):
        raise ConfigError("lfm1k needs data.events and data.users")
    if preset != "synthetic" and "attribute" not in data:
        raise ConfigError("data.attribute is required")

    split = _section(cp, "split")
    try:
        test_frac = float(split.get("test_frac", "0.2"))
        valid_frac = float(split.get("valid_frac", "0.1"))
        split_seed = int(split.get("seed", str(seed)))
    except ValueError as exc:
        raise ConfigError(f"bad [split] value: {exc}") from exc
    if not (0 <= test_frac < 1 and 0 <= valid_frac < 1):
        raise ConfigError("split fractions must lie in [0, 1)")
    if test_frac + (1 - test_frac) * valid_frac >= 1:
        raise ConfigError("split leaves nothing for training")

    met = _section(cp, "metrics")
    try:
        k = int(met.get("k", "10"))
    except ValueError as exc:
        raise ConfigError("metrics.k must be an integer") from exc
    if k < 1:
        raise ConfigError("metrics.k must be >= 1")
    ks_pop = met.get("ks_population", "recommended").strip()
    if ks_pop not in KS_POPULATIONS:
        raise ConfigError(f"metrics.ks_population must be one of {KS_POPULATIONS}")

    models = []
    for s in cp.sections():
        if not s.startswith("model."):
            continue
        name = s.split(".", 1)[1]
        sec = dict(cp[s])
        family = sec.pop("family", name).strip()
        if family not in FAMILIES:
            raise ConfigError(f"[{s}]: unknown model family {family!r}")
        mseed = int(sec.pop("seed", str(seed)))
        grid = {key: parse_grid(v) for key, v in sec.items()} if sec else dict(DEFAULT_GRIDS[family])
        entry = ModelEntry(name, family, grid, mseed)
        try:
            entry.specs()
        except ValueError as exc:
            raise ConfigError(f"[{s}]: {exc}") from exc
        models.append(entry)
    if not models:
        raise ConfigError("no [model.*] sections")
    names = [m.name for m in models]

    mits = []
    for s in cp.sections():
        if not s.startswith("mitigation."):
            continue
        kind = s.split(".", 1)[1]
        if kind not in KINDS:
            raise ConfigError(f"[{s}]: unknown mitigation {kind!r}")
        sec = dict(cp[s])
        mseed = int(sec.pop("seed", str(seed)))
        targets = sec.pop("models", None)
        if targets is None:
            chosen = tuple(m.name for m in models if m.family in COMPATIBILITY[kind])
        else:
            chosen = tuple(t.strip() for t in targets.split(",") if t.strip())
            for t in chosen:
                if t not in names:
                    raise ConfigError(f"[{s}]: unknown model {t!r}")
                fam = next(m.family for m in models if m.name == t)
                if fam not in COMPATIBILITY[kind]:
                    raise ConfigError(
                        f"[{s}]: {kind} does not apply to {fam} (allowed: {sorted(COMPATIBILITY[kind])})"
                    )
        if not chosen:
            raise ConfigError(f"[{s}]: no configured model is compatible with {kind}")
        if kind == "li_rerank" and task != "topn":
            raise ConfigError("li_rerank re-ranks top-n lists and needs task = topn")
        grid = {key: parse_grid(v) for key, v in sec.items()}
        entry = MitigationEntry(kind, grid, chosen, mseed)
        try:
            entry.specs()
        except ValueError as exc:
            raise ConfigError(f"[{s}]: {exc}") from exc
        mits.append(entry)

    if valid_frac == 0:
        grids = [m for m in models if len(m.specs()) > 1] + [m for m in mits if len(m.specs()) > 1]
        if grids:
            raise ConfigError("grid search needs split.valid_frac > 0")
    return ExperimentConfig(
        name=exp.get("name", "experiment").strip(),
        task=task,
        seed=seed,
        data=data,
        test_frac=test_frac,
        valid_frac=valid_frac,
        split_seed=split_seed,
        k=k,
        ks_population=ks_pop,
        models=tuple(models),
        mitigations=tuple(mits),
        output=exp.get("output"),
        base_dir=base_dir,
    )
