"""
Report rows pairing Base and Mit results per (procedure, model).

The CSV form is lossless: floats are written with ``repr`` and provenance
travels in leading ``#`` lines as sorted JSON, so parse followed by emit
reproduces the file byte for byte.  The markdown form mirrors the published
tables, with Base and Mit side by side for each metric and significance
markers ``^`` (p < 0.01) and ``*`` (p < 0.05) appended to DP and KS.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from ..metrics import significance_marker


@dataclass(frozen=True)
class CellMetrics:
    utility: float
    dp: float
    dp_p: float
    ks: float
    ks_p: float
    n_users: int = 0

    @property
    def dp_marker(self) -> str:
        return significance_marker(self.dp_p)

    @property
    def ks_marker(self) -> str:
        return significance_marker(self.ks_p)

    def as_dict(self) -> dict:
        return {
            "utility": self.utility, "dp": self.dp, "dp_p": self.dp_p,
            "ks": self.ks, "ks_p": self.ks_p, "n_users": self.n_users,
        }


@dataclass(frozen=True)
class ReportRow:
    procedure: str
    stage: str
    model: str
    base: CellMetrics
    mit: CellMetrics


@dataclass(frozen=True)
class MetricReport:
    task: str
    utility_name: str
    rows: tuple[ReportRow, ...]
    provenance: dict = field(default_factory=dict)


_METRIC_FIELDS = ("utility", "dp", "dp_p", "ks", "ks_p", "n_users")
CSV_COLUMNS = ("procedure", "stage", "model") + tuple(
    f"{side}_{f}" for side in ("base", "mit") for f in _METRIC_FIELDS
)


def _fmt(x) -> str:
    return repr(int(x)) if isinstance(x, int) else repr(float(x))


def emit_csv(report: MetricReport) -> str:
    buf = io.StringIO()
    buf.write("# task " + report.task + "\n")
    buf.write("# utility " + report.utility_name + "\n")
    buf.write("# provenance " + json.dumps(report.provenance, sort_keys=True, separators=(",", ":")) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in report.rows:
        vals = [r.procedure, r.stage, r.model]
        for cell in (r.base, r.mit):
            vals.extend(_fmt(getattr(cell, f)) for f in _METRIC_FIELDS)
        w.writerow(vals)
    return buf.getvalue()


def parse_csv(text: str) -> MetricReport:
    lines = text.splitlines(keepends=True)
    meta = {}
    body_start = 0
    for k, line in enumerate(lines):
        if not line.startswith("# "):
            body_start = k
            break
        key, _, value = line[2:].rstrip("\n").partition(" ")
        meta[key] = value
    reader = csv.reader(io.StringIO("".join(lines[body_start:])))
    header = next(reader)
    if tuple(header) != CSV_COLUMNS:
        raise ValueError(f"unexpected report columns {header}")
    rows = []
    for rec in reader:
        d = dict(zip(header, rec))

        def cell(side):
            return CellMetrics(
                *(float(d[f"{side}_{f}"]) for f in _METRIC_FIELDS[:-1]), int(d[f"{side}_n_users"])
            )

        rows.append(ReportRow(d["procedure"], d["stage"], d["model"], cell("base"), cell("mit")))
    return MetricReport(meta["task"], meta["utility"], tuple(rows), json.loads(meta["provenance"]))


def _num(x: float, digits: int = 3) -> str:
    if math.isnan(x):
        return "n/a"
    return f"{x:.{digits}f}"


def emit_markdown(report: MetricReport) -> str:
    u = report.utility_name
    out = [
        f"| Procedure | Model | {u} Base | {u} Mit | DP Base | DP Mit | KS Base | KS Mit |",
        "|---|---|---:|---:|---:|---:|---:|---:|",
    ]
    for r in report.rows:
        out.append(
            f"| {r.procedure} ({r.stage}) | {r.model} "
            f"| {_num(r.base.utility)} | {_num(r.mit.utility)} "
            f"| {_num(r.base.dp)}{r.base.dp_marker} | {_num(r.mit.dp)}{r.mit.dp_marker} "
            f"| {_num(r.base.ks)}{r.base.ks_marker} | {_num(r.mit.ks)}{r.mit.ks_marker} |"
        )
    out.append("")
    out.append("^ p < 0.01, * p < 0.05 (DP: Mann-Whitney; KS: two-sample Kolmogorov-Smirnov).")
    return "\n".join(out) + "\n"


def emit_report(report: MetricReport, fmt: str, path: str | Path | None = None) -> str:
    if fmt == "csv":
        text = emit_csv(report)
    elif fmt == "markdown":
        text = emit_markdown(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
    return text
