"""Aggregation of repeated runs, t-tests and significance-highlighted tables.

Runs that share a sampling way but differ in expert combination are averaged,
giving one value per way. Rows of a table are then compared against the best
row with a t-test: paired by way when every row shares the same ways,
unpaired for independent repeats.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy import special

METRICS = ("dice", "assd", "hd95")
DIRECTIONS = {"dice": "max", "assd": "min", "hd95": "min"}
LABELS = {"dice": "Dice (%)", "assd": "ASSD", "hd95": "95HD"}


@dataclass(frozen=True)
class RunResult:
    """One grid cell of an experiment: the test-set mean metrics of one model."""

    experiment: str
    row: str
    combo: tuple[int, ...]
    sampling_way: int
    new_expert: int
    metrics: Mapping[str, Optional[float]]
    n_undefined: int = 0
    arm: str = ""
    provenance: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "combo", tuple(int(r) for r in self.combo))
        if int(self.sampling_way) < 1:
            raise ValueError(f"sampling_way must be >= 1, got {self.sampling_way}")
        for name in METRICS:
            value = self.metrics.get(name)
            if value is not None and not math.isfinite(value):
                raise ValueError(f"metric {name} is not finite: {value}")

    @property
    def run_id(self) -> str:
        combo = "-".join(map(str, self.combo)) or "none"
        arm = f"_{self.arm}" if self.arm else ""
        return f"u{self.new_expert}_{self.row}{arm}_c{combo}_w{self.sampling_way:02d}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["combo"] = list(self.combo)
        d["metrics"] = dict(self.metrics)
        d["provenance"] = dict(self.provenance)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunResult":
        return cls(**{**d, "combo": tuple(d["combo"])})


@dataclass(frozen=True)
class AggregatedResult:
    """Per metric, one value per sampling way (ways in ascending order)."""

    ways: tuple[int, ...]
    values: Mapping[str, np.ndarray]
    n_combos: int
    n_undefined: int = 0

    def mean(self, metric: str) -> float:
        v = self.values[metric]
        v = v[np.isfinite(v)]
        return float(v.mean()) if v.size else float("nan")


def _mean(values: Sequence[float]) -> float:
    # offset from the first value: exact when all values agree, compensated otherwise
    v0 = values[0]
    return v0 + math.fsum(v - v0 for v in values) / len(values)


def aggregate(runs: Iterable[RunResult]) -> AggregatedResult:
    """Average over expert combinations within each sampling way.

    The runs must form a full (combo x way) grid.
    """
    runs = list(runs)
    if not runs:
        raise ValueError("no runs to aggregate")
    combos = sorted({r.combo for r in runs})
    ways = sorted({r.sampling_way for r in runs})
    cells = defaultdict(list)
    for r in runs:
        cells[(r.combo, r.sampling_way)].append(r)
    missing = [(c, w) for c in combos for w in ways if (c, w) not in cells]
    if missing:
        shown = ", ".join(f"combo {c} way {w}" for c, w in missing[:10])
        raise ValueError(f"incomplete grid, missing {len(missing)} cells: {shown}")
    duplicated = [k for k, v in cells.items() if len(v) > 1]
    if duplicated:
        raise ValueError(f"duplicate runs for cells {duplicated[:5]}")
    values = {}
    for name in METRICS:
        per_way = []
        for w in ways:
            column = [cells[(c, w)][0].metrics.get(name) for c in combos]
            column = [v for v in column if v is not None]
            per_way.append(_mean(column) if column else float("nan"))
        values[name] = np.asarray(per_way, dtype=np.float64)
    return AggregatedResult(tuple(ways), values, len(combos), sum(r.n_undefined for r in runs))


# ----------------------------------------------------------------- t-tests


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    significant: bool
    degenerate: bool = False
    df: float = float("nan")


def student_t_sf2(t: float, df: float) -> float:
    """Two-sided tail probability P(|T| >= |t|) for Student's t with ``df``."""
    x = df / (df + t * t)
    return float(special.betainc(df / 2.0, 0.5, x))


def t_test(x: Sequence[float], y: Sequence[float], kind: str = "unpaired", alpha: float = 0.05,
           equal_var: bool = True) -> TTestResult:
    """Two-sided Student t-test.

    ``paired`` pairs values by position (sampling way). ``unpaired`` is the
    pooled-variance two-sample test, or Welch's test with ``equal_var=False``.
    Zero-variance data gives a degenerate result: p = 1 when the means agree,
    p = 0 otherwise.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if kind == "paired":
        if x.shape != y.shape:
            raise ValueError("paired t-test needs equal-length vectors")
        if x.size < 2:
            raise ValueError("t-test needs at least two observations")
        d = x - y
        n = d.size
        mean = d.mean()
        sd = d.std(ddof=1)
        df = n - 1.0
        if sd == 0:
            p = 1.0 if mean == 0 else 0.0
            return TTestResult(0.0 if mean == 0 else math.copysign(math.inf, mean), p, p < alpha, True, df)
        t = mean / (sd / math.sqrt(n))
    elif kind == "unpaired":
        nx, ny = x.size, y.size
        if nx < 2 or ny < 2:
            raise ValueError("t-test needs at least two observations per group")
        vx, vy = x.var(ddof=1), y.var(ddof=1)
        diff = x.mean() - y.mean()
        if equal_var:
            df = nx + ny - 2.0
            pooled = ((nx - 1) * vx + (ny - 1) * vy) / df
            se = math.sqrt(pooled * (1.0 / nx + 1.0 / ny))
        else:
            a, b = vx / nx, vy / ny
            se = math.sqrt(a + b)
            df = (a + b) ** 2 / (a * a / (nx - 1) + b * b / (ny - 1)) if se > 0 else nx + ny - 2.0
        if se == 0:
            p = 1.0 if diff == 0 else 0.0
            return TTestResult(0.0 if diff == 0 else math.copysign(math.inf, diff), p, p < alpha, True, df)
        t = diff / se
    else:
        raise ValueError(f"unknown t-test kind {kind!r}")
    p = student_t_sf2(t, df)
    return TTestResult(float(t), p, p < alpha, False, float(df))


# -------------------------------------------------------------- highlight


@dataclass
class MetricReport:
    best: str
    bold: set[str]
    p_values: dict[str, float]
    degenerate: set[str] = field(default_factory=set)
    tie: list[str] = field(default_factory=list)


@dataclass
class SignificanceReport:
    kind: str
    alpha: float
    metrics: dict[str, MetricReport]


def _better(a: float, b: float, direction: str) -> bool:
    return a > b if direction == "max" else a < b


def highlight(rows: Mapping[str, AggregatedResult], kind: str = "paired", alpha: float = 0.05,
              directions: Mapping[str, str] = DIRECTIONS, metrics: Sequence[str] = METRICS) -> SignificanceReport:
    """Bold the best row per metric plus every row not significantly worse.

    Ties on the best mean keep the first row (in the given order) as the
    reference and list the others under ``tie``.
    """
    labels = list(rows)
    if len(labels) < 2:
        raise ValueError("highlighting needs at least two rows")
    out = {}
    for name in metrics:
        direction = directions[name]
        means = {k: rows[k].mean(name) for k in labels}
        best = labels[0]
        for k in labels[1:]:
            if _better(means[k], means[best], direction):
                best = k
        tie = [k for k in labels if k != best and means[k] == means[best]]
        bold, p_values, degenerate = {best}, {best: 1.0}, set()
        ref = rows[best].values[name]
        for k in labels:
            if k == best:
                continue
            res = t_test(rows[k].values[name], ref, kind, alpha)
            p_values[k] = res.p
            if res.degenerate:
                degenerate.add(k)
            if res.p >= alpha:
                bold.add(k)
        out[name] = MetricReport(best, bold, p_values, degenerate, tie)
    return SignificanceReport(kind, alpha, out)


def underline(with_rows: Mapping[str, AggregatedResult], without_rows: Mapping[str, AggregatedResult],
              alpha: float = 0.05, directions: Mapping[str, str] = DIRECTIONS,
              metrics: Sequence[str] = METRICS) -> dict[str, set[str]]:
    """Rows whose "with" value is significantly better than its "without" counterpart (paired)."""
    marked = {}
    for name in metrics:
        marked[name] = set()
        for k in with_rows:
            a, b = with_rows[k], without_rows[k]
            res = t_test(a.values[name], b.values[name], "paired", alpha)
            if res.significant and _better(a.mean(name), b.mean(name), directions[name]):
                marked[name].add(k)
    return marked


# ------------------------------------------------------------------ tables


@dataclass
class Cell:
    value: float
    bold: bool = False
    underline: bool = False
    note: str = ""


@dataclass
class Table:
    title: str
    row_header: str
    rows: list[str]
    columns: list[str]
    cells: dict[tuple[str, str], Cell]
    footnotes: list[str] = field(default_factory=list)


def _fmt(metric: str, value: float) -> str:
    if value is None or not math.isfinite(value):
        return "n/a"
    return f"{value * 100:.2f}" if metric == "dice" else f"{value:.2f}"


def _metric_of(column: str) -> str:
    return column.split(" ")[0].split("/")[0]


def build_table(title: str, row_header: str, rows: Mapping[str, AggregatedResult],
                report: Optional[SignificanceReport] = None, arms: Optional[Mapping[str, Mapping[str, AggregatedResult]]] = None,
                underlined: Optional[Mapping[str, set]] = None, bold_arm: Optional[str] = None) -> Table:
    """Assemble a table.

    Without ``arms`` there is one column per metric. With ``arms`` (e.g.
    ``{"w/": ..., "w/o": ...}``) each metric gets one column per arm; bold
    marks from ``report`` apply to ``bold_arm`` and underlines to the first arm.
    """
    cells, columns, footnotes = {}, [], []
    if arms is None:
        arms = {"": rows}
        bold_arm = ""
    arm_names = list(arms)
    row_labels = list(next(iter(arms.values())))
    for name in METRICS:
        for arm in arm_names:
            col = f"{name} {arm}".strip()
            columns.append(col)
            for label in row_labels:
                agg = arms[arm][label]
                cell = Cell(agg.mean(name))
                if report is not None and arm == bold_arm:
                    mr = report.metrics[name]
                    cell.bold = label in mr.bold
                    if label in mr.degenerate:
                        cell.note = "deg"
                if underlined is not None and arm == arm_names[0]:
                    cell.underline = label in underlined.get(name, set())
                if agg.n_undefined:
                    cell.note = (cell.note + f" undef={agg.n_undefined}").strip()
                cells[(label, col)] = cell
    if report is not None:
        footnotes.append(f"bold: best and not significantly different ({report.kind} t-test, alpha={report.alpha:g})")
        for name, mr in report.metrics.items():
            if mr.tie:
                footnotes.append(f"{name}: tie on best mean between {[mr.best] + mr.tie}; reference {mr.best}")
    if underlined is not None:
        footnotes.append("underline: significantly better than the counterpart (paired t-test)")
    return Table(title, row_header, row_labels, columns, cells, footnotes)


def _column_label(col: str) -> str:
    parts = col.split(" ", 1)
    label = LABELS.get(parts[0], parts[0])
    return f"{label} {parts[1]}" if len(parts) > 1 else label


def emit_table(table: Table, fmt: str = "markdown") -> str:
    """Render deterministically as markdown, csv or json."""
    if fmt == "markdown":
        lines = [f"### {table.title}", ""]
        header = [table.row_header] + [_column_label(c) for c in table.columns]
        lines.append("| " + " | ".join(header) + " |")
        lines.append("|" + "|".join(["---"] * len(header)) + "|")
        for label in table.rows:
            out = [label]
            for col in table.columns:
                cell = table.cells[(label, col)]
                text = _fmt(_metric_of(col), cell.value)
                if cell.underline:
                    text = f"<u>{text}</u>"
                if cell.bold:
                    text = f"**{text}**"
                if cell.note:
                    text = f"{text} ({cell.note})"
                out.append(text)
            lines.append("| " + " | ".join(out) + " |")
        if table.footnotes:
            lines.append("")
            lines.extend(f"- {note}" for note in table.footnotes)
        return "\n".join(lines) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["row", "column", "value", "bold", "underline", "note"])
        for label in table.rows:
            for col in table.columns:
                cell = table.cells[(label, col)]
                writer.writerow([label, col, _fmt(_metric_of(col), cell.value), int(cell.bold), int(cell.underline), cell.note])
        return buf.getvalue()
    if fmt == "json":
        doc = {
            "title": table.title,
            "row_header": table.row_header,
            "columns": table.columns,
            "rows": [
                {
                    "label": label,
                    "cells": {
                        col: {
                            "value": None if not math.isfinite(table.cells[(label, col)].value) else round(table.cells[(label, col)].value, 10),
                            "bold": table.cells[(label, col)].bold,
                            "underline": table.cells[(label, col)].underline,
                            "note": table.cells[(label, col)].note,
                        }
                        for col in table.columns
                    },
                }
                for label in table.rows
            ],
            "footnotes": table.footnotes,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
    raise ValueError(f"unknown table format {fmt!r}")
