"""Render metric tables: best value bold, second best underlined, KID shown x100."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

from .study import ASPECTS

# name -> (header, higher_is_better, decimals, display scale)
METRICS = {
    "lpips": ("LPIPS↓", False, 3, 1.0),
    "ssim": ("SSIM↑", True, 3, 1.0),
    "fid": ("FID↓", False, 2, 1.0),
    "kid": ("KID↓", False, 3, 100.0),
    "dino_m": ("DINO-M↑", True, 3, 1.0),
    "clip_t": ("CLIP-T↑", True, 3, 1.0),
    "clip_i": ("CLIP-I↑", True, 3, 1.0),
    "aesthetic": ("Aesthetic↑", True, 2, 1.0),
}


class ReportError(ValueError):
    pass


@dataclass
class EvalReport:
    methods: list
    metrics: dict = field(default_factory=dict)  # method -> {metric: value}
    preference: dict = field(default_factory=dict)  # aspect -> {method: pct}
    scores: dict = field(default_factory=dict)  # aspect -> {method: S}
    metadata: dict = field(default_factory=dict)

    def validate(self):
        for meth, vals in self.metrics.items():
            for k, v in vals.items():
                if not math.isfinite(v):
                    raise ReportError(f"{meth}/{k} is not finite")
        for table in (self.preference, self.scores):
            for aspect, vals in table.items():
                if any(not math.isfinite(v) for v in vals.values()):
                    raise ReportError(f"non-finite study value for {aspect}")

    def metric_columns(self) -> list[str]:
        cols = []
        for vals in self.metrics.values():
            cols += [k for k in vals if k not in cols]
        order = list(METRICS)
        return sorted(cols, key=lambda c: order.index(c) if c in order else len(order))


def display_value(metric: str, value: float) -> float:
    return value * METRICS.get(metric, (None, True, 3, 1.0))[3]


def _marks(values: dict, higher: bool) -> dict:
    """method -> 'best' | 'second' | '' (ties share a mark)."""
    distinct = sorted({v for v in values.values()}, reverse=higher)
    best = distinct[0] if distinct else None
    second = distinct[1] if len(distinct) > 1 else None
    return {m: "best" if v == best else "second" if v == second else "" for m, v in values.items()}


def _fmt(v: float, decimals: int, mark: str) -> str:
    s = f"{v:.{decimals}f}"
    if mark == "best":
        return f"**{s}**"
    if mark == "second":
        return f"<u>{s}</u>"
    return s


def _metric_markdown(report: EvalReport) -> list[str]:
    cols = report.metric_columns()
    heads = [METRICS.get(c, (c,))[0] for c in cols]
    lines = ["| Model | " + " | ".join(heads) + " |", "|---|" + "---|" * len(cols)]
    marks = {}
    for c in cols:
        vals = {m: report.metrics[m][c] for m in report.methods if c in report.metrics.get(m, {})}
        marks[c] = _marks(vals, METRICS.get(c, (c, True))[1]) if len(vals) > 1 else {}
    for m in report.methods:
        cells = []
        for c in cols:
            if c not in report.metrics.get(m, {}):
                cells.append("-")
                continue
            dec = METRICS.get(c, (c, True, 3))[2]
            cells.append(_fmt(display_value(c, report.metrics[m][c]), dec, marks[c].get(m, "")))
        lines.append(f"| {m} | " + " | ".join(cells) + " |")
    if "kid" in cols:
        lines.append("")
        lines.append("KID values are multiplied by 100.")
    return lines


def _study_markdown(report: EvalReport) -> list[str]:
    aspects = [a for a in ASPECTS if a in report.preference or a in report.scores]
    names = [a.capitalize() for a in aspects]
    lines = [
        "| | " + " | ".join(["Human Preference(%)↑"] + [""] * (len(aspects) - 1)) + " | "
        + " | ".join(["Human Scores↑"] + [""] * (len(aspects) - 1)) + " |",
        "|---|" + "---|" * (2 * len(aspects)),
        "| **Model** | " + " | ".join(names + names) + " |",
    ]
    marks = {}
    for key, table in (("pref", report.preference), ("score", report.scores)):
        for a in aspects:
            marks[key, a] = _marks(table.get(a, {}), True)
    for m in report.methods:
        cells = [_fmt(report.preference[a][m], 2, marks["pref", a].get(m, "")) for a in aspects]
        cells += [_fmt(report.scores[a][m], 2, marks["score", a].get(m, "")) for a in aspects]
        lines.append(f"| {m} | " + " | ".join(cells) + " |")
    return lines


def emit_report(report: EvalReport, fmt: str = "markdown") -> str:
    report.validate()
    if fmt == "json":
        return json.dumps(asdict(report), indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        cols = report.metric_columns()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method"] + cols)
        for m in report.methods:
            vals = report.metrics.get(m, {})
            w.writerow([m] + [repr(display_value(c, vals[c])) if c in vals else "" for c in cols])
        return buf.getvalue()
    if fmt == "markdown":
        parts = []
        if report.metadata:
            meta = ", ".join(f"{k}={report.metadata[k]}" for k in sorted(report.metadata))
            parts += [f"<!-- {meta} -->", ""]
        if report.metrics:
            parts += _metric_markdown(report)
        if report.preference or report.scores:
            if report.metrics:
                parts.append("")
            parts += _study_markdown(report)
        return "\n".join(parts) + "\n"
    raise ReportError(f"unknown format {fmt!r}")


def parse_csv(text: str) -> dict:
    rows = list(csv.reader(io.StringIO(text)))
    cols = rows[0][1:]
    return {r[0]: {c: float(v) for c, v in zip(cols, r[1:]) if v != ""} for r in rows[1:]}
