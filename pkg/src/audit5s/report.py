"""Report documents and their JSON / CSV / HTML+SVG renderings.

Every report is first built as a plain JSON-compatible document (tables,
chart series, notes). Renderers only read that document, so a stored JSON
report can be re-rendered later and gives the same files.
"""

from __future__ import annotations

import csv
import html
import io
import json
import math
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

from .domain import CLASSES, SENSES, AuditRecord
from .economics import EconomicReport, Money
from .engine import ConsistencyIndex
from .pipeline import AuditRun, ValidationResult, class_distribution
from .plotting import hbar_svg, line_svg
from .stats import FACTOR_LABELS

SCHEMA = "audit5s.report"
SCHEMA_VERSION = 1
FORMATS = ("json", "csv", "html")
UNDEFINED = "undefined"
INSUFFICIENT = "insufficient data"


class ReportError(Exception):
    pass


def _iso(dt) -> str:
    return dt.isoformat().replace("+00:00", "Z")


def _money(m: Money) -> dict:
    return {"cents": m.cents, "currency": m.currency, "display": str(m)}


def _num(x: Optional[float], digits: int = 6) -> Optional[float]:
    if x is None:
        return None
    if isinstance(x, float) and math.isinf(x):
        return None
    return round(float(x), digits)


def table(name: str, title: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> dict:
    return {"name": name, "title": title, "columns": list(columns), "rows": [list(r) for r in rows]}


def document(kind: str, title: str, tables: list, charts: list, notes: Sequence[str] = (), data: Optional[dict] = None) -> dict:
    return {
        "schema": SCHEMA,
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "title": title,
        "tables": tables,
        "charts": charts,
        "notes": list(notes),
        "data": data or {},
    }


def hbar(name: str, title: str, labels: Sequence[str], values: Sequence[float], xlabel: str = "",
         decimals: int = 2, xmax: Optional[float] = None) -> dict:
    return {"name": name, "title": title, "type": "hbar", "labels": list(labels),
            "values": [_num(v) for v in values], "xlabel": xlabel, "decimals": decimals, "xmax": xmax}


def line(name: str, title: str, labels: Sequence[str], values: Sequence[float], ylabel: str = "",
         ylim: Optional[Sequence[float]] = None, bands: Sequence[Sequence[Any]] = (), min_points: int = 2) -> dict:
    return {"name": name, "title": title, "type": "line", "labels": list(labels),
            "values": [_num(v) for v in values], "ylabel": ylabel, "ylim": list(ylim) if ylim else None,
            "bands": [list(b) for b in bands], "min_points": min_points}


# -- builders ------------------------------------------------------------------------


def build_audit_report(
    run: AuditRun,
    history: Sequence[AuditRecord] = (),
    consistency: Optional[ConsistencyIndex] = None,
    window: int = 5,
) -> dict:
    sheets = run.sheets
    dist = class_distribution([s.evaluation for s in sheets])
    mean_pct = sum(s.evaluation.final_percent for s in sheets) / len(sheets) if sheets else None
    summary = [
        ["images", run.total],
        ["evaluated", len(sheets)],
        ["failed", len(run.failures)],
        ["success_rate_percent", _num(run.success_rate, 4)],
        ["images_needing_retries", sum(1 for s in sheets if s.attempts > 1)],
        ["incomplete_extractions", sum(1 for s in sheets if not s.evaluation.parse_complete)],
        ["requests_sent", run.requests_sent],
        ["mean_final_percent", _num(mean_pct, 4)],
        ["batch_elapsed_seconds", _num(run.elapsed_seconds, 3)],
        ["per_image_elapsed_seconds", _num(run.elapsed_seconds / run.total, 3) if run.total else None],
        ["estimated_api_cost", str(run.estimated_cost) if run.estimated_cost is not None else None],
        [f"shitsuke_consistency_window_{window}", _num(consistency.value, 6) if consistency else INSUFFICIENT],
        ["shitsuke_consistency_score", consistency.mapped_score if consistency else INSUFFICIENT],
    ]
    sheet_rows = []
    for s in sheets:
        ev = s.evaluation
        sheet_rows.append(
            [s.image_id, _iso(s.captured_at)]
            + [sc.points for sc in ev.scores]
            + [ev.total_points, ev.final_percent, ev.classification.value,
               " ".join(a.title for a in s.attention), ev.parse_complete, s.attempts, s.record_id, s.notes or ""]
        )
    failure_rows = [[Path(f.image_path).stem, _iso(f.captured_at), f.stage, f.attempts, f.error] for f in run.failures]
    trend = [(r.captured_at, r.evaluation.final_percent) for r in history if r.evaluation.parse_complete]
    means = [
        (sum(s.evaluation.score(sense).points for s in sheets) / len(sheets)) if sheets else 0.0
        for sense in SENSES
    ]
    tables = [
        table("summary", "Batch summary", ["metric", "value"], summary),
        table("sheets", "Audit sheets",
              ["image_id", "captured_at"] + [s.title.lower() for s in SENSES]
              + ["total_points", "final_percent", "class", "attention", "parse_complete", "attempts", "record_id", "notes"],
              sheet_rows),
        table("failures", "Failed images", ["image_id", "captured_at", "stage", "attempts", "error"], failure_rows),
        table("classes", "Classification distribution", ["class", "label", "count"],
              [[c.value, c.label, dist[c]] for c in CLASSES]),
    ]
    charts = [
        hbar("classes", "Classification distribution", [f"{c.value} ({c.label})" for c in CLASSES],
             [dist[c] for c in CLASSES], "Audits", decimals=0),
        hbar("sense_means", "Mean score by sense", [s.title for s in SENSES], means, "Mean score (1-5)", xmax=5.0),
        line("trend", "Final score trend (history)", [_iso(t) for t, _ in trend], [v for _, v in trend],
             "Final score (%)", ylim=(0, 100), bands=[[85, "J"], [50, "K"]]),
    ]
    notes = [
        "Attention lists senses scoring 2 or less; a 0 means the score could not be extracted.",
        "The Shitsuke consistency index is reported alongside, and never replaces, the model's DISCIPLINA score.",
    ]
    return document("audit", "5S audit batch report", tables, charts, notes)


def _opt(x: Optional[float], digits: int = 6):
    return UNDEFINED if x is None else _num(x, digits)


def build_validation_report(v: ValidationResult) -> dict:
    a = v.agreement
    summary = [
        ["matched_evaluations", v.n],
        ["overall_accuracy", _num(v.metrics.overall_accuracy)],
        ["p_observed", _num(float(a.p_observed)) if a else UNDEFINED],
        ["p_expected", _num(float(a.p_expected)) if a else UNDEFINED],
        ["kappa", _num(a.kappa) if a else UNDEFINED],
        ["kappa_ci_low", _num(a.ci_low) if a else UNDEFINED],
        ["kappa_ci_high", _num(a.ci_high) if a else UNDEFINED],
        ["kappa_ci_method", a.ci_method if a else UNDEFINED],
        ["interpretation", a.interpretation.label if a else (v.agreement_error or UNDEFINED)],
        ["unmatched_ground_truth", len(v.unmatched_ground_truth)],
        ["inconsistent_ground_truth_rows", len(v.inconsistent_ground_truth)],
    ]
    m = v.matrix
    matrix_rows = [[lab.value] + list(row) + [sum(row)] for lab, row in zip(m.labels, m.counts)]
    matrix_rows.append(["total"] + list(m.col_totals) + [m.n])
    metric_rows = [
        [lab.value, _opt(p), _opt(s)]
        for lab, p, s in zip(v.metrics.labels, v.metrics.precision, v.metrics.sensitivity)
    ]
    sense_rows = []
    for row in v.sense_rows:
        r = row.result
        sense_rows.append([
            row.sense.title, row.sense.token, row.n,
            _num(r.kappa) if r else UNDEFINED,
            _num(r.ci_low) if r else UNDEFINED, _num(r.ci_high) if r else UNDEFINED,
            r.interpretation.label if r else (row.error or UNDEFINED),
        ])
    tables = [
        table("summary", "Overall agreement", ["metric", "value"], summary),
        table("confusion_matrix", "Confusion matrix (rows: system, columns: human)",
              ["system"] + [c.value for c in m.labels] + ["total"], matrix_rows),
        table("class_metrics", "Per-class metrics", ["class", "precision", "sensitivity"], metric_rows),
        table("sense_kappa", "Kappa by sense",
              ["sense", "token", "n", "kappa", "ci_low", "ci_high", "interpretation"], sense_rows),
    ]
    s = v.sense_summary
    if s is not None:
        tables.append(table("sense_summary", "Mean of per-sense kappas", ["metric", "value"], [
            ["mean_kappa", _num(s.mean)],
            ["sd", _num(s.sd)],
            ["ci_t_low", _num(s.ci_t.low)], ["ci_t_high", _num(s.ci_t.high)],
            ["ci_z_low", _num(s.ci_z.low)], ["ci_z_high", _num(s.ci_z.high)],
            ["ci_method", "mean_of_groups"],
            ["interpretation", s.interpretation.label],
        ]))
    if v.tally is not None:
        pct = v.tally.percentages
        tables.append(table("disagreement_factors", "Disagreement factors", ["factor", "label", "count", "percent"],
                            [[f, FACTOR_LABELS[f], v.tally.counts[f], _num(pct[f], 4)] for f in pct]))
    if v.unmatched_ground_truth:
        tables.append(table("unmatched", "Ground-truth ids without an audit result", ["image_id"],
                            [[i] for i in v.unmatched_ground_truth]))
    charts = []
    defined = [row for row in v.sense_rows if row.result is not None]
    if defined:
        charts.append(hbar("sense_kappa", "Cohen's kappa by sense", [r.sense.title for r in defined],
                           [r.result.kappa for r in defined], "Cohen's kappa", xmax=1.0))
    charts.append(hbar("class_metrics", "Precision by class", [c.value for c in m.labels],
                       [p or 0.0 for p in v.metrics.precision], "Precision", xmax=1.0))
    notes = []
    if a is not None:
        notes.append("Overall interval: asymptotic 95% CI, kappa +/- 1.96 sqrt(p_o (1 - p_o) / (n (1 - p_e)^2)).")
    if s is not None:
        notes.append(f"Mean-of-senses interval: mean +/- q s / sqrt(5), with q = {s.ci_t.multiplier:.4f} (t, 4 df) "
                     f"or {s.ci_z.multiplier:.4f} (z).")
    notes.append("Metrics over an empty class are reported as 'undefined'.")
    return document("validation", "5S audit validation report", tables, charts, notes)


def build_economics_report(r: EconomicReport) -> dict:
    s = r.scenario
    payback = None if math.isinf(r.payback_months) else r.payback_months
    summary = [
        ["monthly_cost_manual", str(r.monthly_cost_manual)],
        ["monthly_cost_automated", str(r.monthly_cost_automated)],
        ["monthly_savings", str(r.monthly_savings)],
        ["annual_savings", str(r.annual_savings)],
        ["roi_year1_percent", _opt(r.roi_year1_percent, 4)],
        ["payback_months", _num(payback, 4) if payback is not None else "infinite"],
        ["cost_reduction_percent", _num(r.cost_reduction_percent, 4)],
        ["time_saved_hours_per_month", _num(r.time_saved_hours_per_month, 4)],
        ["freed_capacity_value", str(r.freed_capacity_value)],
    ]
    comparison = [
        ["manual", str(s.manual_cost_per_audit), s.manual_minutes_per_audit, s.audits_per_month, str(r.monthly_cost_manual)],
        ["automated", str(s.automated_cost_per_audit), s.automated_minutes_per_audit, s.audits_per_month, str(r.monthly_cost_automated)],
    ]
    roi_rows = [[year, _opt(v, 4)] for year, v in r.cumulative_roi_by_year]
    tables = [
        table("summary", "Economic summary", ["metric", "value"], summary),
        table("comparison", "Manual versus automated audits",
              ["method", "cost_per_audit", "minutes_per_audit", "audits_per_month", "monthly_cost"], comparison),
        table("cumulative_roi", "Cumulative ROI by year", ["year", "roi_percent"], roi_rows),
    ]
    charts = [
        hbar("duration", "Audit duration", ["Automated", "Manual"],
             [s.automated_minutes_per_audit, s.manual_minutes_per_audit], "Minutes per audit", decimals=0),
        hbar("frequency", "Audit frequency", ["Automated", "Manual"],
             [s.audits_per_month, s.audits_per_month], "Audits per month", decimals=0),
        hbar("cost", "Cost per audit", ["Automated", "Manual"],
             [s.automated_cost_per_audit.cents / 100, s.manual_cost_per_audit.cents / 100],
             f"Cost per audit ({s.currency})", decimals=2),
    ]
    defined = [(y, v) for y, v in r.cumulative_roi_by_year if v is not None]
    if defined:
        values = [v for _, v in defined]
        charts.append(line("cumulative_roi", "Cumulative ROI", [f"Year {y}" for y, _ in defined], values, "ROI (%)",
                           ylim=(min(0.0, min(values)) * 1.1 - 5, max(0.0, max(values)) * 1.1 + 5), min_points=1))
    notes = [
        "ROI(k) = (k x annual savings - investment) / investment x 100; each year's figure is computed from "
        "this formula with k years of savings as the benefit, not extrapolated from published projections.",
        "Payback = investment / monthly savings. Freed capacity is valued on time saved rounded to 0.1 h.",
        "Monetary amounts are exact to the cent; scenarios are single-currency.",
    ]
    data = {
        "monthly_savings": _money(r.monthly_savings),
        "annual_savings": _money(r.annual_savings),
        "freed_capacity_value": _money(r.freed_capacity_value),
        "initial_investment": _money(s.initial_investment),
        "payback_months": _num(payback, 6),
        "payback_infinite": payback is None,
    }
    return document("economics", "5S audit economics report", tables, charts, notes, data)


# -- renderers --------------------------------------------------------------------------


def render_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _cell(value: Any) -> str:
    if value is None:
        return UNDEFINED
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def render_csv(tab: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(tab["columns"])
    for row in tab["rows"]:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def chart_has_data(chart: dict) -> bool:
    return len(chart["values"]) >= chart.get("min_points", 1)


def render_chart_svg(chart: dict) -> Optional[str]:
    if not chart_has_data(chart):
        return None
    if chart["type"] == "hbar":
        return hbar_svg(chart["title"], chart["labels"], chart["values"], chart.get("xlabel", ""),
                        chart.get("decimals", 2), chart.get("xmax"))
    if chart["type"] == "line":
        ylim = tuple(chart["ylim"]) if chart.get("ylim") else None
        return line_svg(chart["title"], chart["labels"], chart["values"], chart.get("ylabel", ""), ylim,
                        [tuple(b) for b in chart.get("bands", [])])
    raise ReportError(f"unknown chart type {chart['type']!r}")


_CSS = """body{font-family:-apple-system,'Segoe UI',Arial,sans-serif;color:#1e293b;margin:24px;max-width:1100px}
h1{font-size:22px}h2{font-size:16px;margin-top:28px;border-bottom:1px solid #e2e8f0;padding-bottom:4px}
table{border-collapse:collapse;font-size:12px;margin:8px 0}th,td{border:1px solid #cbd5e1;padding:3px 8px;text-align:left}
th{background:#f1f5f9}.chart svg{max-width:100%;height:auto}.empty{color:#64748b;font-style:italic}
.notes li{font-size:12px;color:#475569}"""


def render_html(doc: dict, svgs: Optional[dict] = None) -> str:
    """A single self-contained page; charts are inline SVG."""
    if svgs is None:
        svgs = {c["name"]: render_chart_svg(c) for c in doc["charts"]}
    esc = html.escape
    out = ["<!DOCTYPE html>", '<html lang="en">', "<head>", '<meta charset="utf-8">',
           f"<title>{esc(doc['title'])}</title>", f"<style>{_CSS}</style>", "</head>", "<body>",
           f"<h1>{esc(doc['title'])}</h1>"]
    for tab in doc["tables"]:
        out.append(f'<h2 id="table-{esc(tab["name"])}">{esc(tab["title"])}</h2>')
        if not tab["rows"]:
            out.append('<p class="empty">none</p>')
            continue
        out.append("<table><thead><tr>" + "".join(f"<th>{esc(str(c))}</th>" for c in tab["columns"]) + "</tr></thead><tbody>")
        for row in tab["rows"]:
            out.append("<tr>" + "".join(f"<td>{esc(_cell(v))}</td>" for v in row) + "</tr>")
        out.append("</tbody></table>")
    for chart in doc["charts"]:
        out.append(f'<h2 id="chart-{esc(chart["name"])}">{esc(chart["title"])}</h2>')
        svg = svgs.get(chart["name"])
        if svg is None:
            out.append(f'<p class="empty">{INSUFFICIENT}</p>')
        else:
            out.append(f'<div class="chart">{svg}</div>')
    if doc["notes"]:
        out.append('<h2>Notes</h2><ul class="notes">' + "".join(f"<li>{esc(n)}</li>" for n in doc["notes"]) + "</ul>")
    out += ["</body>", "</html>", ""]
    return "\n".join(out)


def parse_formats(text: str | Sequence[str]) -> tuple[str, ...]:
    items = [t.strip().lower() for t in (text.split(",") if isinstance(text, str) else text) if t.strip()]
    bad = [t for t in items if t not in FORMATS]
    if bad:
        raise ValueError(f"unknown report format(s): {', '.join(bad)}")
    if not items:
        raise ValueError("at least one report format is required")
    return tuple(f for f in FORMATS if f in items)


def render_report(doc: dict, formats: Sequence[str], out_dir: str | Path) -> list[Path]:
    """Write the document in each format; returns the written paths.

    json: ``<kind>_report.json``; csv: ``<kind>_<table>.csv`` per table;
    html: ``<kind>_report.html``. With csv or html, each chart that has data
    is also written as ``<kind>_<chart>.svg``.
    """
    formats = parse_formats(formats)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportError(f"cannot create output directory {out}: {exc}") from exc
    kind = doc["kind"]
    files: dict[Path, str] = {}
    if "json" in formats:
        files[out / f"{kind}_report.json"] = render_json(doc)
    if "csv" in formats:
        for tab in doc["tables"]:
            files[out / f"{kind}_{tab['name']}.csv"] = render_csv(tab)
    if "csv" in formats or "html" in formats:
        svgs = {c["name"]: render_chart_svg(c) for c in doc["charts"]}
        for name, svg in svgs.items():
            if svg is not None:
                files[out / f"{kind}_{name}.svg"] = svg
        if "html" in formats:
            files[out / f"{kind}_report.html"] = render_html(doc, svgs)
    written = []
    for path, text in files.items():
        try:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise ReportError(f"cannot write {path}: {exc}") from exc
        written.append(path)
    return written


def load_document(path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text("utf-8"))
    if doc.get("schema") != SCHEMA:
        raise ReportError(f"{path} is not an audit5s report")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ReportError(f"unsupported report schema version {doc.get('schema_version')!r}")
    return doc
