"""CSV / JSON-lines / JSON writers for traces, metrics and sweep summaries."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .harness import TRACE_COLUMNS, RunMetrics, SimulationTrace

SUMMARY_COLUMNS = (
    "base_demand_lps", "controller", "status", "total_volume_m3", "total_energy_kwh",
    "total_cost_pounds", "cost_per_m3", "cost_ratio", "d4_volume_m3", "d4_energy_kwh",
    "d4_cost_pounds", "d4_cost_per_m3", "min_depth_m", "max_depth_m", "violations",
    "switch_count", "failure",
)


def _fmt(v):
    # repr keeps full precision and always uses '.', independent of locale
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_trace_csv(trace: SimulationTrace, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for row in trace.rows():
            w.writerow([_fmt(row[c]) for c in TRACE_COLUMNS])
    return path


def read_trace_csv(path) -> dict:
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        cols = {h: [] for h in header}
        for row in r:
            for h, v in zip(header, row):
                cols[h].append(float(v))
    return cols


def write_trace_jsonl(trace: SimulationTrace, path) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        for row in trace.rows():
            fh.write(json.dumps(row) + "\n")
    return path


def write_metrics_json(metrics: RunMetrics, path, extra=None) -> Path:
    path = Path(path)
    doc = metrics.to_dict()
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def summary_row(base_demand_lps, controller, metrics: RunMetrics = None, ratio=None,
                error=None) -> dict:
    row = dict.fromkeys(SUMMARY_COLUMNS)
    row["base_demand_lps"] = base_demand_lps
    row["controller"] = controller
    if metrics is None:
        row["status"] = "error"
        row["failure"] = error
        return row
    d4 = metrics.day(3)
    row.update(
        status=("infeasible" if metrics.failed
                else "bound_violation" if metrics.violations else "ok"),
        total_volume_m3=metrics.total_volume_m3,
        total_energy_kwh=metrics.total_energy_kwh,
        total_cost_pounds=metrics.total_cost_pounds,
        cost_per_m3=metrics.cost_per_m3,
        cost_ratio=None if ratio is None else round(ratio, 4),
        d4_volume_m3=d4.volume_m3 if d4 else None,
        d4_energy_kwh=d4.energy_kwh if d4 else None,
        d4_cost_pounds=d4.cost_pounds if d4 else None,
        d4_cost_per_m3=d4.cost_per_m3 if d4 else None,
        min_depth_m=metrics.min_depth_m,
        max_depth_m=metrics.max_depth_m,
        violations=len(metrics.violations),
        switch_count=metrics.switch_count,
        failure=metrics.failure,
    )
    return row


def write_summary(rows, out_dir) -> Path:
    out_dir = Path(out_dir)
    path = out_dir / "summary.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
    with (out_dir / "summary.jsonl").open("w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return path
