"""Writing benchmark reports, CV curves and trace paths to CSV, JSON and SVG."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np

from .data import atomic_write, csv_text, ensure_writable_dir
from .exceptions import ValidationError
from .render import box_chart, line_chart
from .selection import CvResult
from .simulation import SimulationReport, TracePath

BENCHMARK_COLUMNS = (
    "spec", "method", "run_count", "median_mse", "bootstrap_se",
    "mean_rank", "rank_ci_low", "rank_ci_high", "seed",
)
CV_COLUMNS = ("kappa", "cv_mse", "cv_se", "selected", "seed")


def _table(report, feature_names=None):
    """(kind, columns, rows, extra json fields) for any supported report."""
    if isinstance(report, SimulationReport):
        report = [report]
    if isinstance(report, (list, tuple)) and report and all(
        isinstance(r, SimulationReport) for r in report
    ):
        rows = [dict(r, seed=rep.seed) for rep in report for r in rep.rows()]
        return "benchmark", BENCHMARK_COLUMNS, rows, {"seed": report[0].seed}
    if isinstance(report, CvResult):
        rows = [
            {"kappa": float(k), "cv_mse": float(m), "cv_se": float(s),
             "selected": int(k == report.kappa_star), "seed": report.seed}
            for k, m, s in zip(report.kappa_grid, report.cv_mse, report.cv_se)
        ]
        return "cv", CV_COLUMNS, rows, {"seed": report.seed, "kappa_star": report.kappa_star}
    if isinstance(report, TracePath):
        K = report.beta.shape[1]
        names = list(feature_names or [f"x{j + 1}" for j in range(K)])
        cols = ("kappa", "nu_eff") + tuple(f"beta_{n}" for n in names)
        rows = [
            dict(zip(cols, [float(k), float(nu)] + [float(b) for b in beta]))
            for k, nu, beta in zip(report.kappa_grid, report.nu_eff, report.beta)
        ]
        return "trace", cols, rows, {}
    raise ValidationError(f"cannot emit a report of type {type(report).__name__}")


def report_csv(report, feature_names=None) -> str:
    _, cols, rows, _ = _table(report, feature_names)
    return csv_text(cols, ([r[c] for c in cols] for r in rows))


def report_json(report, feature_names=None) -> str:
    kind, cols, rows, extra = _table(report, feature_names)
    doc = {"kind": kind, "columns": list(cols), "rows": rows, **extra}
    return json.dumps(doc, indent=2, default=_jsonable) + "\n"


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(f"not serializable: {type(v).__name__}")


def json_to_csv(text: str) -> str:
    """CSV equivalent of a document written by :func:`report_json`."""
    doc = json.loads(text)
    cols = doc["columns"]
    return csv_text(cols, ([r[c] for c in cols] for r in doc["rows"]))


def runs_csv(reports: Sequence[SimulationReport]) -> str:
    """Per-run test MSEs in long format (spec, run, method, mse)."""
    rows = []
    for rep in reports:
        kept = [r for r in range(rep.runs_requested) if r not in set(rep.failed_runs)]
        for m in rep.methods:
            rows += [(rep.spec_id, r, m, float(v)) for r, v in zip(kept, rep.mse[m])]
    return csv_text(("spec", "run", "method", "mse"), rows)


def report_svg(report, feature_names=None) -> List[str]:
    if isinstance(report, SimulationReport):
        report = [report]
    if isinstance(report, (list, tuple)):
        return [
            box_chart([r.mse[m] for m in r.methods], r.methods,
                      title=f"test MSE, spec {r.spec_id} ({r.runs} runs)", ylabel="MSE")
            for r in report
        ]
    if isinstance(report, CvResult):
        return [line_chart(report.kappa_grid, report.cv_mse, title=f"CV MSE (kappa* = {report.kappa_star:g})",
                           xlabel="kappa", ylabel="MSE")]
    if isinstance(report, TracePath):
        K = report.beta.shape[1]
        names = list(feature_names or [f"x{j + 1}" for j in range(K)])
        return [line_chart(report.kappa_grid, report.beta, title="coefficient trace",
                           xlabel="kappa", ylabel="beta", labels=names)]
    raise ValidationError(f"cannot emit a report of type {type(report).__name__}")


def emit_report(
    report: Union[SimulationReport, Sequence[SimulationReport], CvResult, TracePath],
    out_dir,
    formats: Sequence[str] = ("csv",),
    stem: str = "report",
    feature_names=None,
) -> List[Path]:
    """Write ``report`` in each requested format; returns the written paths."""
    bad = set(formats) - {"csv", "json", "svg"}
    if bad:
        raise ValidationError(f"unsupported report formats {sorted(bad)}")
    out = ensure_writable_dir(out_dir)
    written = []
    if "csv" in formats:
        written.append(atomic_write(out / f"{stem}.csv", report_csv(report, feature_names)))
        if isinstance(report, (SimulationReport, list, tuple)):
            reps = [report] if isinstance(report, SimulationReport) else list(report)
            written.append(atomic_write(out / f"{stem}_runs.csv", runs_csv(reps)))
    if "json" in formats:
        written.append(atomic_write(out / f"{stem}.json", report_json(report, feature_names)))
    if "svg" in formats:
        docs = report_svg(report, feature_names)
        for i, doc in enumerate(docs):
            suffix = f"_{i + 1}" if len(docs) > 1 else ""
            written.append(atomic_write(out / f"{stem}{suffix}.svg", doc))
    return written


def read_csv_rows(text: str) -> List[dict]:
    return list(csv.DictReader(io.StringIO(text)))
