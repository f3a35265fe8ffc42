"""Command-line entry point: ``hfreg {fit,cv,predict,simulate,trace,plot}``.

Exit codes: 0 success, 2 usage, 3 data validation, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .data import (
    ColumnScaling,
    Dataset,
    atomic_write,
    csv_text,
    ensure_writable_dir,
    format_number,
    load_csv,
    read_table,
)
from .estimator import HfrFit, fit as hfr_fit
from .exceptions import NumericalError, ValidationError
from .hierarchy import Hierarchy
from .render import render_dendrogram
from .report import emit_report
from .selection import DEFAULT_FOLDS, cross_validate
from .simulation import ALL_METHODS, default_workers, generate, named_spec, run_benchmark, trace_path

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
MODEL_SCHEMA_VERSION = 1

log = logging.getLogger("hfreg")


class UsageError(Exception):
    pass


def _grid(text: Optional[str], default_points: int, descending=False):
    if text is None:
        g = np.linspace(0.0, 1.0, default_points)
    elif "," in text or "." in text:
        try:
            g = np.array([float(v) for v in text.split(",") if v.strip()])
        except ValueError:
            raise UsageError(f"cannot parse kappa grid {text!r}") from None
    else:
        try:
            g = np.linspace(0.0, 1.0, int(text))
        except ValueError:
            raise UsageError(f"cannot parse kappa grid {text!r}") from None
    return np.sort(g)[::-1] if descending else g


def _columns(text: Optional[str]):
    return tuple(c.strip() for c in text.split(",") if c.strip()) if text else ()


def _input(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input file {p} does not exist")
    return p


def _load(args) -> Dataset:
    return load_csv(
        _input(args.data), args.response, _columns(args.deterministic),
        rescale=not args.no_scale,
    )


def _fit_options(args) -> dict:
    return {
        "intercept": not args.no_intercept,
        "sign_invariant": args.sign_invariant,
        "sign_mode": args.sign_mode,
    }


def model_document(fit: HfrFit, ds: Dataset, seed) -> dict:
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "seed": seed,
        "kappa": fit.kappa,
        "response": ds.response_name,
        "feature_names": list(ds.feature_names),
        "deterministic_names": ["(intercept)"] * int(fit.intercept) + list(ds.deterministic_names),
        "intercept": fit.intercept,
        "beta": fit.beta.tolist(),
        "deterministic": fit.deterministic.tolist(),
        "se": fit.se.tolist(),
        "p_values": fit.p_values.tolist(),
        "theta": fit.theta.tolist(),
        "r2_levels": fit.r2_levels.tolist(),
        "r2_total": fit.r2_total,
        "nu_eff": fit.nu_eff,
        "scaling": {n: [s.low, s.high, s.dummy] for n, s in ds.scaling.items()},
        "hierarchy": fit.hierarchy.to_dict(),
    }


def _coef_table(fit: HfrFit, ds: Dataset) -> str:
    names = [f"(intercept)"] * int(fit.intercept) + list(ds.deterministic_names)
    rows = [(n, float(v), "", "") for n, v in zip(names, fit.deterministic)]
    rows += [
        (n, float(b), float(s), float(p))
        for n, b, s, p in zip(ds.feature_names, fit.beta, fit.se, fit.p_values)
    ]
    return csv_text(("term", "estimate", "std_error", "p_value"), rows)


def cmd_fit(args) -> int:
    out = ensure_writable_dir(args.out) if args.out else None
    ds = _load(args)
    fit = hfr_fit(ds.X, ds.y, args.kappa, deterministic=ds.deterministic,
                  feature_names=ds.feature_names, **_fit_options(args))
    print(f"# seed {args.seed}; kappa {args.kappa:g}; nu_eff {format_number(fit.nu_eff)}; "
          f"r2_total {format_number(fit.r2_total)}")
    sys.stdout.write(_coef_table(fit, ds))
    if out:
        atomic_write(out / "model.json", json.dumps(model_document(fit, ds, args.seed), indent=2))
        atomic_write(out / "coefficients.csv", _coef_table(fit, ds))
        atomic_write(out / "hierarchy.json", fit.hierarchy.to_json(indent=2))
    return EXIT_OK


def cmd_cv(args) -> int:
    out = ensure_writable_dir(args.out) if args.out else None
    ds = _load(args)
    res = cross_validate(ds.X, ds.y, _grid(args.grid, 21), args.folds, args.seed,
                         one_se=args.one_se, deterministic=ds.deterministic, **_fit_options(args))
    print(f"# seed {args.seed}; folds {args.folds}")
    print(f"kappa_star,{format_number(res.kappa_star)}")
    if out:
        emit_report(res, out, _columns(args.format), stem="cv")
    return EXIT_OK


def _read_model(path) -> dict:
    try:
        doc = json.loads(_input(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not a model document ({exc})") from None
    if doc.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise ValidationError(f"{path}: unsupported model schema_version")
    return doc


def cmd_predict(args) -> int:
    if args.out:
        ensure_writable_dir(Path(args.out).parent)
    model = _read_model(args.model)
    scaling = {n: ColumnScaling(*v) for n, v in model["scaling"].items()} or None
    det_names = [n for n in model["deterministic_names"] if n != "(intercept)"]
    path = _input(args.data)
    header, _ = read_table(path)
    response = model["response"] if model["response"] in header else None
    ds = load_csv(path, response, det_names, scaling=scaling)
    if list(ds.feature_names) != model["feature_names"]:
        extra = set(ds.feature_names) - set(model["feature_names"])
        missing = set(model["feature_names"]) - set(ds.feature_names)
        if missing:
            raise ValidationError(f"predictor columns missing: {sorted(missing)}")
        order = [ds.feature_names.index(n) for n in model["feature_names"]]
        log.info("ignoring columns %s", sorted(extra))
        ds.X = ds.X[:, order]
    det = np.asarray(model["deterministic"], dtype=float)
    cols = [np.ones(ds.N)] if model["intercept"] else []
    if ds.deterministic is not None:
        cols += list(ds.deterministic.T)
    D = np.column_stack(cols) if cols else np.zeros((ds.N, 0))
    pred = D @ det + ds.X @ np.asarray(model["beta"], dtype=float)
    text = csv_text(("prediction",), ([float(v)] for v in pred))
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_simulate(args) -> int:
    out = ensure_writable_dir(args.out)
    specs = [named_spec(s) for s in _columns(args.specs)]
    methods = _columns(args.methods) or ALL_METHODS
    reports = run_benchmark(specs, methods, args.runs, args.seed, workers=args.workers)
    for rep in reports:
        print(rep.table())
    for p in emit_report(reports, out, _columns(args.format), stem="benchmark"):
        log.info("wrote %s", p)
    return EXIT_OK


def cmd_trace(args) -> int:
    out = ensure_writable_dir(args.out)
    grid = _grid(args.grid, 101, descending=True)
    if args.spec:
        train, _, _ = generate(named_spec(args.spec), args.seed)
        X, y, names = train.X, train.y, None
    elif args.data:
        ds = _load(args)
        X, y, names = ds.X, ds.y, ds.feature_names
    else:
        raise UsageError("trace needs --spec or --data")
    tp = trace_path(X, y, grid, **_fit_options(args))
    print(f"# seed {args.seed}; {grid.size} kappa values")
    emit_report(tp, out, _columns(args.format), stem="trace", feature_names=names)
    return EXIT_OK


class _StoredFit:
    """Just enough of a fit for :func:`render_dendrogram`."""

    def __init__(self, h: Hierarchy, theta, r2_levels, names):
        self.hierarchy = h
        self.theta = np.asarray(theta, dtype=float)
        self.r2_levels = np.asarray(r2_levels, dtype=float)
        self.feature_names = tuple(names)


def cmd_plot(args) -> int:
    if args.format not in ("svg", "dot"):
        raise UsageError(f"unsupported plot format {args.format!r}")
    if args.out:
        ensure_writable_dir(Path(args.out).parent)
    if args.model:
        m = _read_model(args.model)
        stored = _StoredFit(Hierarchy.from_dict(m["hierarchy"]), m["theta"], m["r2_levels"],
                            m["feature_names"])
    elif args.hierarchy:
        try:
            h = Hierarchy.from_json(_input(args.hierarchy).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{args.hierarchy}: invalid JSON ({exc})") from None
        stored = _StoredFit(h, np.ones(h.L), np.zeros(h.L), [f"x{j + 1}" for j in range(h.K)])
    else:
        raise UsageError("plot needs --model or --hierarchy")
    doc = render_dendrogram(stored, args.format)
    if args.out:
        atomic_write(args.out, doc)
    else:
        sys.stdout.write(doc)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hfreg", description="Hierarchical feature regression")
    p.add_argument("--version", action="version", version=f"hfreg {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def data_args(sp, required=True):
        sp.add_argument("--data", required=required, help="input CSV with a header row")
        sp.add_argument("--response", required=required, help="name of the response column")
        sp.add_argument("--deterministic", help="comma-separated unshrunk columns")
        sp.add_argument("--no-scale", action="store_true",
                        help="skip rescaling predictors to [-1, 1] (dummies to [-0.5, 0.5])")

    def model_args(sp):
        sp.add_argument("--no-intercept", action="store_true")
        sp.add_argument("--sign-invariant", action="store_true",
                        help="cluster on absolute partial correlations")
        sp.add_argument("--sign-mode", choices=("rooted", "nested", "literal"), default="rooted")

    def common(sp):
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("fit", help="fit at one kappa and print coefficients")
    data_args(sp); model_args(sp); common(sp)
    sp.add_argument("--kappa", type=float, default=1.0)
    sp.add_argument("--out", help="directory for model.json, coefficients.csv, hierarchy.json")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("cv", help="k-fold cross-validation over a kappa grid")
    data_args(sp); model_args(sp); common(sp)
    sp.add_argument("--grid", help="comma-separated kappas or a point count (default 21)")
    sp.add_argument("--folds", type=int, default=DEFAULT_FOLDS)
    sp.add_argument("--one-se", action="store_true", help="one-standard-error rule")
    sp.add_argument("--out")
    sp.add_argument("--format", default="csv,json,svg")
    sp.set_defaults(func=cmd_cv)

    sp = sub.add_parser("predict", help="predict from a saved model.json")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", help="output CSV (default stdout)")
    common(sp)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("simulate", help="Monte-Carlo benchmark on the named designs")
    sp.add_argument("--specs", default="a")
    sp.add_argument("--methods", help=f"subset of {','.join(ALL_METHODS)}")
    sp.add_argument("--runs", type=int, default=500)
    sp.add_argument("--workers", type=int, default=default_workers())
    sp.add_argument("--out", required=True)
    sp.add_argument("--format", default="csv,json,svg")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("trace", help="coefficient paths over kappa")
    data_args(sp, required=False); model_args(sp); common(sp)
    sp.add_argument("--spec", help="use a seeded training draw of a named design")
    sp.add_argument("--grid", help="comma-separated kappas or a point count (default 101)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--format", default="csv,svg")
    sp.set_defaults(func=cmd_trace)

    sp = sub.add_parser("plot", help="dendrogram of a fitted model or hierarchy")
    sp.add_argument("--model")
    sp.add_argument("--hierarchy")
    sp.add_argument("--format", default="svg")
    sp.add_argument("--out")
    common(sp)
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"hfreg: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"hfreg: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        print(f"hfreg: invalid data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"hfreg: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
