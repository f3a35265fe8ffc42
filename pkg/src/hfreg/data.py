"""CSV ingestion, optional rescaling and atomic file output."""

from __future__ import annotations

import csv
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .exceptions import ValidationError


class DataError(ValidationError):
    """A cell could not be parsed; ``row`` is 1-based counting the header."""

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        super().__init__(message)


class SchemaError(ValidationError):
    """Header problems: duplicates, missing or unknown columns."""


@dataclass(frozen=True)
class ColumnScaling:
    """Affine map of one column onto [-1, 1] (or [-0.5, 0.5] for dummies)."""

    low: float
    high: float
    dummy: bool

    def apply(self, x):
        span = self.high - self.low
        if span == 0:
            return np.zeros_like(x)
        unit = (np.asarray(x, dtype=float) - self.low) / span
        return unit - 0.5 if self.dummy else 2.0 * unit - 1.0


@dataclass
class Dataset:
    X: np.ndarray
    y: Optional[np.ndarray]
    feature_names: Tuple[str, ...]
    response_name: Optional[str] = None
    deterministic: Optional[np.ndarray] = None
    deterministic_names: Tuple[str, ...] = ()
    scaling: Dict[str, ColumnScaling] = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def K(self) -> int:
        return self.X.shape[1]


def read_table(path) -> Tuple[Tuple[str, ...], np.ndarray]:
    """Header and float matrix of a comma-separated file."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(h.strip() for h in next(reader))
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        seen = set()
        for name in header:
            if not name:
                raise SchemaError(f"{path}: empty column name in header")
            if name in seen:
                raise SchemaError(f"{path}: duplicate column name {name!r}")
            seen.add(name)
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DataError(
                    f"{path}: row {lineno} has {len(rec)} fields, expected {len(header)}",
                    row=lineno,
                )
            vals = []
            for name, cell in zip(header, rec):
                cell = cell.strip()
                if not cell:
                    raise DataError(
                        f"{path}: missing value at row {lineno}, column {name!r}",
                        row=lineno, column=name,
                    )
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric value {cell!r} at row {lineno}, column {name!r}",
                        row=lineno, column=name,
                    ) from None
                if not math.isfinite(v):
                    raise DataError(
                        f"{path}: non-finite value at row {lineno}, column {name!r}",
                        row=lineno, column=name,
                    )
                vals.append(v)
            rows.append(vals)
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return header, data


def is_dummy(x) -> bool:
    return np.unique(x).size == 2


def fit_scaling(X, names) -> Dict[str, ColumnScaling]:
    return {
        n: ColumnScaling(float(col.min()), float(col.max()), is_dummy(col))
        for n, col in zip(names, np.asarray(X, dtype=float).T)
    }


def apply_scaling(X, names, scaling: Dict[str, ColumnScaling]) -> np.ndarray:
    X = np.array(X, dtype=float)
    for j, n in enumerate(names):
        if n in scaling:
            X[:, j] = scaling[n].apply(X[:, j])
    return X


def load_csv(
    path,
    response_column: Optional[str],
    deterministic_columns: Sequence[str] = (),
    *,
    rescale: bool = False,
    scaling: Optional[Dict[str, ColumnScaling]] = None,
) -> Dataset:
    """Read predictors, response and extra deterministic columns.

    With ``rescale`` every predictor is mapped linearly onto [-1, 1], two-valued
    (dummy) columns onto [-0.5, 0.5]. A stored ``scaling`` (from a previous
    fit) is applied instead of refitting one. ``response_column=None`` loads
    predictors only.
    """
    header, data = read_table(path)
    deterministic_columns = tuple(deterministic_columns)
    wanted = ([response_column] if response_column is not None else []) + list(
        deterministic_columns
    )
    for name in wanted:
        if name not in header:
            raise SchemaError(f"{path}: column {name!r} not found")
    if response_column in deterministic_columns:
        raise SchemaError("response column cannot also be deterministic")
    feats = tuple(h for h in header if h not in wanted)
    if not feats:
        raise SchemaError(f"{path}: no predictor columns")
    col = {h: i for i, h in enumerate(header)}
    X = data[:, [col[h] for h in feats]]
    y = data[:, col[response_column]] if response_column is not None else None
    det = data[:, [col[h] for h in deterministic_columns]] if deterministic_columns else None
    used = {}
    if scaling is not None:
        missing = [f for f in feats if f not in scaling]
        if missing:
            raise SchemaError(f"no stored scaling for columns {missing}")
        used = {f: scaling[f] for f in feats}
    elif rescale:
        used = fit_scaling(X, feats)
    if used:
        X = apply_scaling(X, feats, used)
    return Dataset(
        X=X,
        y=y,
        feature_names=feats,
        response_name=response_column,
        deterministic=det,
        deterministic_names=deterministic_columns,
        scaling=used,
    )


def format_number(v) -> str:
    return format(float(v), ".17g")


def atomic_write(path, text: str) -> Path:
    """Write ``text`` via a temporary file in the target directory and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def csv_text(header: Sequence[str], rows) -> str:
    """CSV document; floats at 17 significant digits, other cells verbatim."""
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(
            format_number(v) if isinstance(v, (float, np.floating)) else v for v in r
        )
    return buf.getvalue()


def save_csv(path, header: Sequence[str], rows) -> Path:
    return atomic_write(path, csv_text(header, rows))


def save_matrix(path, header: Sequence[str], data) -> Path:
    data = np.asarray(data, dtype=float)
    return save_csv(path, header, ([float(v) for v in row] for row in data))


def ensure_writable_dir(path) -> Path:
    """Create ``path`` if needed and check that files can be written there."""
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path, prefix=".probe.")
        os.close(fd)
        os.unlink(tmp)
    except OSError as exc:
        raise OSError(f"output directory {path} is not writable: {exc}") from exc
    return path
