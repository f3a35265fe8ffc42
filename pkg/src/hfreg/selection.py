"""Choosing the shrinkage hyperparameter by k-fold or hold-out validation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .estimator import HfrFit, prepare
from .exceptions import InsufficientSampleError, ValidationError
from .linalg import _as_matrix, _as_vector

DEFAULT_GRID = np.linspace(0.0, 1.0, 21)
DEFAULT_FOLDS = 10


@dataclass(frozen=True)
class CvResult:
    kappa_grid: np.ndarray
    cv_mse: np.ndarray
    cv_se: np.ndarray
    kappa_star: float
    fold_assignments: np.ndarray
    seed: Optional[int] = None


@dataclass(frozen=True)
class ValidationSelection:
    kappa_grid: np.ndarray
    val_mse: np.ndarray
    kappa_star: float
    fit: HfrFit


def _grid(kappa_grid) -> np.ndarray:
    g = DEFAULT_GRID if kappa_grid is None else np.asarray(kappa_grid, dtype=float).ravel()
    if g.size == 0:
        raise ValidationError("kappa grid is empty")
    if not np.all(np.isfinite(g)) or g.min() < 0.0 or g.max() > 1.0:
        raise ValidationError("every kappa must lie in [0, 1]")
    return np.unique(g)  # sorted ascending, so argmin ties go to the smaller kappa


def make_folds(N: int, k: int, seed) -> np.ndarray:
    """Fold index (0..k-1) per observation; fold sizes differ by at most one."""
    if not 2 <= k <= N:
        raise ValidationError(f"need 2 <= k <= N, got k={k}, N={N}")
    perm = np.random.default_rng(seed).permutation(N)
    folds = np.empty(N, dtype=int)
    folds[perm] = np.arange(N) % k
    return folds


def _pick(grid, mse, se=None, one_se=False):
    i = int(np.argmin(mse))
    if one_se and se is not None:
        ok = np.flatnonzero(mse <= mse[i] + se[i])
        i = int(ok[0])
    return float(grid[i])


def cross_validate(
    X,
    y,
    kappa_grid=None,
    k: int = DEFAULT_FOLDS,
    seed=0,
    *,
    one_se: bool = False,
    folds=None,
    **options,
) -> CvResult:
    """k-fold CV of the held-out MSE over ``kappa_grid``.

    The hierarchy is re-estimated on every training fold. ``options`` are
    passed to :func:`hfreg.prepare`; a ``deterministic`` matrix is split
    along with the rows.
    """
    X = _as_matrix(X)
    N = X.shape[0]
    y = _as_vector(y, N)
    grid = _grid(kappa_grid)
    if folds is None:
        folds = make_folds(N, k, seed)
    else:
        folds = np.asarray(folds, dtype=int)
        if folds.shape != (N,):
            raise ValidationError("one fold index per observation required")
        k = int(folds.max()) + 1

    det = options.pop("deterministic", None)
    if det is not None:
        det = np.asarray(det, dtype=float).reshape(N, -1)
    M = int(options.get("intercept", True)) + (0 if det is None else det.shape[1])
    smallest = N - np.bincount(folds, minlength=k).max()
    if smallest < max(4, M + 2):
        raise InsufficientSampleError(
            f"smallest training fold has {smallest} rows; at least {max(4, M + 2)} needed"
        )

    errs = np.empty((k, grid.size))
    for f in range(k):
        tr, te = folds != f, folds == f
        design = prepare(
            X[tr], y[tr], deterministic=None if det is None else det[tr], **options
        )
        D_te = _test_design(te.sum(), design.intercept, None if det is None else det[te])
        for j, (kappa, path) in enumerate(zip(grid, design.shrinkage_paths(grid))):
            beta, dcoef, _ = design.coefficients(kappa, path)
            pred = D_te @ dcoef + X[te] @ beta
            errs[f, j] = np.mean((y[te] - pred) ** 2)

    cv_mse = errs.mean(axis=0)
    cv_se = errs.std(axis=0, ddof=1) / np.sqrt(k)
    return CvResult(
        kappa_grid=grid,
        cv_mse=cv_mse,
        cv_se=cv_se,
        kappa_star=_pick(grid, cv_mse, cv_se, one_se),
        fold_assignments=folds,
        seed=seed,
    )


def _test_design(n, intercept, extra):
    cols = [np.ones((n, 1))] if intercept else []
    if extra is not None:
        cols.append(extra)
    return np.hstack(cols) if cols else np.zeros((n, 0))


def select_on_validation(X, y, X_val, y_val, kappa_grid=None, **options) -> ValidationSelection:
    """Fit on (X, y) and keep the kappa with the lowest validation MSE."""
    X_val = _as_matrix(X_val, "X_val")
    y_val = _as_vector(y_val, X_val.shape[0])
    grid = _grid(kappa_grid)
    if options.get("deterministic") is not None:
        raise ValidationError("validation selection does not take extra deterministic terms")
    design = prepare(X, y, **options)
    D_val = _test_design(X_val.shape[0], design.intercept, None)
    mse = np.empty(grid.size)
    paths = design.shrinkage_paths(grid)
    for j, (kappa, path) in enumerate(zip(grid, paths)):
        beta, dcoef, _ = design.coefficients(kappa, path)
        mse[j] = np.mean((y_val - D_val @ dcoef - X_val @ beta) ** 2)
    j = int(np.argmin(mse))
    kappa_star = float(grid[j])
    return ValidationSelection(grid, mse, kappa_star, design.finalize(kappa_star, paths[j]))
