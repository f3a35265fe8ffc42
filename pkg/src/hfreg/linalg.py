"""Dense linear-algebra primitives: least squares, correlations, scaling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import DegenerateColumnError, RankDeficiencyError, ValidationError

# Relative threshold on |R_ii| / |R_00| below which a pivoted QR is rank deficient.
RANK_TOL = 1e-10


def _as_matrix(X, name="X"):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ValidationError(f"{name} must be a non-empty 2-d array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError(f"{name} contains non-finite entries")
    return X


def _as_vector(y, n, name="y"):
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != n:
        raise ValidationError(f"{name} has length {y.shape[0]}, expected {n}")
    if not np.all(np.isfinite(y)):
        raise ValidationError(f"{name} contains non-finite entries")
    return y


def qr_solve(Z, y):
    """Least squares through a column-pivoted QR.

    Returns
    -------
    coef : ndarray, shape (p,)
    r_inv : ndarray, shape (p, p)
        Inverse of the triangular factor in the original column order, so that
        ``r_inv @ r_inv.T`` equals ``inv(Z.T @ Z)``.

    Raises
    ------
    RankDeficiencyError
        If the numerical rank of ``Z`` is below its column count.
    """
    n, p = Z.shape
    if n < p:
        raise RankDeficiencyError(p, rank=n)
    Q, R, piv = scipy.linalg.qr(Z, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag[0] == 0.0:
        raise RankDeficiencyError(p, rank=0)
    rank = int(np.sum(diag > RANK_TOL * diag[0]))
    if rank < p:
        raise RankDeficiencyError(p, rank=rank)
    coef_piv = scipy.linalg.solve_triangular(R, Q.T @ y)
    coef = np.empty(p)
    coef[piv] = coef_piv
    r_inv_piv = scipy.linalg.solve_triangular(R, np.eye(p))
    r_inv = np.empty_like(r_inv_piv)
    r_inv[piv] = r_inv_piv
    return coef, r_inv


def solve_least_squares(Z, y, jitter=0.0):
    """Coefficient vector minimising ``||Z c - y||^2``.

    With ``jitter > 0`` the regularised normal equations
    ``(Z'Z + jitter I) c = Z'y`` are solved instead.
    """
    Z = _as_matrix(Z, "Z")
    y = _as_vector(y, Z.shape[0])
    if jitter < 0:
        raise ValidationError("jitter must be nonnegative")
    if jitter == 0:
        return qr_solve(Z, y)[0]
    G = Z.T @ Z
    G[np.diag_indices_from(G)] += jitter
    try:
        return scipy.linalg.solve(G, Z.T @ y, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise RankDeficiencyError(Z.shape[1]) from exc


def correlation_matrix(X):
    """Pearson correlation matrix of the columns of ``X``."""
    X = _as_matrix(X)
    if X.shape[0] < 2:
        raise ValidationError("correlation needs at least two rows")
    Xc = X - X.mean(axis=0)
    ss = np.sqrt(np.einsum("ij,ij->j", Xc, Xc))
    bad = np.flatnonzero(ss <= np.finfo(float).tiny)
    if bad.size:
        raise DegenerateColumnError(int(bad[0]))
    Xn = Xc / ss
    R = Xn.T @ Xn
    R = 0.5 * (R + R.T)
    np.clip(R, -1.0, 1.0, out=R)
    R[np.diag_indices_from(R)] = 1.0
    return R


@dataclass(frozen=True)
class StandardizationInfo:
    """Column centres and scales (sample standard deviation, divisor N-1)."""

    centers: np.ndarray
    scales: np.ndarray

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.centers.shape[0]:
            raise ValidationError(
                f"expected {self.centers.shape[0]} columns, got shape {X.shape}"
            )
        return (X - self.centers) / self.scales

    def inverse_transform(self, Xs):
        return np.asarray(Xs, dtype=float) * self.scales + self.centers


def standardize(X, center=True):
    """Centre columns and divide by their sample standard deviation.

    ``center=False`` leaves the location untouched (centres recorded as 0) but
    still rescales, which keeps models without an intercept well defined.
    """
    X = _as_matrix(X)
    n = X.shape[0]
    if n < 2:
        raise ValidationError("standardization needs at least two rows")
    mean = X.mean(axis=0)
    sd = X.std(axis=0, ddof=1)
    scale_floor = 1e-14 * np.maximum(1.0, np.abs(mean))
    bad = np.flatnonzero(sd <= scale_floor)
    if bad.size:
        raise DegenerateColumnError(int(bad[0]))
    centers = mean if center else np.zeros_like(mean)
    info = StandardizationInfo(centers=centers, scales=sd)
    Xs = (X - centers) / sd
    if center:
        # remove the O(eps) residual mean left by the division
        Xs -= Xs.mean(axis=0)
    return Xs, info
