"""Reference estimators used by the benchmark harness.

Penalised fits minimise

    (1 / 2N) ||y - X b||^2 + lam * (alpha * sum_j w_j |b_j| + (1 - alpha) / 2 * ||b||^2)

on standardized predictors with an unpenalised intercept (ridge, lasso,
elastic net and the adaptive lasso as special cases). Latent-variable fits
(principal components and partial least squares) regress the centred
response on the leading components.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numba
import numpy as np

from .exceptions import ConvergenceError, RankDeficiencyError, ValidationError
from .linalg import _as_matrix, _as_vector, qr_solve, standardize

METHODS = ("ols", "ridge", "lasso", "elasticnet", "adalasso", "pcr", "plsr")

#: Grid settings of the tuning helpers.
N_LAMBDA = 50
LAMBDA_RATIO = 1e-4
ALPHAS = (0.0, 0.25, 0.5, 0.75, 1.0)
# ridge has no finite lambda_max; use the elastic-net value at this alpha
RIDGE_ALPHA_PROXY = 1e-3


@dataclass(frozen=True)
class BaselineFit:
    method: str
    beta: np.ndarray
    intercept: float
    hyperparams: Dict[str, float] = field(default_factory=dict)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.beta.shape[0]:
            raise ValidationError(f"expected {self.beta.shape[0]} columns, got shape {X.shape}")
        return self.intercept + X @ self.beta


@dataclass
class _Prepared:
    Xs: np.ndarray
    yc: np.ndarray
    y_mean: float
    centers: np.ndarray
    scales: np.ndarray

    @property
    def N(self):
        return self.Xs.shape[0]

    def to_fit(self, method, beta_std, **hyper) -> BaselineFit:
        beta = beta_std / self.scales
        return BaselineFit(
            method=method,
            beta=beta,
            intercept=float(self.y_mean - beta @ self.centers),
            hyperparams=hyper,
        )


def _prepare(X, y) -> _Prepared:
    X = _as_matrix(X)
    y = _as_vector(y, X.shape[0])
    Xs, info = standardize(X)
    ym = float(y.mean())
    return _Prepared(Xs=Xs, yc=y - ym, y_mean=ym, centers=info.centers, scales=info.scales)


def fit_ols(X, y) -> BaselineFit:
    """Least squares with an intercept."""
    X = _as_matrix(X)
    y = _as_vector(y, X.shape[0])
    N, K = X.shape
    if N <= K + 1:
        raise RankDeficiencyError(K + 1, rank=N)
    coef, _ = qr_solve(np.column_stack([np.ones(N), X]), y)
    return BaselineFit("ols", coef[1:], float(coef[0]))


@numba.njit(cache=True)
def _cd_enet(Q, c, yy, lam, alpha, w, beta, tol, max_sweeps):
    """Covariance-update coordinate descent.

    ``Q = X'X / N``, ``c = X'y / N``, ``yy = y'y / N``; ``beta`` is updated in
    place. Returns ``(sweeps, status)`` with status 0 converged, 1 sweep cap,
    2 objective increase.
    """
    K = Q.shape[0]
    q = c - Q @ beta
    l1 = lam * alpha
    l2 = lam * (1.0 - alpha)

    prev_obj = np.inf
    for sweep in range(max_sweeps):
        max_change = 0.0
        for j in range(K):
            qjj = Q[j, j]
            rho = q[j] + qjj * beta[j]
            thr = l1 * w[j]
            if rho > thr:
                new = (rho - thr) / (qjj + l2)
            elif rho < -thr:
                new = (rho + thr) / (qjj + l2)
            else:
                new = 0.0
            d = new - beta[j]
            if d != 0.0:
                for k in range(K):
                    q[k] -= Q[k, j] * d
                beta[j] = new
                ch = abs(d) * np.sqrt(qjj)
                if ch > max_change:
                    max_change = ch
        # (1/2N)||y - Xb||^2 = (yy - 2 c'b + b'Qb) / 2 with Qb = c - q
        obj = 0.5 * (yy - c @ beta - q @ beta)
        pen = 0.0
        for j in range(K):
            pen += l1 * w[j] * abs(beta[j]) + 0.5 * l2 * beta[j] * beta[j]
        obj += pen
        if obj > prev_obj + 1e-12 * (1.0 + abs(prev_obj)):
            return sweep + 1, 2
        prev_obj = obj
        if max_change < tol:
            return sweep + 1, 0
    return max_sweeps, 1


def _run_cd(P: _Prepared, lam, alpha, weights=None, beta0=None, tol=1e-10, max_sweeps=100_000):
    N, K = P.Xs.shape
    Q = P.Xs.T @ P.Xs / N
    c = P.Xs.T @ P.yc / N
    yy = float(P.yc @ P.yc / N)
    w = np.ones(K) if weights is None else np.asarray(weights, dtype=float)
    beta = np.zeros(K) if beta0 is None else np.array(beta0, dtype=float)
    sweeps, status = _cd_enet(Q, c, yy, float(lam), float(alpha), w, beta, float(tol), int(max_sweeps))
    if status == 1:
        raise ConvergenceError(f"coordinate descent exceeded {max_sweeps} sweeps")
    if status == 2:
        raise AssertionError("coordinate descent objective increased between sweeps")
    return beta


def _ridge_std(P: _Prepared, lam):
    N, K = P.Xs.shape
    G = P.Xs.T @ P.Xs / N + lam * np.eye(K)
    return np.linalg.solve(G, P.Xs.T @ P.yc / N)


def fit_penalized(
    X,
    y,
    method: str,
    lam: float,
    alpha: float = 1.0,
    *,
    weights=None,
    pilot_lambda: Optional[float] = None,
    tol: float = 1e-10,
    max_sweeps: int = 100_000,
) -> BaselineFit:
    """Ridge, lasso, elastic-net or adaptive-lasso fit at one penalty level.

    ``alpha`` is only used by ``elasticnet``. ``adalasso`` takes penalty
    weights ``1 / |b_ridge|`` from a ridge pilot at ``pilot_lambda`` unless
    ``weights`` are given.
    """
    if lam < 0:
        raise ValidationError("lam must be nonnegative")
    P = _prepare(X, y)
    if method == "ridge":
        return P.to_fit("ridge", _ridge_std(P, lam), lam=lam)
    if method == "lasso":
        alpha = 1.0
    elif method == "elasticnet":
        if not 0.0 <= alpha <= 1.0:
            raise ValidationError("alpha must lie in [0, 1]")
        if alpha == 0.0:
            return P.to_fit("elasticnet", _ridge_std(P, lam), lam=lam, alpha=0.0)
    elif method == "adalasso":
        alpha = 1.0
        if weights is None:
            if pilot_lambda is None:
                raise ValidationError("adalasso needs weights or pilot_lambda")
            weights = adaptive_weights(_ridge_std(P, pilot_lambda))
    else:
        raise ValidationError(f"unknown penalised method {method!r}")
    beta = _run_cd(P, lam, alpha, weights, tol=tol, max_sweeps=max_sweeps)
    hyper = {"lam": lam}
    if method == "elasticnet":
        hyper["alpha"] = alpha
    if method == "adalasso" and pilot_lambda is not None:
        hyper["pilot_lambda"] = pilot_lambda
    return P.to_fit(method, beta, **hyper)


def adaptive_weights(pilot_std, exponent: float = 1.0, floor: float = 1e-10):
    """Penalty weights ``|pilot|^-exponent`` (pilot on the standardized scale)."""
    return 1.0 / np.maximum(np.abs(pilot_std), floor) ** exponent


def lambda_max(P: _Prepared, alpha: float, weights=None) -> float:
    """Smallest penalty that zeroes every coefficient."""
    c = np.abs(P.Xs.T @ P.yc) / P.N
    if weights is not None:
        c = c / np.asarray(weights, dtype=float)
    return float(c.max() / max(alpha, RIDGE_ALPHA_PROXY))


def lambda_grid(lmax: float, n: int = N_LAMBDA, ratio: float = LAMBDA_RATIO) -> np.ndarray:
    """Descending log-spaced grid from ``lmax`` to ``ratio * lmax``."""
    lmax = max(lmax, 1e-12)
    return np.geomspace(lmax, lmax * ratio, n)


def penalized_path(P: _Prepared, alpha: float, lambdas, weights=None, tol=1e-8) -> np.ndarray:
    """Standardized-scale coefficients along a descending ``lambdas`` grid.

    Returns an array of shape ``(len(lambdas), K)``; coordinate descent is
    warm-started from the previous grid point.
    """
    K = P.Xs.shape[1]
    out = np.empty((len(lambdas), K))
    if alpha == 0.0:
        N = P.N
        Q = P.Xs.T @ P.Xs / N
        c = P.Xs.T @ P.yc / N
        evals, evecs = np.linalg.eigh(Q)
        proj = evecs.T @ c
        for i, lam in enumerate(lambdas):
            out[i] = evecs @ (proj / (evals + lam))
        return out
    beta = np.zeros(K)
    for i, lam in enumerate(lambdas):
        beta = _run_cd(P, lam, alpha, weights, beta0=beta, tol=tol)
        out[i] = beta
    return out


def pcr_path(P: _Prepared, max_components: Optional[int] = None) -> np.ndarray:
    """PCR coefficients for 1..max_components components, shape (m, K)."""
    N, K = P.Xs.shape
    m_cap = min(N - 1, K)
    m = m_cap if max_components is None else max_components
    if not 1 <= m <= m_cap:
        raise RankDeficiencyError(m, rank=m_cap)
    U, s, Vt = np.linalg.svd(P.Xs, full_matrices=False)
    if s[m - 1] <= 1e-12 * s[0]:
        raise RankDeficiencyError(m, rank=int(np.sum(s > 1e-12 * s[0])))
    gamma = (U.T @ P.yc)[:m] / s[:m]
    contrib = Vt[:m].T * gamma  # K x m
    return np.cumsum(contrib, axis=1).T


def plsr_path(P: _Prepared, max_components: Optional[int] = None) -> np.ndarray:
    """PLS1 coefficients (score deflation) for 1..max_components, shape (m, K).

    Weight vectors are oriented so that their largest-magnitude entry is
    positive; this does not affect the coefficients.
    """
    N, K = P.Xs.shape
    m_cap = min(N - 1, K)
    m = m_cap if max_components is None else max_components
    if not 1 <= m <= m_cap:
        raise RankDeficiencyError(m, rank=m_cap)
    X = P.Xs.copy()
    y = P.yc.copy()
    W = np.zeros((K, m))
    Pl = np.zeros((K, m))
    q = np.zeros(m)
    out = np.empty((m, K))
    scale = np.linalg.norm(P.Xs.T @ P.yc)
    for a in range(m):
        w = X.T @ y
        nw = np.linalg.norm(w)
        if nw <= 1e-12 * max(scale, 1e-300):
            # response fully explained; further components add nothing
            out[a:] = out[a - 1] if a else 0.0
            return out
        w /= nw
        if w[np.argmax(np.abs(w))] < 0:
            w = -w
        t = X @ w
        tt = t @ t
        p = X.T @ t / tt
        qa = (y @ t) / tt
        X -= np.outer(t, p)
        y -= qa * t
        W[:, a], Pl[:, a], q[a] = w, p, qa
        Wa, Pa = W[:, : a + 1], Pl[:, : a + 1]
        out[a] = Wa @ np.linalg.solve(Pa.T @ Wa, q[: a + 1])
    return out


def fit_latent(X, y, method: str, n_components: int) -> BaselineFit:
    """Principal-components or partial-least-squares regression."""
    P = _prepare(X, y)
    if method == "pcr":
        path = pcr_path(P, n_components)
    elif method == "plsr":
        path = plsr_path(P, n_components)
    else:
        raise ValidationError(f"unknown latent method {method!r}")
    return P.to_fit(method, path[-1], n_components=n_components)


def _select(P: _Prepared, path_std, X_val, y_val):
    """Index of the path row with the smallest validation MSE (first on ties)."""
    betas = path_std / P.scales
    intercepts = P.y_mean - betas @ P.centers
    pred = X_val @ betas.T + intercepts
    mse = np.mean((np.asarray(y_val)[:, None] - pred) ** 2, axis=0)
    i = int(np.argmin(mse))
    return i, float(mse[i])


def tune_on_validation(method: str, X, y, X_val, y_val) -> BaselineFit:
    """Fit ``method`` on (X, y) with hyperparameters chosen on the validation split.

    Grids: 50 log-spaced penalties from ``lambda_max`` down to
    ``1e-4 * lambda_max``; ``alpha`` in {0, .25, .5, .75, 1} for the elastic
    net; 1..min(N-1, K) components for PCR and PLSR.
    """
    X_val = _as_matrix(X_val, "X_val")
    if method == "ols":
        return fit_ols(X, y)
    P = _prepare(X, y)
    if method in ("ridge", "lasso"):
        alpha = 0.0 if method == "ridge" else 1.0
        lams = lambda_grid(lambda_max(P, alpha))
        i, _ = _select(P, penalized_path(P, alpha, lams), X_val, y_val)
        path = penalized_path(P, alpha, lams[i : i + 1]) if alpha == 0.0 else None
        beta = path[0] if path is not None else penalized_path(P, alpha, lams[: i + 1])[-1]
        return P.to_fit(method, beta, lam=float(lams[i]))
    if method == "elasticnet":
        best = None
        for alpha in ALPHAS:
            lams = lambda_grid(lambda_max(P, alpha))
            path = penalized_path(P, alpha, lams)
            i, mse = _select(P, path, X_val, y_val)
            if best is None or mse < best[0]:
                best = (mse, path[i], float(lams[i]), alpha)
        _, beta, lam, alpha = best
        return P.to_fit("elasticnet", beta, lam=lam, alpha=alpha)
    if method == "adalasso":
        ridge_lams = lambda_grid(lambda_max(P, 0.0))
        ridge_path = penalized_path(P, 0.0, ridge_lams)
        i, _ = _select(P, ridge_path, X_val, y_val)
        weights = adaptive_weights(ridge_path[i])
        lams = lambda_grid(lambda_max(P, 1.0, weights))
        path = penalized_path(P, 1.0, lams, weights)
        j, _ = _select(P, path, X_val, y_val)
        return P.to_fit(
            "adalasso", path[j], lam=float(lams[j]), pilot_lambda=float(ridge_lams[i])
        )
    if method in ("pcr", "plsr"):
        path = pcr_path(P) if method == "pcr" else plsr_path(P)
        i, _ = _select(P, path, X_val, y_val)
        return P.to_fit(method, path[i], n_components=i + 1)
    raise ValidationError(f"unknown method {method!r}")
