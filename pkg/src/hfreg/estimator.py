"""Hierarchical feature regression.

Coefficients are a weighted average of level-specific regressions on the
signed cluster sums of a supervised predictor hierarchy. The weights come from
:func:`hfreg.qp.solve_qp`, which caps the effective model size at
``kappa * K`` degrees of freedom.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy import stats

from .clustering import supervised_linkage
from .exceptions import (
    InsufficientSampleError,
    NumericalError,
    RankDeficiencyError,
    ValidationError,
)
from .hierarchy import (
    Hierarchy,
    apply_sign_adjustment,
    build_hierarchy,
    level_features,
    prune_levels,
)
from .linalg import (
    StandardizationInfo,
    _as_matrix,
    _as_vector,
    correlation_matrix,
    qr_solve,
    standardize,
)
from .qp import QpProblem, ShrinkagePath, build_qp, solve_qp

logger = logging.getLogger(__name__)

#: Diagonal jitter (relative to the mean diagonal of Z'Z) for rank-deficient levels.
JITTER_SCALE = 1e-10


@dataclass(frozen=True)
class LevelFit:
    """Unconditional regression of ``y`` on the deterministic terms and one level.

    ``w_hat`` maps the cluster coefficients back to the predictors, so members
    of one cluster share ``|w_hat|``.
    """

    level: int
    n_clusters: int
    w_hat: np.ndarray
    m_hat: np.ndarray
    se_w: np.ndarray
    fitted: np.ndarray
    warning: Optional[str] = None


@dataclass(frozen=True)
class HfrFit:
    beta: np.ndarray
    beta_std: np.ndarray
    deterministic: np.ndarray
    deterministic_std: np.ndarray
    path: ShrinkagePath
    se: np.ndarray
    se_std: np.ndarray
    p_values: np.ndarray
    r2_levels: np.ndarray
    r2_total: float
    r2_deterministic: float
    hierarchy: Hierarchy
    standardization: StandardizationInfo
    level_fits: Tuple[LevelFit, ...]
    kappa: float
    n_obs: int
    intercept: bool
    n_extra_deterministic: int
    feature_names: Tuple[str, ...] = ()
    warnings: Tuple[str, ...] = ()

    @property
    def K(self) -> int:
        return self.beta.shape[0]

    @property
    def M(self) -> int:
        return self.deterministic.shape[0]

    @property
    def nu_eff(self) -> float:
        """Effective degrees of freedom including the deterministic terms."""
        return self.path.nu_eff + self.M

    @property
    def theta(self) -> np.ndarray:
        return self.path.theta

    @property
    def phi(self) -> np.ndarray:
        return self.path.phi

    def predict(self, X_new, deterministic_new=None) -> np.ndarray:
        return predict(self, X_new, deterministic_new)

    def summary(self) -> str:
        names = self.feature_names or tuple(f"x{j + 1}" for j in range(self.K))
        lines = [
            f"HFR fit: N={self.n_obs}, K={self.K}, kappa={self.kappa:.4g}, "
            f"effective df={self.nu_eff:.3f}, R2={self.r2_total:.4f}",
            f"{'term':>12} {'estimate':>12} {'std.err':>12} {'p-value':>10}",
        ]
        det_names = (["(Intercept)"] if self.intercept else []) + [
            f"det{j + 1}" for j in range(self.n_extra_deterministic)
        ]
        for nm, v in zip(det_names, self.deterministic):
            lines.append(f"{nm:>12} {v:12.5g} {'':>12} {'':>10}")
        for nm, b, s, p in zip(names, self.beta, self.se, self.p_values):
            lines.append(f"{nm:>12} {b:12.5g} {s:12.5g} {p:10.4g}")
        return "\n".join(lines)


def _deterministic_matrix(n, intercept, extra):
    cols = []
    if intercept:
        cols.append(np.ones((n, 1)))
    if extra is not None:
        extra = np.asarray(extra, dtype=float)
        if extra.ndim == 1:
            extra = extra[:, None]
        if extra.shape[0] != n:
            raise ValidationError("deterministic terms and X differ in row count")
        if not np.all(np.isfinite(extra)):
            raise ValidationError("deterministic terms contain non-finite entries")
        cols.append(extra)
    if not cols:
        return np.zeros((n, 0))
    return np.hstack(cols)


def _regress(Zt, y, M, S):
    """One augmented level regression; returns a :class:`LevelFit` minus level id."""
    n, p = Zt.shape
    warning = None
    try:
        coef, r_inv = qr_solve(Zt, y)
        xtx_inv_diag = np.einsum("ij,ij->i", r_inv, r_inv)
    except RankDeficiencyError:
        G = Zt.T @ Zt
        jitter = JITTER_SCALE * np.trace(G) / p
        G[np.diag_indices_from(G)] += jitter
        try:
            cho = scipy.linalg.cho_factor(G)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("level regression is singular even after jitter") from exc
        coef = scipy.linalg.cho_solve(cho, Zt.T @ y)
        xtx_inv_diag = np.diag(scipy.linalg.cho_solve(cho, np.eye(p)))
        warning = f"rank-deficient design with {p} columns; solved with jitter {jitter:.3g}"
    fitted = Zt @ coef
    resid = y - fitted
    df = n - p
    if df > 0:
        sigma2 = resid @ resid / df
        se_coef = np.sqrt(np.maximum(sigma2 * xtx_inv_diag, 0.0))
    else:
        se_coef = np.full(p, np.nan)
    m_hat = coef[:M]
    w_hat = S.T @ coef[M:]
    se_w = np.abs(S).T @ se_coef[M:]
    return w_hat, m_hat, se_w, fitted, warning


def fit_level_regressions(X, y, h: Hierarchy, D=None) -> List[LevelFit]:
    """Regress ``y`` on ``[D, z_l]`` separately for every level of ``h``.

    ``X`` is the standardized predictor block and ``D`` the deterministic
    block (``None`` for no deterministic terms).
    """
    X = _as_matrix(X)
    n = X.shape[0]
    y = _as_vector(y, n)
    D = np.zeros((n, 0)) if D is None else np.asarray(D, dtype=float).reshape(n, -1)
    M = D.shape[1]
    deepest = max(h.n_clusters)
    if n <= M + deepest - 1:
        raise InsufficientSampleError(
            f"N={n} too small for {M} deterministic terms and {deepest} clusters"
        )
    fits = []
    for lv in range(h.L):
        S = h.summing_matrix(lv)
        Zt = np.hstack([D, X @ S.T])
        w_hat, m_hat, se_w, fitted, warning = _regress(Zt, y, M, S)
        if warning:
            logger.warning("level %d: %s", lv + 1, warning)
        fits.append(
            LevelFit(
                level=lv + 1,
                n_clusters=S.shape[0],
                w_hat=w_hat,
                m_hat=m_hat,
                se_w=se_w,
                fitted=fitted,
                warning=warning,
            )
        )
    return fits


def _base_fit(y, D):
    """Deterministic-only regression (the empty level)."""
    if D.shape[1] == 0:
        return np.zeros(0), np.zeros_like(y)
    coef, _ = qr_solve(D, y)
    return coef, D @ coef


def assemble_estimates(level_fits: Sequence[LevelFit], path: ShrinkagePath, base_m=None):
    """Model average of the level estimates.

    Returns ``(beta_std, deterministic_std)`` with
    ``beta_std = sum_l phi_l w_l``. The deterministic part is never shrunk:
    the weight ``1 - sum(phi)`` not assigned to any level goes to the
    deterministic-only regression ``base_m``.
    """
    phi = np.asarray(path.phi if isinstance(path, ShrinkagePath) else path, dtype=float)
    if phi.shape[0] != len(level_fits):
        raise ValidationError(
            f"{phi.shape[0]} weights for {len(level_fits)} level fits"
        )
    beta = np.zeros_like(level_fits[0].w_hat)
    det = np.zeros_like(level_fits[0].m_hat)
    for p, lf in zip(phi, level_fits):
        beta += p * lf.w_hat
        det += p * lf.m_hat
    if base_m is not None and det.size:
        det += (1.0 - phi.sum()) * np.asarray(base_m, dtype=float)
    return beta, det


def conditional_decomposition(X, y, h: Hierarchy, D=None) -> List[np.ndarray]:
    """Top-down chain of level estimates conditional on the preceding levels.

    Level ``l`` is regressed on the residual left by the cumulative fit of
    levels ``0..l-1``. For a nested hierarchy the vectors sum to the OLS
    slopes.
    """
    X = _as_matrix(X)
    n = X.shape[0]
    y = _as_vector(y, n)
    D = np.zeros((n, 0)) if D is None else np.asarray(D, dtype=float).reshape(n, -1)
    M = D.shape[1]
    _, cum = _base_fit(y, D)
    out = []
    for lv in range(h.L):
        S = h.summing_matrix(lv)
        Zt = np.hstack([D, X @ S.T])
        coef, _ = qr_solve(Zt, y - cum)
        out.append(S.T @ coef[M:])
        cum = cum + Zt @ coef
    return out


def standard_errors(level_fits, path, beta_std, n_obs, n_deterministic):
    """Model-averaged standard errors and two-sided t p-values.

    ``se_j = sum_l phi_l sqrt(se(w_lj)^2 + (w_lj - beta_j)^2)``; p-values use
    ``N - nu_eff - M`` residual degrees of freedom.
    """
    phi = np.asarray(path.phi, dtype=float)
    beta_std = np.asarray(beta_std, dtype=float)
    se = np.zeros_like(beta_std)
    for p, lf in zip(phi, level_fits):
        if p == 0.0:
            continue
        se += p * np.sqrt(lf.se_w**2 + (lf.w_hat - beta_std) ** 2)
    df = n_obs - (path.nu_eff + n_deterministic)
    if df <= 0:
        warnings.warn("no residual degrees of freedom left; p-values undefined", RuntimeWarning)
        return se, np.full_like(se, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        tstat = np.where(se > 0, beta_std / se, np.nan)
    p_values = 2.0 * stats.t.sf(np.abs(tstat), df)
    return se, p_values


def r2_decomposition(level_fitted, base_fitted, theta, y):
    """Level contributions to the coefficient of determination.

    The cumulative fit through level ``l`` is
    ``base + sum_{i <= l} theta_i (fitted_i - fitted_{i-1})`` with
    ``fitted_0 = base``.

    Returns
    -------
    r2_levels : ndarray, shape (L,)
    r2_total : float
    r2_deterministic : float
        Share explained by the deterministic terms alone (0 for an
        intercept-only model), so that
        ``r2_deterministic + r2_levels.sum() == r2_total``.
    """
    y = np.asarray(y, dtype=float)
    F = np.asarray(level_fitted, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    theta = np.asarray(theta, dtype=float)
    tss = np.sum((y - y.mean()) ** 2)
    if tss <= 0:
        raise ValidationError("response has zero variance; R-squared undefined")
    prev = np.asarray(base_fitted, dtype=float)
    cum = prev.copy()
    r2_cum = [1.0 - np.sum((y - cum) ** 2) / tss]
    for lv in range(F.shape[1]):
        cum = cum + theta[lv] * (F[:, lv] - prev)
        prev = F[:, lv]
        r2_cum.append(1.0 - np.sum((y - cum) ** 2) / tss)
    r2_cum = np.array(r2_cum)
    r2_det = float(r2_cum[0])
    # intercept-only base leaves round-off in r2_cum[0]; it is exactly 0
    if np.allclose(base_fitted, y.mean(), rtol=0, atol=1e-12 * max(1.0, abs(y.mean()))):
        r2_det = 0.0
        r2_cum[0] = 0.0
    r2_levels = np.diff(r2_cum)
    return r2_levels, float(r2_det + r2_levels.sum()), r2_det


def effective_df_check(X, h: Hierarchy, theta, D=None) -> float:
    """Trace of ``sum_l theta_l (P_l - P_{l-1})`` built from explicit projections.

    Test helper: materialises N x N matrices.
    """
    X = _as_matrix(X)
    n = X.shape[0]
    if n > 2000:
        raise ValidationError("effective_df_check materialises N x N projections; N <= 2000")
    D = np.zeros((n, 0)) if D is None else np.asarray(D, dtype=float).reshape(n, -1)
    theta = np.asarray(theta, dtype=float)

    def proj(Z):
        if Z.shape[1] == 0:
            return np.zeros((n, n))
        Q, _ = np.linalg.qr(Z)
        return Q @ Q.T

    prev = proj(D)
    P = np.zeros((n, n))
    for lv in range(h.L):
        cur = proj(np.hstack([D, level_features(X, h, lv)]))
        P += theta[lv] * (cur - prev)
        prev = cur
    return float(np.trace(P))


@dataclass
class HfrDesign:
    """Everything about an HFR fit that does not depend on ``kappa``."""

    X_std: np.ndarray
    y: np.ndarray
    D: np.ndarray
    standardization: StandardizationInfo
    hierarchy: Hierarchy
    level_fits: List[LevelFit]
    base_m: np.ndarray
    base_fitted: np.ndarray
    intercept: bool
    n_extra_deterministic: int
    feature_names: Tuple[str, ...] = ()
    _F: Optional[np.ndarray] = field(default=None, repr=False)
    _W: Optional[np.ndarray] = field(default=None, repr=False)
    _Mh: Optional[np.ndarray] = field(default=None, repr=False)
    _qp: Optional[QpProblem] = field(default=None, repr=False)

    def __post_init__(self):
        self._F = np.column_stack([lf.fitted for lf in self.level_fits])
        self._W = np.column_stack([lf.w_hat for lf in self.level_fits])
        self._Mh = np.column_stack([lf.m_hat for lf in self.level_fits]) if self.D.shape[1] else None

    @property
    def N(self) -> int:
        return self.X_std.shape[0]

    @property
    def K(self) -> int:
        return self.X_std.shape[1]

    @property
    def M(self) -> int:
        return self.D.shape[1]

    @property
    def rhs_scale(self) -> int:
        # K for a full hierarchy, N - M - 1 after pruning; both equal L
        return self.hierarchy.L

    def _problem(self, kappa):
        _check_kappa(kappa)
        if self._qp is None:
            F = self._F - self.base_fitted[:, None]
            self._qp = build_qp(F, self.y - self.base_fitted, 1.0, self.rhs_scale)
        return replace(self._qp, kappa_rhs=float(kappa * self.rhs_scale))

    def shrinkage_path(self, kappa: float, x0=None) -> ShrinkagePath:
        return solve_qp(self._problem(kappa), kappa=kappa, x0=x0)

    def shrinkage_paths(self, kappas) -> List[ShrinkagePath]:
        """Paths for several kappas, in the given order.

        The grid is swept downwards and each solution, scaled to the next
        size constraint, warm-starts the next solve.
        """
        kappas = [float(k) for k in kappas]
        out = {}
        prev = None
        for k in sorted(set(kappas), reverse=True):
            x0 = None
            if prev is not None and prev.kappa > 0:
                x0 = prev.phi * (k / prev.kappa)
            prev = out[k] = self.shrinkage_path(k, x0=x0)
        return [out[k] for k in kappas]

    def coefficients(self, kappa: float, path: Optional[ShrinkagePath] = None):
        """Original-scale ``(beta, deterministic, path)`` without inference."""
        if path is None:
            path = self.shrinkage_path(kappa)
        beta_std = self._W @ path.phi
        det_std = self._det_std(path.phi)
        beta, det = self._to_original(beta_std, det_std)
        return beta, det, path

    def _det_std(self, phi):
        if self._Mh is None:
            return np.zeros(0)
        return self._Mh @ phi + (1.0 - phi.sum()) * self.base_m

    def _to_original(self, beta_std, det_std):
        info = self.standardization
        beta = beta_std / info.scales
        det = det_std.copy()
        if self.intercept:
            det[0] -= beta @ info.centers
        return beta, det

    def finalize(self, kappa: float, path: Optional[ShrinkagePath] = None) -> HfrFit:
        if path is None:
            path = self.shrinkage_path(kappa)
        beta_std, det_std = assemble_estimates(self.level_fits, path, self.base_m)
        beta, det = self._to_original(beta_std, det_std)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            se_std, p_values = standard_errors(
                self.level_fits, path, beta_std, self.N, self.M
            )
        msgs = [str(w.message) for w in caught]
        msgs += [lf.warning for lf in self.level_fits if lf.warning]
        for m in msgs:
            logger.warning(m)
        r2_levels, r2_total, r2_det = r2_decomposition(
            self._F, self.base_fitted, path.theta, self.y
        )
        return HfrFit(
            beta=beta,
            beta_std=beta_std,
            deterministic=det,
            deterministic_std=det_std,
            path=path,
            se=se_std / self.standardization.scales,
            se_std=se_std,
            p_values=p_values,
            r2_levels=r2_levels,
            r2_total=r2_total,
            r2_deterministic=r2_det,
            hierarchy=self.hierarchy,
            standardization=self.standardization,
            level_fits=tuple(self.level_fits),
            kappa=float(kappa),
            n_obs=self.N,
            intercept=self.intercept,
            n_extra_deterministic=self.n_extra_deterministic,
            feature_names=self.feature_names,
            warnings=tuple(msgs),
        )


def _check_kappa(kappa):
    if not (np.isfinite(kappa) and 0.0 <= kappa <= 1.0):
        raise ValidationError(f"kappa must lie in [0, 1], got {kappa}")


def prepare(
    X,
    y,
    *,
    intercept: bool = True,
    deterministic=None,
    sign_invariant: bool = False,
    sign_mode: str = "rooted",
    hierarchy: Optional[Hierarchy] = None,
    feature_names: Sequence[str] = (),
) -> HfrDesign:
    """Standardize, estimate the hierarchy and run the level regressions."""
    X = _as_matrix(X)
    N, K = X.shape
    y = _as_vector(y, N)
    if N < 4:
        raise InsufficientSampleError(f"need at least 4 observations, got {N}")
    if K < 2:
        raise ValidationError(f"need at least 2 predictors, got {K}")
    Xs, info = standardize(X, center=intercept)
    D = _deterministic_matrix(N, intercept, deterministic)
    M = D.shape[1]
    if hierarchy is None:
        merges = supervised_linkage(Xs, y, sign_invariant=sign_invariant)
        h = build_hierarchy(merges, K)
        h = apply_sign_adjustment(h, correlation_matrix(Xs), mode=sign_mode)
    else:
        if hierarchy.K != K:
            raise ValidationError(f"hierarchy is for K={hierarchy.K}, data has K={K}")
        h = hierarchy
    h = prune_levels(h, N, M)
    level_fits = fit_level_regressions(Xs, y, h, D)
    base_m, base_fitted = _base_fit(y, D)
    return HfrDesign(
        X_std=Xs,
        y=y,
        D=D,
        standardization=info,
        hierarchy=h,
        level_fits=level_fits,
        base_m=base_m,
        base_fitted=base_fitted,
        intercept=intercept,
        n_extra_deterministic=M - int(intercept),
        feature_names=tuple(feature_names),
    )


def fit(X, y, kappa: float = 1.0, **options) -> HfrFit:
    """Fit a hierarchical feature regression.

    Parameters
    ----------
    X : array, shape (N, K)
        Predictors on their original scale.
    y : array, shape (N,)
    kappa : float in [0, 1]
        Effective model size as a fraction of ``K`` (of ``N - M - 1`` when
        the hierarchy had to be pruned).
    **options
        ``intercept`` (default True), ``deterministic`` (extra unpenalised
        columns), ``sign_invariant`` (cluster on absolute partial
        correlations), ``sign_mode``, ``hierarchy`` (a fixed
        :class:`Hierarchy`), ``feature_names``.
    """
    _check_kappa(kappa)
    return prepare(X, y, **options).finalize(kappa)


def predict(fit: HfrFit, X_new, deterministic_new=None) -> np.ndarray:
    """``D_new @ deterministic + X_new @ beta`` on the original scale."""
    X_new = np.asarray(X_new, dtype=float)
    if X_new.ndim == 1:
        X_new = X_new[None, :]
    if X_new.ndim != 2 or X_new.shape[1] != fit.K:
        raise ValidationError(f"expected {fit.K} predictor columns, got shape {X_new.shape}")
    n = X_new.shape[0]
    if fit.n_extra_deterministic and deterministic_new is None:
        raise ValidationError("fit used extra deterministic terms; pass deterministic_new")
    D = _deterministic_matrix(n, fit.intercept, deterministic_new)
    if D.shape[1] != fit.M:
        raise ValidationError(f"expected {fit.M} deterministic columns, got {D.shape[1]}")
    return D @ fit.deterministic + X_new @ fit.beta
