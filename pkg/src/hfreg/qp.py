"""Quadratic program for the level weights of the shrinkage hierarchy.

The weights ``phi`` on the level-specific fits minimise

    phi' U phi - V' phi
    s.t. phi >= 0, sum(phi) <= 1, sum_l l * phi_l = kappa_rhs,

where ``U = F'F / N`` and ``V = 2 F'y / N`` for the matrix ``F`` of level
fits. The per-level shrinkage coefficients are the suffix sums
``theta_l = sum_{j >= l} phi_j``; ``sum(theta)`` equals ``kappa_rhs``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import scipy.optimize

from .exceptions import ConvergenceError, InfeasibleError, ValidationError

logger = logging.getLogger(__name__)

PSD_TOL = 1e-8


@dataclass(frozen=True)
class QpProblem:
    U: np.ndarray
    V: np.ndarray
    kappa_rhs: float

    @property
    def L(self) -> int:
        return self.V.shape[0]

    def objective(self, phi) -> float:
        phi = np.asarray(phi, dtype=float)
        return float(phi @ self.U @ phi - self.V @ phi)


@dataclass(frozen=True)
class ShrinkagePath:
    """Solution of the level-weight program."""

    phi: np.ndarray
    theta: np.ndarray
    kappa: float
    kappa_rhs: float
    objective: float = float("nan")
    kkt: Dict[str, float] = field(default_factory=dict)
    iterations: int = 0

    @property
    def nu_eff(self) -> float:
        """Effective degrees of freedom of the slope part (``sum(theta)``)."""
        return float(self.theta.sum())

    @property
    def L(self) -> int:
        return self.phi.shape[0]


def phi_to_theta(phi) -> np.ndarray:
    """Suffix sums ``theta_l = sum_{j >= l} phi_j``."""
    phi = np.asarray(phi, dtype=float)
    return np.cumsum(phi[::-1])[::-1].copy()


def theta_to_phi(theta) -> np.ndarray:
    """First differences ``phi_l = theta_l - theta_{l+1}`` with ``theta_{L+1} = 0``."""
    theta = np.asarray(theta, dtype=float)
    phi = theta.copy()
    phi[:-1] -= theta[1:]
    return phi


def build_qp(level_fits, y, kappa: float, rhs_scale: float) -> QpProblem:
    """Assemble ``U``, ``V`` and the size constraint from the level fits.

    Parameters
    ----------
    level_fits : array, shape (N, L)
        Column ``l`` holds the fitted response of level ``l``.
    y : array, shape (N,)
    kappa : float in [0, 1]
    rhs_scale : float
        ``K`` for a full hierarchy, ``N - M - 1`` after pruning.
    """
    F = np.asarray(level_fits, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    y = np.asarray(y, dtype=float).ravel()
    if F.shape[0] != y.shape[0]:
        raise ValidationError("level fits and response differ in length")
    if not (np.all(np.isfinite(F)) and np.all(np.isfinite(y))):
        raise ValidationError("non-finite level fits or response")
    if not 0.0 <= kappa <= 1.0:
        raise ValidationError(f"kappa must lie in [0, 1], got {kappa}")
    N = F.shape[0]
    U = F.T @ F / N
    U = 0.5 * (U + U.T)
    V = 2.0 * (F.T @ y) / N
    return QpProblem(U=U, V=V, kappa_rhs=float(kappa * rhs_scale))


def _repair_psd(U):
    L = U.shape[0]
    norm = np.abs(U).max() if U.size else 0.0
    if norm == 0.0:
        return U
    lam_min = np.linalg.eigvalsh(U)[0]
    if lam_min < -PSD_TOL * norm:
        raise ValidationError(f"U is not positive semidefinite (min eigenvalue {lam_min:.3g})")
    if lam_min < 0:
        U = U + (1e-10 * np.trace(U) / L) * np.eye(L)
    return U


def _constraints(L):
    """Inequalities as rows of ``A x >= b``: L lower bounds, then ``-sum(x) >= -1``."""
    A = np.vstack([np.eye(L), -np.ones((1, L))])
    b = np.concatenate([np.zeros(L), [-1.0]])
    return A, b


def kkt_residuals(problem: QpProblem, phi, active_tol: float = 1e-9) -> Dict[str, float]:
    """Stationarity, feasibility and complementarity residuals at ``phi``."""
    phi = np.asarray(phi, dtype=float)
    L = problem.L
    A, b = _constraints(L)
    a_eq = np.arange(1, L + 1, dtype=float)
    grad = 2.0 * problem.U @ phi - problem.V
    slack = A @ phi - b
    active = np.flatnonzero(slack <= active_tol)
    C = np.vstack([a_eq[None, :], A[active]])
    lam, *_ = np.linalg.lstsq(C.T, grad, rcond=None)
    if lam[1:].size and lam[1:].min() < 0:
        # multipliers are not unique on degenerate faces; look for a sign-feasible set
        B = np.hstack([a_eq[:, None], -a_eq[:, None], A[active].T])
        z, _ = scipy.optimize.nnls(B, grad, maxiter=50 * B.shape[1])
        alt = np.concatenate([[z[0] - z[1]], z[2:]])
        if np.abs(grad - C.T @ alt).max() <= max(1e-10, np.abs(grad - C.T @ lam).max()):
            lam = alt
    lam_ineq = np.zeros(L + 1)
    lam_ineq[active] = lam[1:]
    stat = float(np.abs(grad - C.T @ lam).max())
    primal = float(max(0.0, -slack.min(), abs(a_eq @ phi - problem.kappa_rhs)))
    dual = float(max(0.0, -lam_ineq.min()))
    comp = float(np.abs(lam_ineq * slack).max())
    return {"stationarity": stat, "primal": primal, "dual": dual, "complementarity": comp}


def _null_space(C, L):
    if C.shape[0] == 0:
        return np.eye(L)
    _, s, Vt = np.linalg.svd(C)
    rank = int(np.sum(s > 1e-12 * max(1.0, s[0])))
    return Vt[rank:].T


def _eqp_step(G, grad, C, L, scale):
    """Step minimising the quadratic model on the null space of ``C``.

    Returns ``(p, bounded)``; ``bounded`` is False when ``p`` is a
    zero-curvature descent direction that must be cut by a constraint.
    """
    Z = _null_space(C, L)
    if Z.shape[1] == 0:
        return np.zeros(L), True
    H = Z.T @ G @ Z
    rg = Z.T @ grad
    w, Q = np.linalg.eigh(0.5 * (H + H.T))
    tol = 1e-11 * max(scale, np.abs(w).max(initial=0.0))
    flat = w <= tol
    qg = Q.T @ rg
    if flat.any() and np.abs(qg[flat]).max() > 1e-13 * scale:
        d = -(Q[:, flat] @ qg[flat])
        return Z @ d, False
    d = -(Q[:, ~flat] @ (qg[~flat] / w[~flat]))
    return Z @ d, True


def _start(L, c, x0):
    a_eq = np.arange(1, L + 1, dtype=float)
    if x0 is not None:
        x = np.where(np.asarray(x0, dtype=float) <= 1e-14, 0.0, x0)
        ok = (
            x.shape == (L,)
            and x.min() >= 0.0
            and x.sum() <= 1.0 + 1e-12
            and abs(a_eq @ x - c) <= 1e-10 * max(1.0, c)
        )
        if ok:
            W = [int(i) for i in np.flatnonzero(x == 0.0)]
            if len(W) < L - 1 and x.sum() >= 1.0 - 1e-14:
                W.append(L)
            return x, W
    x = np.zeros(L)
    x[-1] = c / L
    return x, []


def solve_qp(
    problem: QpProblem,
    kappa: Optional[float] = None,
    max_iter: Optional[int] = None,
    x0=None,
) -> ShrinkagePath:
    """Primal active-set solution of the level-weight program.

    Starts from ``phi = (0, ..., 0, kappa_rhs / L)`` with an empty working set,
    or from a feasible ``x0`` with the bounds active there in the working set.
    Blocking constraints and released constraints are chosen by smallest index
    among ties, which keeps the result deterministic. If a working set repeats
    without progress, a projected-gradient run followed by an exact polish on
    the detected support takes over.
    """
    L = problem.L
    c = problem.kappa_rhs
    if not (-1e-12 <= c <= L + 1e-12):
        raise InfeasibleError(
            f"kappa_rhs = {c} is infeasible; the feasible interval is [0, {L}]"
        )
    c = min(max(c, 0.0), float(L))
    U = _repair_psd(problem.U)
    V = problem.V
    G = 2.0 * U
    A, b = _constraints(L)
    a_eq = np.arange(1, L + 1, dtype=float)
    scale = max(1.0, np.abs(U).max(initial=0.0), np.abs(V).max(initial=0.0))
    if max_iter is None:
        max_iter = max(10 * L * L, 50)

    x, W = _start(L, c, x0)
    seen = {}
    it = 0
    status = "cap"
    at_min = False
    while it < max_iter:
        it += 1
        grad = G @ x - V
        C = np.vstack([a_eq[None, :], A[W]]) if W else a_eq[None, :]
        if at_min:
            p, bounded = np.zeros(L), True
        else:
            p, bounded = _eqp_step(G, grad, C, L, scale)
        at_min = False
        if np.abs(p).max() <= 1e-13 * max(1.0, np.abs(x).max()):
            lam, *_ = np.linalg.lstsq(C.T, grad, rcond=None)
            lam_w = lam[1:]
            if lam_w.size == 0 or lam_w.min() >= -1e-11 * scale:
                status = "optimal"
                break
            drop = int(np.flatnonzero(lam_w <= lam_w.min() + 1e-15 * scale)[0])
            key = (frozenset(W), round(problem.objective(x), 14))
            seen[key] = seen.get(key, 0) + 1
            if seen[key] > 2:
                status = "cycle"
                break
            W.pop(drop)
            continue
        Ap = A @ p
        slack = A @ x - b
        alpha = 1.0 if bounded else np.inf
        block = None
        for i in range(L + 1):
            if i in W or Ap[i] >= -1e-14:
                continue
            ai = max(slack[i], 0.0) / -Ap[i]
            if ai < alpha:
                alpha, block = ai, i
        if block is None and not bounded:
            raise ConvergenceError("unbounded descent direction on a bounded feasible set")
        x = x + alpha * p
        # a full unblocked Newton step lands on the working-face minimiser
        at_min = bounded and block is None
        if block is not None:
            if block < L:
                x[block] = 0.0
            W.append(block)
            W.sort()
    if status == "cycle":
        logger.debug("active-set cycling detected; switching to projected gradient")
        x = _polish(U, V, c, _projected_gradient(U, V, c, x))
    elif status == "cap":
        res = kkt_residuals(QpProblem(U, V, c), x)
        raise ConvergenceError(f"active-set solver hit {max_iter} iterations", residuals=res)

    x = np.maximum(x, 0.0)
    prob = QpProblem(U=U, V=V, kappa_rhs=c)
    theta = phi_to_theta(x)
    kappa_val = kappa if kappa is not None else float("nan")
    return ShrinkagePath(
        phi=x,
        theta=theta,
        kappa=kappa_val,
        kappa_rhs=c,
        objective=prob.objective(x),
        kkt=kkt_residuals(prob, x),
        iterations=it,
    )


def _project(v, c):
    """Euclidean projection onto ``{x >= 0, sum x <= 1, sum_l l x_l = c}``."""
    L = v.shape[0]
    a = np.arange(1, L + 1, dtype=float)

    def x_of(mu, nu):
        return np.maximum(v - mu * a - nu, 0.0)

    def mu_for(nu):
        lo, hi = -1.0, 1.0
        while a @ x_of(lo, nu) < c:
            lo *= 2.0
        while a @ x_of(hi, nu) > c:
            hi *= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if a @ x_of(mid, nu) > c:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    x = x_of(mu_for(0.0), 0.0)
    if x.sum() <= 1.0 + 1e-15:
        return x
    lo, hi = 0.0, 1.0
    while x_of(mu_for(hi), hi).sum() > 1.0:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if x_of(mu_for(mid), mid).sum() > 1.0:
            lo = mid
        else:
            hi = mid
    return x_of(mu_for(hi), hi)


def _projected_gradient(U, V, c, x0, iters=5000):
    G = 2.0 * U
    step = 1.0 / max(np.linalg.eigvalsh(G)[-1], 1e-12)
    x = _project(x0, c)
    for _ in range(iters):
        x_new = _project(x - step * (G @ x - V), c)
        if np.abs(x_new - x).max() < 1e-15:
            break
        x = x_new
    return x


def _polish(U, V, c, x):
    """Exact minimiser on the face identified by the support of ``x``."""
    L = x.shape[0]
    A, b = _constraints(L)
    a_eq = np.arange(1, L + 1, dtype=float)
    active = np.flatnonzero(A @ x - b <= 1e-9)
    C = np.vstack([a_eq[None, :], A[active]])
    G = 2.0 * U
    Z = _null_space(C, L)
    # particular solution on the face, then minimise over its null space
    rhs = np.concatenate([[c], b[active]])
    x0, *_ = np.linalg.lstsq(C, rhs, rcond=None)
    if Z.shape[1]:
        H = Z.T @ G @ Z
        rg = Z.T @ (G @ x0 - V)
        d = np.linalg.lstsq(H, -rg, rcond=None)[0]
        x0 = x0 + Z @ d
    if np.all(A @ x0 - b >= -1e-10):
        return x0
    return x
