"""Supervised dissimilarities and Ward agglomeration of predictors.

Predictors are compared through their bivariate partial correlations with the
response: row ``i`` of the dissimilarity matrix holds ``r(x_i, y | x_k)`` for
every other predictor ``k``. Rows are then clustered with Ward's method.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .exceptions import CollinearityError, ValidationError
from .linalg import _as_matrix, _as_vector, correlation_matrix

#: Ward variant: Lance-Williams recurrence on squared distances, heights are the
#: square root of the updated value (the "ward.D2" convention).
WARD_VARIANT = "ward.D2"

#: Two candidate merge costs closer than this are treated as tied.
TIE_TOL = 1e-12

_COLLINEAR_TOL = 1e-12


@dataclass(frozen=True)
class DissimilarityRows:
    """K x K partial-correlation matrix whose diagonal is undefined.

    The diagonal is stored as NaN and masked; ``offdiag`` exposes the defined
    entries only.
    """

    values: np.ndarray

    @property
    def K(self) -> int:
        return self.values.shape[0]

    def entry(self, i, j):
        if i == j:
            raise AssertionError("diagonal of the dissimilarity matrix is undefined")
        return self.values[i, j]

    def absolute(self) -> "DissimilarityRows":
        return DissimilarityRows(np.abs(self.values))


@dataclass(frozen=True)
class MergeSequence:
    """Agglomeration history.

    ``steps[t] = (left, right, cost)`` with 1-based cluster ids: leaves are
    ``1..K`` and the merge at step ``t`` (0-based) creates cluster ``K + t + 1``.
    """

    K: int
    steps: Tuple[Tuple[int, int, float], ...]

    def __post_init__(self):
        if len(self.steps) != self.K - 1:
            raise ValidationError(
                f"merge sequence for K={self.K} needs {self.K - 1} steps, got {len(self.steps)}"
            )
        seen = set()
        for t, (a, b, cost) in enumerate(self.steps):
            limit = self.K + t
            for c in (a, b):
                if not 1 <= c <= limit:
                    raise ValidationError(f"step {t}: cluster id {c} does not exist yet")
                if c in seen:
                    raise ValidationError(f"step {t}: cluster id {c} merged twice")
                seen.add(c)
            if a == b:
                raise ValidationError(f"step {t}: cannot merge cluster {a} with itself")
            if not cost >= 0:
                raise ValidationError(f"step {t}: merge cost must be nonnegative")

    @property
    def costs(self) -> np.ndarray:
        return np.array([s[2] for s in self.steps], dtype=float)

    def to_scipy(self) -> np.ndarray:
        """Linkage matrix in scipy's 0-based layout (for plotting helpers)."""
        sizes = {i: 1 for i in range(1, self.K + 1)}
        rows = []
        for t, (a, b, cost) in enumerate(self.steps):
            sizes[self.K + t + 1] = sizes[a] + sizes[b]
            rows.append([a - 1, b - 1, cost, sizes[self.K + t + 1]])
        return np.array(rows, dtype=float).reshape(-1, 4)


def partial_correlation_matrix(X, y) -> DissimilarityRows:
    """Bivariate partial correlations ``r(x_i, y | x_j)`` for all ``i != j``.

    Entry ``(i, j)`` is
    ``(r_yi - r_yj r_ij) / sqrt((1 - r_yj^2)(1 - r_ij^2))``; the result is not
    symmetric.
    """
    X = _as_matrix(X)
    y = _as_vector(y, X.shape[0])
    K = X.shape[1]
    if K < 2:
        raise ValidationError("need at least two predictors")
    R = correlation_matrix(np.column_stack([X, y]))
    r_xx = R[:K, :K]
    r_y = R[:K, K]

    if np.any(np.abs(r_y) >= 1 - _COLLINEAR_TOL):
        j = int(np.argmax(np.abs(r_y)))
        raise CollinearityError(("y", j), f"predictor {j} is perfectly correlated with y")
    off = ~np.eye(K, dtype=bool)
    hit = np.argwhere((np.abs(r_xx) >= 1 - _COLLINEAR_TOL) & off)
    if hit.size:
        i, j = (int(v) for v in hit[0])
        raise CollinearityError((i, j), f"predictors {i} and {j} are perfectly correlated")

    num = r_y[:, None] - r_y[None, :] * r_xx
    den = np.sqrt((1.0 - r_y[None, :] ** 2) * (1.0 - r_xx**2))
    D = np.full((K, K), np.nan)
    D[off] = num[off] / den[off]
    return DissimilarityRows(D)


def row_distance(D: DissimilarityRows, i: int, j: int) -> float:
    """Euclidean distance between rows ``i`` and ``j`` over columns not in {i, j}."""
    if i == j:
        raise ValidationError("row_distance needs two distinct rows")
    keep = np.ones(D.K, dtype=bool)
    keep[[i, j]] = False
    if not keep.any():
        return 0.0
    diff = D.values[i, keep] - D.values[j, keep]
    return float(np.sqrt(diff @ diff))


def row_distance_matrix(D: DissimilarityRows) -> np.ndarray:
    """All pairwise :func:`row_distance` values as a symmetric K x K matrix."""
    V = D.values
    K = D.K
    out = np.zeros((K, K))
    A = np.where(np.isnan(V), 0.0, V)
    for i in range(K - 1):
        diff = A[i] - A[i + 1 :]
        # columns i and j are dropped: zero them before squaring
        diff[:, i] = 0.0
        diff[np.arange(K - i - 1), np.arange(i + 1, K)] = 0.0
        out[i, i + 1 :] = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    out += out.T
    return out


def ward_linkage(D: DissimilarityRows) -> MergeSequence:
    """Ward agglomeration of the rows of ``D``.

    Squared row distances are updated with the Lance-Williams recurrence

        d2(k, a+b) = ((n_k+n_a) d2(k,a) + (n_k+n_b) d2(k,b) - n_k d2(a,b)) / (n_k+n_a+n_b)

    and the reported cost of a merge is ``sqrt(d2)``. Ties within
    :data:`TIE_TOL` go to the pair with the smallest ``(min id, max id)``.
    """
    K = D.K
    if K < 2:
        raise ValidationError("ward_linkage needs K >= 2")
    dist = row_distance_matrix(D)
    if not np.all(np.isfinite(dist)):
        raise ValidationError("non-finite row distances")
    return _ward_from_distances(dist)


def _ward_from_distances(dist) -> MergeSequence:
    K = dist.shape[0]
    d2 = np.full((2 * K - 1, 2 * K - 1), np.inf)
    d2[:K, :K] = dist**2
    size = np.zeros(2 * K - 1)
    size[:K] = 1
    active = list(range(K))  # 0-based ids, kept sorted
    steps: List[Tuple[int, int, float]] = []
    for t in range(K - 1):
        idx = np.array(active)
        sub = d2[np.ix_(idx, idx)]
        iu = np.triu_indices(len(idx), 1)
        vals = sub[iu]
        best = vals.min()
        cand = np.flatnonzero(vals <= best + TIE_TOL)
        # active ids are sorted, so (row, col) order is (min id, max id) order
        pick = cand[np.lexsort((idx[iu[1][cand]], idx[iu[0][cand]]))[0]]
        a, b = int(idx[iu[0][pick]]), int(idx[iu[1][pick]])
        new = K + t
        na, nb = size[a], size[b]
        others = [k for k in active if k != a and k != b]
        if others:
            ok = np.array(others)
            nk = size[ok]
            upd = ((nk + na) * d2[ok, a] + (nk + nb) * d2[ok, b] - nk * d2[a, b]) / (nk + na + nb)
            upd = np.maximum(upd, 0.0)
            d2[ok, new] = upd
            d2[new, ok] = upd
        size[new] = na + nb
        steps.append((a + 1, b + 1, float(np.sqrt(max(d2[a, b], 0.0)))))
        active = others + [new]
    return MergeSequence(K=K, steps=tuple(steps))


def supervised_linkage(X, y, sign_invariant=False) -> MergeSequence:
    """Partial-correlation dissimilarities followed by Ward clustering."""
    D = partial_correlation_matrix(X, y)
    if sign_invariant:
        D = D.absolute()
    return ward_linkage(D)
