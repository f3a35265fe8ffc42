import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.cluster.hierarchy import linkage
from scipy.spatial.distance import squareform

from hfreg.clustering import (
    DissimilarityRows,
    MergeSequence,
    _ward_from_distances,
    partial_correlation_matrix,
    row_distance,
    row_distance_matrix,
    supervised_linkage,
    ward_linkage,
)
from hfreg.exceptions import CollinearityError, ValidationError

from conftest import random_corr_data


def scalar_partial(X, y, i, j):
    def r(a, b):
        a = a - a.mean()
        b = b - b.mean()
        return float(np.sum(a * b) / np.sqrt(np.sum(a * a) * np.sum(b * b)))

    ryi, ryj, rij = r(y, X[:, i]), r(y, X[:, j]), r(X[:, i], X[:, j])
    return (ryi - ryj * rij) / np.sqrt((1 - ryj**2) * (1 - rij**2))


def brute_ward(dist):
    """Exhaustive Ward: merge the pair with the smallest within-cluster SS increase.

    SS(C) = sum_{i<j in C} d_ij^2 / |C|; the reported height is sqrt(2 * increase).
    """
    K = dist.shape[0]
    d2 = dist**2
    clusters = {i + 1: [i] for i in range(K)}

    def ss(c):
        return sum(d2[a, b] for a, b in itertools.combinations(c, 2)) / len(c)

    steps = []
    for t in range(K - 1):
        cands = []
        for a, b in itertools.combinations(sorted(clusters), 2):
            A, B = clusters[a], clusters[b]
            cands.append((ss(A + B) - ss(A) - ss(B), a, b))
        best = min(c[0] for c in cands)
        tied = [c for c in cands if c[0] <= best + 0.5e-12]
        inc, a, b = min(tied, key=lambda c: (c[1], c[2]))
        steps.append((a, b, np.sqrt(max(2 * inc, 0.0))))
        clusters[K + t + 1] = clusters.pop(a) + clusters.pop(b)
    return steps


def partition_sets(steps, K):
    groups = {i + 1: frozenset([i]) for i in range(K)}
    out = []
    for t, (a, b, _) in enumerate(steps):
        groups[K + t + 1] = groups.pop(a) | groups.pop(b)
        out.append(groups[K + t + 1])
    return out


# partial correlations


def test_partial_reduces_to_simple_correlation(rng):
    # x2 orthogonal to x1 and to y, so r(x1, y | x2) = r(x1, y)
    y = rng.normal(size=30)
    x1 = y + rng.normal(size=30)
    B = np.column_stack([np.ones(30), x1, y])
    x2 = rng.normal(size=30)
    x2 -= B @ np.linalg.lstsq(B, x2, rcond=None)[0]
    X = np.column_stack([x1, x2])
    R = np.corrcoef(np.column_stack([X, y]).T)
    assert abs(R[0, 1]) < 1e-14 and abs(R[1, 2]) < 1e-14
    D = partial_correlation_matrix(X, y)
    assert D.entry(0, 1) == pytest.approx(R[0, 2], abs=1e-13)


def test_partial_predictor_equal_to_response_fails(rng):
    X = rng.normal(size=(20, 3))
    with pytest.raises(CollinearityError) as info:
        partial_correlation_matrix(X, X[:, 1].copy())
    assert info.value.pair == ("y", 1)


def test_partial_collinear_predictors_name_pair(rng):
    X = rng.normal(size=(20, 3))
    X[:, 2] = -3 * X[:, 0]
    with pytest.raises(CollinearityError) as info:
        partial_correlation_matrix(X, rng.normal(size=20))
    assert set(info.value.pair) == {0, 2}


def test_partial_matches_scalar_formula_k3(rng):
    X, y = random_corr_data(rng, 20, 3)
    D = partial_correlation_matrix(X, y)
    for i in range(3):
        for j in range(3):
            if i != j:
                assert abs(D.entry(i, j) - scalar_partial(X, y, i, j)) <= 1e-12


def test_partial_is_asymmetric_with_masked_diagonal(rng):
    X, y = random_corr_data(rng, 30, 4)
    D = partial_correlation_matrix(X, y)
    assert np.all(np.isnan(np.diag(D.values)))
    with pytest.raises(AssertionError):
        D.entry(2, 2)
    off = ~np.eye(4, dtype=bool)
    assert not np.allclose(D.values[off], D.values.T[off])
    assert np.all(np.abs(D.values[off]) <= 1)


# row distances


def test_row_distance_identical_rows():
    V = np.array([[np.nan, 0.9, 0.3, 0.2], [0.1, np.nan, 0.3, 0.2], [0, 0, np.nan, 0], [1, 1, 1, np.nan]])
    assert row_distance(DissimilarityRows(V), 0, 1) == 0.0


def test_row_distance_single_coordinate(rng):
    V = rng.uniform(-1, 1, (3, 3))
    np.fill_diagonal(V, np.nan)
    assert row_distance(DissimilarityRows(V), 0, 1) == abs(V[0, 2] - V[1, 2])


def test_row_distance_k2_is_zero():
    V = np.array([[np.nan, 0.4], [-0.7, np.nan]])
    assert row_distance(DissimilarityRows(V), 0, 1) == 0.0


def test_row_distance_k5_enumeration(rng):
    V = rng.uniform(-1, 1, (5, 5))
    np.fill_diagonal(V, np.nan)
    D = DissimilarityRows(V)
    full = row_distance_matrix(D)
    for i, j in itertools.permutations(range(5), 2):
        s = sum((V[i, k] - V[j, k]) ** 2 for k in range(5) if k not in (i, j))
        assert abs(row_distance(D, i, j) - np.sqrt(s)) <= 1e-14
        assert abs(full[i, j] - np.sqrt(s)) <= 1e-14


def test_row_distance_same_index_rejected():
    with pytest.raises(ValidationError):
        row_distance(DissimilarityRows(np.full((3, 3), 0.1)), 1, 1)


# Ward


def test_ward_k2():
    V = np.array([[np.nan, 0.4], [-0.7, np.nan]])
    ms = ward_linkage(DissimilarityRows(V))
    assert [s[:2] for s in ms.steps] == [(1, 2)]


def test_ward_dominant_pair_first():
    dist = np.array([[0, 1, 10], [1, 0, 10], [10, 10, 0.0]])
    ms = _ward_from_distances(dist)
    assert ms.steps[0][:2] == (1, 2)
    assert ms.steps[0][2] == pytest.approx(1.0)
    # Lance-Williams: d2(3, {1,2}) = (2*100 + 2*100 - 1) / 3
    assert ms.steps[1][2] == pytest.approx(np.sqrt(399 / 3))


def test_ward_tie_rule_picks_smallest_ids():
    dist = np.ones((4, 4)) - np.eye(4)
    ms = _ward_from_distances(dist)
    assert ms.steps[0][:2] == (1, 2)
    assert ms.steps[1][:2] == (3, 4)


def test_ward_matches_brute_force_oracle(rng):
    for _ in range(20):
        X, y = random_corr_data(rng, 50, 6)
        D = partial_correlation_matrix(X, y)
        ms = ward_linkage(D)
        oracle = brute_ward(row_distance_matrix(D))
        assert [s[:2] for s in ms.steps] == [s[:2] for s in oracle]
        np.testing.assert_allclose(ms.costs, [s[2] for s in oracle], atol=1e-12)


def test_ward_agrees_with_scipy_ward_tree(rng):
    for _ in range(10):
        X, y = random_corr_data(rng, 40, 7)
        D = partial_correlation_matrix(X, y)
        dist = row_distance_matrix(D)
        Z = linkage(squareform(dist, checks=False), method="ward")
        ours = ward_linkage(D)
        theirs = MergeSequence(7, tuple((int(a) + 1, int(b) + 1, float(h)) for a, b, h, _ in Z))
        assert partition_sets(ours.steps, 7) == partition_sets(theirs.steps, 7)
        np.testing.assert_allclose(ours.costs, Z[:, 2], atol=1e-12)


def test_ward_costs_nondecreasing(rng):
    for _ in range(10):
        X, y = random_corr_data(rng, 60, 9)
        ms = supervised_linkage(X, y)
        assert np.all(np.diff(ms.costs) >= -1e-12)


def test_ward_two_bundles_merge_within_first():
    V = np.full((6, 6), 0.0)
    V[:3, :] = 0.8
    V[3:, :] = -0.8
    V += np.arange(36).reshape(6, 6) * 1e-3
    np.fill_diagonal(V, np.nan)
    ms = ward_linkage(DissimilarityRows(V))
    parts = partition_sets(ms.steps, 6)
    assert {frozenset({0, 1, 2}), frozenset({3, 4, 5})} <= set(parts[:-1])


def test_ward_rejects_non_finite():
    V = np.array([[np.nan, np.inf, 0.1], [0.2, np.nan, 0.1], [0.3, 0.3, np.nan]])
    with pytest.raises(ValidationError):
        ward_linkage(DissimilarityRows(V))


def test_sign_invariant_uses_absolute_values(rng):
    X, y = random_corr_data(rng, 40, 5)
    flipped = X.copy()
    flipped[:, 1] *= -1
    # flipping a column changes signs in D_y; |D_y| and hence the tree are unaffected
    a = supervised_linkage(X, y, sign_invariant=True)
    b = supervised_linkage(flipped, y, sign_invariant=True)
    assert a.steps == b.steps


def test_merge_sequence_validation():
    with pytest.raises(ValidationError):
        MergeSequence(3, ((1, 2, 0.1),))
    with pytest.raises(ValidationError):
        MergeSequence(3, ((1, 2, 0.1), (1, 3, 0.2)))
    with pytest.raises(ValidationError):
        MergeSequence(3, ((1, 2, 0.1), (3, 5, 0.2)))
    with pytest.raises(ValidationError):
        MergeSequence(2, ((1, 2, -1.0),))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.permutations(list(range(5))))
def test_label_equivariance(seed, perm):
    rng = np.random.default_rng(seed)
    X, y = random_corr_data(rng, 40, 5)
    base = supervised_linkage(X, y)
    if np.min(np.diff(np.sort(base.costs))) < 1e-9:
        return
    perm = np.array(perm)
    moved = supervised_linkage(X[:, perm], y)
    mapped = [frozenset(perm[list(s)]) for s in partition_sets(moved.steps, 5)]
    assert mapped == partition_sets(base.steps, 5)
