import numpy as np
import pytest

from hfreg.exceptions import InsufficientSampleError, ValidationError
from hfreg.selection import DEFAULT_GRID, cross_validate, make_folds, select_on_validation
from hfreg.simulation import _stream, generate, named_spec

from conftest import ols, random_corr_data


def ols_cv_mse(X, y, folds):
    errs = []
    for f in range(folds.max() + 1):
        tr, te = folds != f, folds == f
        a, b = ols(X[tr], y[tr])
        errs.append(np.mean((y[te] - a - X[te] @ b) ** 2))
    return np.mean(errs)


def test_leave_one_out_folds():
    folds = make_folds(10, 10, 3)
    assert sorted(folds) == list(range(10))


def test_balanced_fold_sizes():
    assert sorted(np.bincount(make_folds(10, 3, 0))) == [3, 3, 4]


def test_folds_deterministic():
    assert np.array_equal(make_folds(37, 5, 42), make_folds(37, 5, 42))
    assert not np.array_equal(make_folds(37, 5, 42), make_folds(37, 5, 43))


def test_fold_count_checked():
    with pytest.raises(ValidationError):
        make_folds(5, 6, 0)
    with pytest.raises(ValidationError):
        make_folds(5, 1, 0)


def test_kappa_one_grid_is_ols_cv(rng):
    X, y = random_corr_data(rng, 50, 5)
    res = cross_validate(X, y, [1.0], k=5, seed=3)
    assert res.kappa_star == 1.0
    assert res.cv_mse[0] == pytest.approx(ols_cv_mse(X, y, res.fold_assignments), abs=1e-10)


def test_grid_order_does_not_matter(rng):
    X, y = random_corr_data(rng, 40, 5)
    a = cross_validate(X, y, [0.2, 0.6, 1.0, 0.4], k=5, seed=1)
    b = cross_validate(X, y, [1.0, 0.6, 0.4, 0.2], k=5, seed=1)
    assert a.kappa_star == b.kappa_star
    np.testing.assert_array_equal(a.cv_mse, b.cv_mse)


def test_deterministic_and_grid_membership(rng):
    X, y = random_corr_data(rng, 40, 5)
    a = cross_validate(X, y, seed=9)
    b = cross_validate(X, y, seed=9)
    np.testing.assert_array_equal(a.cv_mse, b.cv_mse)
    assert a.kappa_star in a.kappa_grid
    np.testing.assert_array_equal(a.kappa_grid, DEFAULT_GRID)
    assert np.all(np.isfinite(a.cv_mse)) and np.all(a.cv_se >= 0)


def test_ties_go_to_smaller_kappa(rng):
    X = rng.normal(size=(30, 4))
    y = rng.normal(size=30)
    # kappa 0 and a tiny kappa fit the same intercept-only model on every fold
    res = cross_validate(X, y, [1e-300, 0.0], k=3, seed=0)
    assert res.cv_mse[0] == res.cv_mse[1]
    assert res.kappa_star == 0.0


def test_one_se_rule_is_more_conservative(rng):
    X, y = random_corr_data(rng, 40, 6, noise=3.0)
    plain = cross_validate(X, y, k=5, seed=2)
    rule = cross_validate(X, y, k=5, seed=2, one_se=True)
    assert rule.kappa_star <= plain.kappa_star
    i = list(rule.kappa_grid).index(rule.kappa_star)
    j = int(np.argmin(rule.cv_mse))
    assert rule.cv_mse[i] <= rule.cv_mse[j] + rule.cv_se[j]


def test_noise_prefers_small_kappa():
    grid = np.round(np.linspace(0.1, 1.0, 10), 10)
    small = 0
    for r in range(50):
        rng = np.random.default_rng(1000 + r)
        X = rng.normal(size=(50, 6))
        y = rng.normal(size=50)
        small += cross_validate(X, y, grid, k=10, seed=r).kappa_star <= 0.2
    assert small >= 40


@pytest.mark.slow
def test_grouped_design_regularizes():
    spec = named_spec("c")
    below = 0
    for r in range(100):
        tr, _, _ = generate(spec, _stream(3, "c", r, 0))
        below += cross_validate(tr.X, tr.y, k=10, seed=r).kappa_star < 1.0
    assert below >= 95


def test_small_folds_rejected(rng):
    X, y = random_corr_data(rng, 6, 3)
    with pytest.raises(InsufficientSampleError):
        cross_validate(X, y, k=2, seed=0)


def test_explicit_folds_and_deterministic_terms(rng):
    X, y = random_corr_data(rng, 40, 4)
    t = np.linspace(0, 1, 40)
    folds = np.arange(40) % 4
    res = cross_validate(X, y + 3 * t, [1.0], folds=folds, deterministic=t)
    Z = np.column_stack([t, X])
    assert res.cv_mse[0] == pytest.approx(ols_cv_mse(Z, y + 3 * t, folds), abs=1e-10)
    with pytest.raises(ValidationError):
        cross_validate(X, y, folds=np.zeros(3, dtype=int))


def test_bad_grid(rng):
    X, y = random_corr_data(rng, 20, 3)
    with pytest.raises(ValidationError):
        cross_validate(X, y, [])
    with pytest.raises(ValidationError):
        cross_validate(X, y, [0.5, 1.5])


def test_validation_selection(rng):
    X, y = random_corr_data(rng, 40, 5)
    Xv, yv = random_corr_data(rng, 40, 5)
    sel = select_on_validation(X, y, Xv, yv, [0.0, 0.5, 1.0])
    j = int(np.argmin(sel.val_mse))
    assert sel.kappa_star == sel.kappa_grid[j]
    assert sel.fit.kappa == sel.kappa_star
    assert np.mean((yv - sel.fit.predict(Xv)) ** 2) == pytest.approx(sel.val_mse[j])
