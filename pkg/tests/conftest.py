import numpy as np
import pytest


def random_corr_data(rng, N, K, noise=1.0):
    """Gaussian predictors with a random correlation structure and a linear response."""
    A = rng.normal(size=(K, K))
    X = rng.normal(size=(N, K)) @ A + rng.normal(size=K)
    beta = rng.normal(size=K)
    y = X @ beta + 0.3 + noise * rng.normal(size=N)
    return X, y


def ols(X, y):
    Z = np.column_stack([np.ones(len(y)), X])
    coef, *_ = np.linalg.lstsq(Z, y, rcond=None)
    return coef[0], coef[1:]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
