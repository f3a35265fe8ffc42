"""Monte-Carlo benchmark: data-generating processes, method panel and reports.

Six named designs are available through :func:`named_spec` (ids ``a``..``f``).
Every run draws its own train/validation/test split from a stream derived
from ``(master seed, spec, run)``, so results do not depend on execution
order and all methods in a run see identical data.
"""

from __future__ import annotations

import hashlib
import logging
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .baselines import METHODS as BASELINE_METHODS
from .baselines import tune_on_validation
from .estimator import prepare
from .exceptions import HfrError, NumericalError, ValidationError
from .selection import select_on_validation

logger = logging.getLogger(__name__)

ALL_METHODS = ("hfr", "ridge", "plsr", "pcr", "lasso", "elasticnet", "adalasso", "ols")
HFR_GRID = np.linspace(0.0, 1.0, 101)
BOOTSTRAP_RESAMPLES = 500
MAX_FAILURE_SHARE = 0.01
THREADS_ENV = "HFREG_THREADS"

_PURPOSE_DATA = 0
_PURPOSE_BOOT = 1


class Split(NamedTuple):
    X: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class DgpSpec:
    """A linear data-generating process ``y = x beta + eps``.

    ``correlation`` is one of ``"ar"`` (``rho^|i-j|``), ``"cs"`` (constant
    ``rho`` off the diagonal), ``"groups"`` (three blocks of five near-copies
    of a latent factor plus independent noise columns) or ``"factors"``
    (predictors are sums of two of four latent factors; ``beta_true`` then
    acts on the factors). The six named ids are checked against their
    canonical definitions unless ``custom`` is set.
    """

    id: str
    n_train: int
    n_valid: int
    n_test: int
    K: int
    beta_true: Tuple[float, ...]
    sigma2: float
    correlation: str
    rho: float = 0.5
    custom: bool = False

    def __post_init__(self):
        object.__setattr__(self, "beta_true", tuple(float(b) for b in self.beta_true))
        if min(self.n_train, self.n_valid, self.n_test) < 1 or self.K < 1:
            raise ValidationError("sample sizes and K must be positive")
        if self.sigma2 < 0:
            raise ValidationError("sigma2 must be nonnegative")
        if self.correlation not in ("ar", "cs", "groups", "factors"):
            raise ValidationError(f"unknown correlation structure {self.correlation!r}")
        n_beta = 4 if self.correlation == "factors" else self.K
        if len(self.beta_true) != n_beta:
            raise ValidationError(f"beta_true needs {n_beta} entries")
        if self.correlation == "groups" and self.K < 15:
            raise ValidationError("grouped design needs K >= 15")
        if self.correlation == "factors" and self.K != 8:
            raise ValidationError("factor design has K = 8")
        if not self.custom and self.id in _CANONICAL:
            if replace(self, custom=True) != replace(_CANONICAL[self.id], custom=True):
                raise ValidationError(
                    f"spec {self.id!r} differs from its named definition; pass custom=True"
                )


def _seq(lo, hi):
    return tuple(np.linspace(lo, hi, 10))


_CANONICAL = {
    s.id: s
    for s in (
        DgpSpec("a", 20, 20, 200, 8, (0.85,) * 8, 3.0, "ar", custom=True),
        DgpSpec(
            "b", 100, 100, 400, 40,
            (0.0,) * 10 + (2.0,) * 10 + (0.0,) * 10 + (2.0,) * 10, 15.0, "ar", custom=True,
        ),
        DgpSpec("c", 50, 50, 400, 40, (3.0,) * 15 + (0.0,) * 25, 15.0, "groups", custom=True),
        DgpSpec("d", 20, 20, 200, 8, (1.0, 1.5, 2.0, 1.5), 3.0, "factors", custom=True),
        DgpSpec(
            "e", 100, 100, 400, 40,
            (0.0,) * 10 + _seq(1, 3) + (0.0,) * 10 + _seq(-1, -3), 15.0, "ar", custom=True,
        ),
        DgpSpec(
            "f", 100, 100, 400, 40,
            (0.0,) * 10 + (2.0,) * 10 + (0.0,) * 10 + (2.0,) * 10, 15.0, "cs", custom=True,
        ),
    )
}


def named_spec(spec_id: str) -> DgpSpec:
    try:
        return replace(_CANONICAL[spec_id], custom=False)
    except KeyError:
        raise ValidationError(f"unknown spec {spec_id!r}; expected one of a-f") from None


def correlation_matrix(spec: DgpSpec) -> Optional[np.ndarray]:
    """Predictor correlation for the ``ar`` and ``cs`` designs (None otherwise)."""
    K, r = spec.K, spec.rho
    if spec.correlation == "ar":
        idx = np.arange(K)
        return r ** np.abs(idx[:, None] - idx[None, :])
    if spec.correlation == "cs":
        return np.full((K, K), r) + (1.0 - r) * np.eye(K)
    return None


def _draw(spec: DgpSpec, n: int, rng: np.random.Generator) -> Split:
    beta = np.asarray(spec.beta_true)
    if spec.correlation in ("ar", "cs"):
        L = np.linalg.cholesky(correlation_matrix(spec))
        X = rng.standard_normal((n, spec.K)) @ L.T
        signal = X @ beta
    elif spec.correlation == "groups":
        xi = rng.standard_normal((n, 3))
        X = np.empty((n, spec.K))
        X[:, :15] = np.repeat(xi, 5, axis=1) + 0.1 * rng.standard_normal((n, 15))
        X[:, 15:] = rng.standard_normal((n, spec.K - 15))
        signal = X @ beta
    else:
        idx = np.arange(4)
        Lf = np.linalg.cholesky(spec.rho ** np.abs(idx[:, None] - idx[None, :]))
        f = rng.standard_normal((n, 4)) @ Lf.T
        pairs = ((0, 1), (1, 2), (2, 3), (3, 0))
        base = np.column_stack([f[:, a] + f[:, b] for a, b in pairs])
        X = np.repeat(base, 2, axis=1) + rng.standard_normal((n, 8))
        signal = f @ beta
    y = signal + np.sqrt(spec.sigma2) * rng.standard_normal(n)
    return Split(X, y)


def generate(spec: DgpSpec, seed) -> Tuple[Split, Split, Split]:
    """Independent (train, valid, test) draws; ``seed`` may be a SeedSequence."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    streams = [np.random.default_rng(s) for s in ss.spawn(3)]
    sizes = (spec.n_train, spec.n_valid, spec.n_test)
    return tuple(_draw(spec, n, g) for n, g in zip(sizes, streams))


def _stream(seed: int, spec_id: str, run: int, purpose: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(zlib.crc32(spec_id.encode()), purpose, run))


def dataset_hash(*splits: Split) -> str:
    h = hashlib.sha256()
    for s in splits:
        h.update(np.ascontiguousarray(s.X).tobytes())
        h.update(np.ascontiguousarray(s.y).tobytes())
    return h.hexdigest()[:16]


def _fit_method(method, train, valid, hfr_grid):
    if method == "hfr":
        sel = select_on_validation(train.X, train.y, valid.X, valid.y, hfr_grid)
        return sel.fit.predict
    fit = tune_on_validation(method, train.X, train.y, valid.X, valid.y)
    return fit.predict


def _one_run(spec, methods, seed, run, hfr_grid):
    train, valid, test = generate(spec, _stream(seed, spec.id, run, _PURPOSE_DATA))
    out = {}
    for m in methods:
        try:
            pred = _fit_method(m, train, valid, hfr_grid)
            mse = float(np.mean((test.y - pred(test.X)) ** 2))
            if not np.isfinite(mse):
                raise NumericalError("non-finite test MSE")
        except (HfrError, ArithmeticError, np.linalg.LinAlgError) as exc:
            logger.warning("spec %s run %d: %s failed (%s)", spec.id, run, m, exc)
            mse = np.nan
        out[m] = mse
    return run, dataset_hash(train, valid, test), out


def average_ranks(mse: np.ndarray) -> np.ndarray:
    """Per-run ranks (1 = best) with ties given their average rank."""
    return stats.rankdata(mse, axis=1, method="average")


def bootstrap_median_se(values, rng, resamples=BOOTSTRAP_RESAMPLES) -> float:
    values = np.asarray(values, dtype=float)
    idx = rng.integers(0, values.size, size=(resamples, values.size))
    meds = np.median(values[idx], axis=1)
    return float(meds.std(ddof=1)) if resamples > 1 else 0.0


@dataclass
class SimulationReport:
    spec_id: str
    methods: Tuple[str, ...]
    mse: Dict[str, np.ndarray]
    seed: int
    runs_requested: int
    failed_runs: Tuple[int, ...] = ()
    failures: Dict[str, int] = field(default_factory=dict)
    data_hashes: Tuple[str, ...] = ()
    bootstrap_se: Dict[str, float] = field(default_factory=dict)

    @property
    def runs(self) -> int:
        return len(next(iter(self.mse.values())))

    @property
    def median(self) -> Dict[str, float]:
        return {m: float(np.median(v)) for m, v in self.mse.items()}

    def ranks(self) -> np.ndarray:
        return average_ranks(np.column_stack([self.mse[m] for m in self.methods]))

    @property
    def mean_rank(self) -> Dict[str, float]:
        return dict(zip(self.methods, self.ranks().mean(axis=0)))

    def rank_interval(self, level: float = 0.95) -> Dict[str, Tuple[float, float]]:
        """Normal-approximation interval for each mean rank."""
        R = self.ranks()
        n = R.shape[0]
        z = stats.norm.ppf(0.5 + level / 2)
        mean = R.mean(axis=0)
        half = z * (R.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean))
        return {m: (float(a - h), float(a + h)) for m, a, h in zip(self.methods, mean, half)}

    def rows(self) -> List[dict]:
        med, mr, ci = self.median, self.mean_rank, self.rank_interval()
        return [
            {
                "spec": self.spec_id,
                "method": m,
                "run_count": self.runs,
                "median_mse": med[m],
                "bootstrap_se": self.bootstrap_se[m],
                "mean_rank": float(mr[m]),
                "rank_ci_low": ci[m][0],
                "rank_ci_high": ci[m][1],
            }
            for m in self.methods
        ]

    def table(self) -> str:
        lines = [f"spec {self.spec_id}: {self.runs} runs, seed {self.seed}"]
        for r in self.rows():
            lines.append(
                f"  {r['method']:<11} median {r['median_mse']:9.3f} ({r['bootstrap_se']:.3f})"
                f"  mean rank {r['mean_rank']:.2f}"
            )
        return "\n".join(lines)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def run_benchmark(
    specs: Sequence,
    methods: Sequence[str] = ALL_METHODS,
    runs: int = 500,
    seed: int = 0,
    *,
    hfr_grid=HFR_GRID,
    workers: Optional[int] = None,
) -> List[SimulationReport]:
    """Tune every method on the validation split and score it on the test split.

    Runs where some method fails are dropped for the whole panel; more than
    1% dropped runs is an error.
    """
    if runs < 1:
        raise ValidationError("runs must be at least 1")
    methods = tuple(methods)
    unknown = set(methods) - set(ALL_METHODS)
    if unknown:
        raise ValidationError(f"unknown methods: {sorted(unknown)}")
    if len(set(methods)) != len(methods) or not methods:
        raise ValidationError("methods must be nonempty and distinct")
    workers = default_workers() if workers is None else workers
    reports = []
    for spec in specs:
        spec = named_spec(spec) if isinstance(spec, str) else spec
        args = [(spec, methods, seed, r, hfr_grid) for r in range(runs)]
        if workers > 1:
            with ProcessPoolExecutor(workers) as pool:
                results = list(pool.map(_one_run, *zip(*args)))
        else:
            results = [_one_run(*a) for a in args]
        results.sort(key=lambda t: t[0])
        reports.append(_aggregate(spec, methods, seed, runs, results))
    return reports


def _aggregate(spec, methods, seed, runs, results) -> SimulationReport:
    table = np.array([[res[m] for m in methods] for _, _, res in results])
    bad = ~np.isfinite(table)
    failed = tuple(int(r) for r in np.flatnonzero(bad.any(axis=1)))
    failures = {m: int(bad[:, j].sum()) for j, m in enumerate(methods)}
    if failed and len(failed) >= MAX_FAILURE_SHARE * runs:
        raise NumericalError(
            f"spec {spec.id}: {len(failed)} of {runs} runs failed ({failures})"
        )
    keep = ~bad.any(axis=1)
    mse = {m: table[keep, j] for j, m in enumerate(methods)}
    rng = np.random.default_rng(_stream(seed, spec.id, 0, _PURPOSE_BOOT))
    boot = {m: bootstrap_median_se(mse[m], rng) for m in methods}
    return SimulationReport(
        spec_id=spec.id,
        methods=methods,
        mse=mse,
        seed=seed,
        runs_requested=runs,
        failed_runs=failed,
        failures=failures,
        data_hashes=tuple(h for _, h, _ in results),
        bootstrap_se=boot,
    )


@dataclass(frozen=True)
class TracePath:
    kappa_grid: np.ndarray
    beta: np.ndarray
    beta_std: np.ndarray
    theta: np.ndarray

    @property
    def nu_eff(self) -> np.ndarray:
        return self.theta.sum(axis=1)


def trace_path(X, y, kappa_grid=None, **options) -> TracePath:
    """HFR coefficients along a descending kappa grid (one row per kappa)."""
    grid = np.linspace(1.0, 0.0, 21) if kappa_grid is None else np.asarray(kappa_grid, float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValidationError("kappa grid must be a nonempty vector")
    if np.any(np.diff(grid) > 0) or grid.max() > 1.0 or grid.min() < 0.0:
        raise ValidationError("kappa grid must be sorted descending within [0, 1]")
    design = prepare(X, y, **options)
    scales = design.standardization.scales
    betas, thetas = [], []
    for kappa, path in zip(grid, design.shrinkage_paths(grid)):
        beta, _, _ = design.coefficients(kappa, path)
        betas.append(beta)
        thetas.append(path.theta)
    B = np.array(betas)
    return TracePath(grid, B, B * scales, np.array(thetas))
