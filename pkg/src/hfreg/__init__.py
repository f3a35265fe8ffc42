"""Hierarchical feature regression.

Predictors are clustered by the similarity of their explanatory content for
the response, the coefficient vector is decomposed along the resulting
hierarchy, and the hierarchy levels are shrunk by a constrained quadratic
program controlled by a single hyperparameter ``kappa`` in [0, 1].
"""

from .baselines import BaselineFit, fit_latent, fit_ols, fit_penalized, tune_on_validation
from .clustering import (
    DissimilarityRows,
    MergeSequence,
    partial_correlation_matrix,
    row_distance,
    supervised_linkage,
    ward_linkage,
)
from .estimator import HfrDesign, HfrFit, LevelFit, fit, predict, prepare
from .exceptions import (
    CollinearityError,
    ConvergenceError,
    DegenerateColumnError,
    HfrError,
    InfeasibleError,
    InsufficientSampleError,
    NumericalError,
    RankDeficiencyError,
    ValidationError,
)
from .hierarchy import Cluster, Hierarchy, apply_sign_adjustment, build_hierarchy, level_features
from .linalg import correlation_matrix, solve_least_squares, standardize
from .qp import QpProblem, ShrinkagePath, build_qp, solve_qp
from .selection import CvResult, cross_validate, make_folds, select_on_validation
from .simulation import DgpSpec, SimulationReport, generate, named_spec, run_benchmark, trace_path

__version__ = "0.1.0"
