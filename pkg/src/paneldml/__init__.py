"""Treatment-effect estimation for panels with two-way cluster dependence.

The package provides a weighted lasso whose penalty loadings absorb
unit-level and time-level clustering, fold plans that hold out both
units and time blocks, debiased effect estimation with cluster-robust
long-run variances, polynomial control dictionaries built from panel
averages, and a Monte Carlo harness with deterministic reports.
"""

from .crossfit import CrossFitPlan, auxiliary_sample, main_sample, make_plan
from .data import (
    CsvParseError,
    DuplicateKeyError,
    FeatureMatrix,
    PanelDataError,
    PanelDataset,
    UnbalancedPanelError,
    flatten,
    load_csv,
    save_csv,
    unflatten,
)
from .dml import (
    DmlEstimate,
    FirstStageError,
    IdentificationError,
    NuisanceFit,
    andrews_bandwidth,
    estimate_crossfit,
    estimate_fullsample,
    fit_nuisances,
    orthogonal_score,
    variance_crossfit,
    variance_fullsample,
)
from .estimators import PanelDml, TwoWayClusterLasso
from .lasso import LassoFit, post_lasso, solve_weighted_lasso
from .mundlak import Dictionary, build_dictionary, mundlak_averages, term_count
from .penalty import (
    ComponentDecomposition,
    PenaltyPlan,
    baseline_weights,
    decompose,
    feasible_weights,
    infeasible_weights,
    iterate_two_way_lasso,
    penalty_level,
)
from .sim import DgpConfig, McReport, McRow, TruthRecord, generate, run_monte_carlo

__version__ = "0.1.0"

__all__ = [
    "CrossFitPlan",
    "auxiliary_sample",
    "main_sample",
    "make_plan",
    "CsvParseError",
    "DuplicateKeyError",
    "FeatureMatrix",
    "PanelDataError",
    "PanelDataset",
    "UnbalancedPanelError",
    "flatten",
    "load_csv",
    "save_csv",
    "unflatten",
    "DmlEstimate",
    "FirstStageError",
    "IdentificationError",
    "NuisanceFit",
    "andrews_bandwidth",
    "estimate_crossfit",
    "estimate_fullsample",
    "fit_nuisances",
    "orthogonal_score",
    "variance_crossfit",
    "variance_fullsample",
    "PanelDml",
    "TwoWayClusterLasso",
    "LassoFit",
    "post_lasso",
    "solve_weighted_lasso",
    "Dictionary",
    "build_dictionary",
    "mundlak_averages",
    "term_count",
    "ComponentDecomposition",
    "PenaltyPlan",
    "baseline_weights",
    "decompose",
    "feasible_weights",
    "infeasible_weights",
    "iterate_two_way_lasso",
    "penalty_level",
    "DgpConfig",
    "McReport",
    "McRow",
    "TruthRecord",
    "generate",
    "run_monte_carlo",
    "__version__",
]
