"""Estimator-style front doors: parameters at construction, data at fit.

Both classes follow the familiar pattern of tuning values stored verbatim
in ``__init__``, a ``fit`` returning ``self``, fitted results exposed as
trailing-underscore attributes, and ``get_params``/``set_params`` for
pipeline tooling. They delegate to the functional layer, which remains
the primary surface for scripted use.
"""

import inspect

from .crossfit import make_plan
from .data import PanelDataset, flatten
from .dml import estimate_crossfit, estimate_fullsample
from .lasso import prepare_design
from .penalty import iterate_two_way_lasso

__all__ = ["TwoWayClusterLasso", "PanelDml"]


class _ParamEstimator:
    """get_params/set_params over the constructor signature."""

    @classmethod
    def _param_names(cls):
        signature = inspect.signature(cls.__init__)
        return [name for name in signature.parameters if name != "self"]

    def get_params(self, deep=True):
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ValueError(
                    f"unknown parameter {name!r} for {type(self).__name__}"
                )
            setattr(self, name, value)
        return self

    def __repr__(self):
        inner = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({inner})"

    def _require_fitted(self, attribute):
        if not hasattr(self, attribute):
            raise RuntimeError(
                f"this {type(self).__name__} instance is not fitted yet; "
                "call fit first"
            )


class TwoWayClusterLasso(_ParamEstimator):
    """Iteratively reweighted lasso with cluster-robust penalty loadings.

    Parameters
    ----------
    variant : {"two_way", "cluster", "heteroskedastic"}
        Penalty-weight construction used in the refinement rounds.
    c_lambda : float
        Penalty-level slack constant, > 1.
    gamma : float, optional
        Tail probability for the penalty level; defaults to
        0.1 / log(max(N, T)).
    bandwidth : int, optional
        Lag span for the weight long-run sums; default is the
        autocorrelation rule per refinement.
    max_refinements : int
        Cap on weight-recomputation rounds.
    post : bool
        Expose the least-squares refit on the selection (default) rather
        than the shrunk fit.
    tol, max_iter : solver controls.

    Attributes (after fit)
    ----------------------
    coef_, intercept_, selected_ : fitted coefficients and support.
    fit_ : full LassoFit record.
    penalty_plan_ : PenaltyPlan with weights, components and level.
    """

    def __init__(
        self,
        variant="two_way",
        c_lambda=2.0,
        gamma=None,
        bandwidth=None,
        max_refinements=10,
        post=True,
        tol=1e-7,
        max_iter=10000,
    ):
        self.variant = variant
        self.c_lambda = c_lambda
        self.gamma = gamma
        self.bandwidth = bandwidth
        self.max_refinements = max_refinements
        self.post = post
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y, n_units=None, n_periods=None):
        """Fit on a flattened panel design.

        Parameters
        ----------
        X : FeatureMatrix or ndarray of shape (n_units*n_periods, p)
            Row i*n_periods + t holds unit i at period t.
        y : ndarray of shape (n_units*n_periods,)
        n_units, n_periods : int
            Panel layout of the rows; required, since a flat matrix does
            not carry it.
        """
        if n_units is None or n_periods is None:
            raise ValueError("n_units and n_periods are required to fit panel weights")
        design = prepare_design(X)
        fit, plan = iterate_two_way_lasso(
            design,
            y,
            n_units,
            n_periods,
            variant=self.variant,
            c_lambda=self.c_lambda,
            gamma=self.gamma,
            bandwidth=self.bandwidth,
            max_refinements=self.max_refinements,
            post=self.post,
            tol=self.tol,
            max_iter=self.max_iter,
        )
        self.coef_ = fit.coefficients
        self.intercept_ = fit.intercept
        self.selected_ = fit.selected
        self.fit_ = fit
        self.penalty_plan_ = plan
        self.n_features_in_ = design.n_columns
        return self

    def predict(self, X):
        """Linear prediction intercept_ + X @ coef_."""
        self._require_fitted("coef_")
        values = X.values if hasattr(X, "values") else X
        return self.intercept_ + values @ self.coef_


class PanelDml(_ParamEstimator):
    """Debiased treatment-effect estimation on a balanced panel.

    Parameters
    ----------
    first_stage : {"pols", "h_lasso", "c_lasso", "tw_lasso"}
        Nuisance projection method.
    crossfit : bool
        Fit nuisances on held-out fold pairs (default) or on the full
        sample.
    n_unit_folds, n_time_folds, seed : fold-plan layout when crossfit.
    c_lambda, gamma, bandwidth, max_refinements : first-stage tuning.
    variance_bandwidth : int, optional
        Global lag-span override for the variance kernel.

    Attributes (after fit)
    ----------------------
    theta_, se_chs_, se_dka_, ci_95_chs_, ci_95_dka_ : headline results.
    estimate_ : full DmlEstimate record.
    plan_ : CrossFitPlan used, or None for a full-sample fit.
    """

    def __init__(
        self,
        first_stage="tw_lasso",
        crossfit=True,
        n_unit_folds=4,
        n_time_folds=8,
        seed=0,
        c_lambda=2.0,
        gamma=None,
        bandwidth=None,
        variance_bandwidth=None,
        max_refinements=10,
    ):
        self.first_stage = first_stage
        self.crossfit = crossfit
        self.n_unit_folds = n_unit_folds
        self.n_time_folds = n_time_folds
        self.seed = seed
        self.c_lambda = c_lambda
        self.gamma = gamma
        self.bandwidth = bandwidth
        self.variance_bandwidth = variance_bandwidth
        self.max_refinements = max_refinements

    def fit(self, data, features=None):
        """Estimate the effect on a panel dataset.

        Parameters
        ----------
        data : PanelDataset
        features : FeatureMatrix or ndarray, optional
            Control dictionary in panel row order; defaults to the
            panel's flattened covariates.
        """
        if not isinstance(data, PanelDataset):
            raise TypeError(f"expected PanelDataset, got {type(data).__name__}")
        if features is None:
            features = flatten(data)
        common = dict(
            c_lambda=self.c_lambda,
            gamma=self.gamma,
            bandwidth=self.bandwidth,
            variance_bandwidth=self.variance_bandwidth,
            max_refinements=self.max_refinements,
        )
        if self.crossfit:
            plan = make_plan(
                data.n_units,
                data.n_periods,
                n_unit_folds=self.n_unit_folds,
                n_time_folds=self.n_time_folds,
                seed=self.seed,
            )
            estimate = estimate_crossfit(
                data, features, plan, self.first_stage, **common
            )
        else:
            plan = None
            estimate = estimate_fullsample(data, features, self.first_stage, **common)
        self.estimate_ = estimate
        self.theta_ = estimate.theta
        self.se_chs_ = estimate.se_chs
        self.se_dka_ = estimate.se_dka
        self.ci_95_chs_ = estimate.ci_95_chs
        self.ci_95_dka_ = estimate.ci_95_dka
        self.plan_ = plan
        return self
