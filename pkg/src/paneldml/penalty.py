"""Penalty weights and levels for lasso under unit and time cluster dependence.

Scores are arrays v[i, t, j] = f[i, t, j] * V[i, t] built from a residual
series V. Each regressor's weight is assembled from a decomposition of its
score column into a unit component (row means), a time component (column
means) and a remainder, with long-run sums taken under a triangular lag
window.
"""

import dataclasses
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .lasso import PreparedDesign, post_lasso, prepare_design, solve_weighted_lasso_prepared
from .utils import normal_quantile

__all__ = [
    "ComponentDecomposition",
    "PenaltyPlan",
    "decompose",
    "feasible_weights",
    "baseline_weights",
    "infeasible_weights",
    "penalty_level",
    "iterate_two_way_lasso",
    "andrews_bandwidth",
]


@dataclass(frozen=True)
class ComponentDecomposition:
    """Per-regressor split of scores into unit, time and remainder parts.

    For every j and cell (i, t): v[i, t, j] = a[i, j] + g[t, j] + e[i, t, j].
    """

    a: np.ndarray  # (N, p) row means
    g: np.ndarray  # (T, p) column means
    e: np.ndarray  # (N, T, p) remainder

    @property
    def n_units(self):
        return self.a.shape[0]

    @property
    def n_periods(self):
        return self.g.shape[0]

    @property
    def n_regressors(self):
        return self.a.shape[1]


@dataclass(frozen=True)
class PenaltyPlan:
    """Penalty weights with their component pieces and the penalty level.

    ``variant`` is one of {"two_way", "cluster", "heteroskedastic",
    "initial"}. For the two_way variant the weights satisfy
    weights_j^2 = max(w2_a - w2_e, 0) + max(w2_g - w2_e, 0) + w2_e.
    ``lam`` is None until a penalty level has been attached.
    """

    weights: np.ndarray
    w2_a: np.ndarray
    w2_g: np.ndarray
    w2_e: np.ndarray
    variant: str
    bandwidth: int
    lam: float = None
    c_lambda: float = None
    gamma: float = None
    degenerate_columns: tuple = ()
    refinements: int = 0

    @property
    def n_regressors(self):
        return self.weights.shape[0]


def _validate_scores(scores):
    v = np.asarray(scores, dtype=np.float64)
    if v.ndim != 3:
        raise ValueError(f"scores must have shape (N, T, p), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("scores contain NaN or Inf")
    return v


def decompose(scores):
    """Split scores into row means, column means and the remainder.

    Parameters
    ----------
    scores : ndarray of shape (N, T, p)

    Returns
    -------
    ComponentDecomposition
        a[i, j] = (1/T) sum_t v[i, t, j]; g[t, j] = (1/N) sum_i v[i, t, j];
        e = v - a - g, so the three parts add back to v exactly.
    """
    v = _validate_scores(scores)
    a = v.mean(axis=1)
    g = v.mean(axis=0)
    e = v - a[:, None, :] - g[None, :, :]
    return ComponentDecomposition(a=a, g=g, e=e)


def _lagged_sum_series(c, bandwidth):
    # c: (T, p) per-period column sums. Returns per-column
    # sum_t c_t^2 + 2 * sum_{m>=1} (1 - m/M) sum_t c_t c_{t+m}.
    t_len = c.shape[0]
    total = np.einsum("tj,tj->j", c, c)
    for m in range(1, min(bandwidth, t_len)):
        w = 1.0 - m / bandwidth
        total = total + 2.0 * w * np.einsum("tj,tj->j", c[:-m], c[m:])
    return total


def _lagged_sum_panel(e, bandwidth):
    # e: (N, T, p). Returns per-column
    # sum_{i,t} e^2 + 2 * sum_{m>=1} (1 - m/M) sum_{i,t} e_{it} e_{i,t+m}.
    t_len = e.shape[1]
    total = np.einsum("itj,itj->j", e, e)
    for m in range(1, min(bandwidth, t_len)):
        w = 1.0 - m / bandwidth
        total = total + 2.0 * w * np.einsum("itj,itj->j", e[:, :-m], e[:, m:])
    return total


def _component_sums(v, bandwidth):
    n, t_len, _ = v.shape
    scale = 1.0 / (n * t_len * t_len)
    parts = decompose(v)
    w2_a = np.einsum("ij,ij->j", v.sum(axis=1), v.sum(axis=1)) * scale
    w2_g = _lagged_sum_series(v.sum(axis=0), bandwidth) * scale
    w2_e = _lagged_sum_panel(parts.e, bandwidth) * scale
    return w2_a, w2_g, w2_e


def feasible_weights(residual_scores, bandwidth=None):
    """Two-way cluster penalty weights from residual scores.

    Parameters
    ----------
    residual_scores : ndarray of shape (N, T, p)
        Scores f[i, t, j] * V[i, t] for some residual series V.
    bandwidth : int, optional
        Lag-window span M >= 1. Defaults to the autocorrelation-based rule
        of :func:`andrews_bandwidth` applied to the scores.

    Returns
    -------
    PenaltyPlan
        Variant "two_way" with lam unset. Components are

            w2_a_j = (1/NT^2) sum_i (sum_t v_itj)^2
            w2_g_j = (1/NT^2) sum_{t,s} k(|t-s|/M) (sum_i v_itj)(sum_i v_isj)
            w2_e_j = (1/NT^2) sum_i sum_{t,s} k(|t-s|/M) e_itj e_isj

        with k(x) = max(1 - x, 0), combined as
        weights_j^2 = max(w2_a - w2_e, 0) + max(w2_g - w2_e, 0) + w2_e.
        Columns with zero combined weight are reported in
        ``degenerate_columns`` and trigger a diagnostic warning.
    """
    v = _validate_scores(residual_scores)
    n, t_len, p = v.shape
    if bandwidth is None:
        bandwidth = andrews_bandwidth(v)
    bandwidth = int(bandwidth)
    if bandwidth < 1:
        raise ValueError(f"bandwidth must be >= 1, got {bandwidth}")
    if bandwidth >= t_len:
        warnings.warn(
            f"bandwidth M={bandwidth} is not smaller than T={t_len}; "
            "the lag window never truncates",
            stacklevel=2,
        )
    w2_a, w2_g, w2_e = _component_sums(v, bandwidth)
    combined = (
        np.maximum(w2_a - w2_e, 0.0) + np.maximum(w2_g - w2_e, 0.0) + np.maximum(w2_e, 0.0)
    )
    weights = np.sqrt(combined)
    degenerate = tuple(np.flatnonzero(weights == 0.0).tolist())
    if degenerate:
        warnings.warn(
            f"{len(degenerate)} regressor(s) have zero penalty weight "
            f"(first: column {degenerate[0]}); their scores carry no variation",
            stacklevel=2,
        )
    return PenaltyPlan(
        weights=weights,
        w2_a=w2_a,
        w2_g=w2_g,
        w2_e=w2_e,
        variant="two_way",
        bandwidth=bandwidth,
        degenerate_columns=degenerate,
    )


def baseline_weights(residual_scores, variant, bandwidth=None):
    """Comparison penalty weights: per-cell or unit-cluster variances.

    Parameters
    ----------
    residual_scores : ndarray of shape (N, T, p)
    variant : {"heteroskedastic", "cluster"}
        heteroskedastic: weights_j^2 = (1/NT) sum_{i,t} v_itj^2.
        cluster: weights_j^2 = (1/NT^2) sum_i (sum_t v_itj)^2.
    bandwidth : int, optional
        Only used to fill the reported w2_g / w2_e component fields.

    Returns
    -------
    PenaltyPlan
    """
    if variant not in ("heteroskedastic", "cluster"):
        raise ValueError(
            f"variant must be 'heteroskedastic' or 'cluster', got {variant!r}"
        )
    v = _validate_scores(residual_scores)
    n, t_len, p = v.shape
    if bandwidth is None:
        bandwidth = andrews_bandwidth(v)
    bandwidth = int(bandwidth)
    w2_a, w2_g, w2_e = _component_sums(v, bandwidth)
    if variant == "heteroskedastic":
        weights = np.sqrt(np.einsum("itj,itj->j", v, v) / (n * t_len))
    else:
        weights = np.sqrt(w2_a)
    degenerate = tuple(np.flatnonzero(weights == 0.0).tolist())
    if degenerate:
        warnings.warn(
            f"{len(degenerate)} regressor(s) have zero penalty weight "
            f"(first: column {degenerate[0]}); their scores carry no variation",
            stacklevel=2,
        )
    return PenaltyPlan(
        weights=weights,
        w2_a=w2_a,
        w2_g=w2_g,
        w2_e=w2_e,
        variant=variant,
        bandwidth=bandwidth,
        degenerate_columns=degenerate,
    )


def infeasible_weights(components, block_length):
    """Penalty weights from known score components (simulation diagnostics).

    Parameters
    ----------
    components : ComponentDecomposition
        True components of the scores, known only in simulations.
    block_length : int
        Length h of the consecutive time blocks used for the time-component
        long-run sum. When T is not divisible by h the tail periods beyond
        the last full block are dropped with a warning.

    Returns
    -------
    ndarray of shape (p,)
        weights_j = sqrt(w2_a + w2_g + w2_e) with

            w2_a = (1/N) sum_i a_ij^2
            w2_g = (N/T^2) sum_b (sum_{t in block b} g_tj)^2
            w2_e = (1/NT^2) sum_i (sum_t e_itj)^2
    """
    h = int(block_length)
    a, g, e = components.a, components.g, components.e
    n, p = a.shape
    t_len = g.shape[0]
    if h < 1:
        raise ValueError(f"block length must be >= 1, got {h}")
    if h > t_len:
        raise ValueError(f"block length {h} exceeds T={t_len}")
    n_blocks = t_len // h
    if n_blocks * h != t_len:
        warnings.warn(
            f"T={t_len} is not divisible by block length {h}; "
            f"dropping the last {t_len - n_blocks * h} period(s)",
            stacklevel=2,
        )
    w2_a = np.einsum("ij,ij->j", a, a) / n
    block_sums = g[: n_blocks * h].reshape(n_blocks, h, p).sum(axis=1)
    w2_g = n / t_len**2 * np.einsum("bj,bj->j", block_sums, block_sums)
    row_sums = e.sum(axis=1)
    w2_e = np.einsum("ij,ij->j", row_sums, row_sums) / (n * t_len**2)
    return np.sqrt(w2_a + w2_g + w2_e)


def penalty_level(n_units, n_periods, n_regressors, c_lambda=2.0, gamma=None, degenerate=False):
    """Common penalty level for the weighted lasso.

    Parameters
    ----------
    n_units, n_periods : int
    n_regressors : int
        Number of penalized regressors p >= 1.
    c_lambda : float
        Leading constant multiplying the scale-times-quantile product,
        > 1. The default of 2 absorbs the factor two that a union bound
        over the sign of each score coordinate contributes.
    gamma : float, optional
        Confidence level in (0, 1); defaults to 0.1 / log(max(N, T)).
    degenerate : bool
        When both cluster components vanish (e.g. fully independent cells)
        the score scale drops and the level uses sqrt(N*T) in place of
        sqrt(N)*T. No data-driven detection is attempted; callers choose.

    Returns
    -------
    float
        c_lambda * sqrt(N) * T * Q(1 - gamma/(2p)) by default, with
        sqrt(N*T) replacing sqrt(N)*T under ``degenerate``; Q is the
        standard normal quantile.
    """
    n, t_len, p = int(n_units), int(n_periods), int(n_regressors)
    if p < 1:
        raise ValueError(f"need at least one regressor, got p={p}")
    if c_lambda <= 1:
        raise ValueError(f"c_lambda must exceed 1, got {c_lambda}")
    if gamma is None:
        gamma = 0.1 / math.log(max(n, t_len))
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if gamma / (2 * p) >= 1:
        raise ValueError(f"gamma/(2p) = {gamma / (2 * p)} is not below 1")
    quantile = normal_quantile(1.0 - gamma / (2 * p))
    scale = math.sqrt(n * t_len) if degenerate else math.sqrt(n) * t_len
    return c_lambda * scale * quantile


def _andrews_m(vbar_num, vbar_den, t_len):
    # Plug-in lag span from a first-order autocorrelation fit.
    if vbar_den == 0.0:
        return 1
    rho = vbar_num / vbar_den
    rho = min(0.97, max(-0.97, rho))
    value = 1.8171 * (rho**2 / (1.0 - rho**2) ** 2) ** (1.0 / 3.0) * t_len ** (1.0 / 3.0) + 1.0
    return max(1, int(math.floor(value)))


def andrews_bandwidth(scores):
    """Data-driven lag-window span from score autocorrelation.

    Fits rho by no-intercept OLS of the cross-sectional average series
    vbar_t on vbar_{t-1}, clips |rho| <= 0.97, and returns
    max(1, floor(1.8171 * (rho^2/(1-rho^2)^2)^(1/3) * T^(1/3) + 1)).

    Parameters
    ----------
    scores : ndarray of shape (N, T) or (N, T, p)
        For a score array with p columns the per-column spans are reduced
        to one value by the rounded median.

    Returns
    -------
    int
    """
    v = np.asarray(scores, dtype=np.float64)
    if v.ndim == 2:
        v = v[:, :, None]
    if v.ndim != 3:
        raise ValueError(f"scores must have shape (N, T) or (N, T, p), got {v.shape}")
    t_len = v.shape[1]
    if t_len < 3:
        raise ValueError(f"need at least 3 periods to fit the lag rule, got T={t_len}")
    vbar = v.mean(axis=0)  # (T, p)
    num = np.einsum("tj,tj->j", vbar[1:], vbar[:-1])
    den = np.einsum("tj,tj->j", vbar[:-1], vbar[:-1])
    if np.all(den == 0.0):
        warnings.warn(
            "cross-sectional average of the scores has no variation; using M=1",
            stacklevel=2,
        )
        return 1
    spans = [_andrews_m(num[j], den[j], t_len) for j in range(v.shape[2])]
    if len(spans) == 1:
        return spans[0]
    return max(1, int(math.floor(float(np.median(spans)) + 0.5)))


def iterate_two_way_lasso(
    features,
    response,
    n_units,
    n_periods,
    variant="two_way",
    c_lambda=2.0,
    gamma=None,
    bandwidth=None,
    max_refinements=10,
    post=True,
    tol=1e-7,
    max_iter=10000,
):
    """Iteratively reweighted lasso with cluster-robust penalty loadings.

    Starts from variance-product weights with a conservative penalty level,
    then alternates between refitting and recomputing weights from the
    refit residual scores until the selected set stabilizes.

    Parameters
    ----------
    features : FeatureMatrix, PreparedDesign or ndarray of shape (N*T, p)
        Row r = i * n_periods + t holds unit i at period t.
    response : ndarray of shape (N*T,)
    n_units, n_periods : int
    variant : {"two_way", "cluster", "heteroskedastic"}
        Weight construction used in the refinement steps. The
        heteroskedastic variant also uses the degenerate penalty scaling,
        matching its independent-cells calibration.
    c_lambda, gamma, bandwidth : tuning values passed through to
        :func:`penalty_level` and the weight builders.
    max_refinements : int
        Cap on weight-recomputation rounds (at least 2 are always run).
    post : bool
        Return the least-squares refit on the final selection instead of
        the shrunk lasso fit. The refit residuals drive the weight updates
        either way.

    Returns
    -------
    (LassoFit, PenaltyPlan)
        The plan records the weights, components, bandwidth and penalty
        level of the final refinement.
    """
    if variant not in ("two_way", "cluster", "heteroskedastic"):
        raise ValueError(
            f"variant must be 'two_way', 'cluster' or 'heteroskedastic', got {variant!r}"
        )
    design = features if isinstance(features, PreparedDesign) else prepare_design(features)
    n, t_len = int(n_units), int(n_periods)
    rounds_run = 0
    if design.n_rows != n * t_len:
        raise ValueError(
            f"feature matrix has {design.n_rows} rows, expected N*T = {n * t_len}"
        )
    y = np.asarray(response, dtype=np.float64)
    p = design.n_columns
    if gamma is None:
        gamma = 0.1 / math.log(max(n, t_len))
    if bandwidth is None and t_len < 3:
        bandwidth = 1  # too few periods for the autocorrelation rule
    x = design.values
    degenerate_level = variant == "heteroskedastic"

    # Initial round: variance-product weights, conservative level.
    var_f = x.var(axis=0)
    weights0 = np.sqrt(var_f * y.var())
    lam0 = penalty_level(n, t_len, p, c_lambda, gamma, degenerate=True)
    fit = solve_weighted_lasso_prepared(
        design, y, lam0, weights0, tol=tol, max_iter=max_iter
    )
    refit = post_lasso(design, y, fit.selected)
    residuals = refit.residuals
    prev_selected = fit.selected
    lam = penalty_level(n, t_len, p, c_lambda, gamma, degenerate=degenerate_level)
    plan = None

    for round_no in range(1, max(2, int(max_refinements)) + 1):
        scores = (x * residuals[:, None]).reshape(n, t_len, p)
        if variant == "two_way":
            plan = feasible_weights(scores, bandwidth=bandwidth)
        else:
            plan = baseline_weights(scores, variant, bandwidth=bandwidth)
        weights = plan.weights
        positive = weights[design.penalized] > 0
        if not positive.any():
            break  # residuals carry no signal; current fit is final
        if not positive.all():
            # Degenerate columns keep the smallest positive loading so the
            # solver never divides a score by zero.
            fill = weights[design.penalized][positive].min()
            weights = weights.copy()
            weights[(weights == 0.0) & design.penalized] = fill
        fit = solve_weighted_lasso_prepared(
            design, y, lam, weights, tol=tol, max_iter=max_iter,
            warm_start=fit.coefficients,
        )
        refit = post_lasso(design, y, fit.selected)
        residuals = refit.residuals
        rounds_run = round_no
        if round_no >= 2 and np.array_equal(fit.selected, prev_selected):
            break
        prev_selected = fit.selected

    if plan is None:
        scores = (x * residuals[:, None]).reshape(n, t_len, p)
        if variant == "two_way":
            plan = feasible_weights(scores, bandwidth=bandwidth)
        else:
            plan = baseline_weights(scores, variant, bandwidth=bandwidth)
    plan = dataclasses.replace(
        plan,
        lam=lam,
        c_lambda=float(c_lambda),
        gamma=float(gamma),
        refinements=rounds_run,
    )
    return (refit if post else fit), plan
