"""Debiased treatment-effect estimation on panels with two-way dependence.

The target model is Y = D*theta + f(controls) + U with an instrument Z
(equal to D when none is supplied). Three nuisance projections on the
feature dictionary (of Z, Y and D) produce residuals whose moment
condition is linear in theta; solving it gives the estimate, and
long-run variance estimators robust to unit and time clustering give the
standard errors. Nuisances can be fit on the full sample or on held-out
fold pairs that are separated in both the unit and the time dimension.
"""

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .crossfit import CrossFitPlan, auxiliary_sample, main_sample
from .data import FeatureMatrix
from .lasso import post_lasso, prepare_design
from .penalty import (
    _lagged_sum_panel,
    _lagged_sum_series,
    andrews_bandwidth,
    iterate_two_way_lasso,
)

__all__ = [
    "FIRST_STAGES",
    "CRITICAL_95",
    "FirstStageError",
    "IdentificationError",
    "NuisanceFit",
    "DmlEstimate",
    "orthogonal_score",
    "fit_nuisances",
    "estimate_fullsample",
    "estimate_crossfit",
    "variance_fullsample",
    "variance_crossfit",
    "andrews_bandwidth",
]

FIRST_STAGES = ("pols", "h_lasso", "c_lasso", "tw_lasso")
_LASSO_VARIANTS = {
    "h_lasso": "heteroskedastic",
    "c_lasso": "cluster",
    "tw_lasso": "two_way",
}
CRITICAL_95 = 1.959964


class FirstStageError(RuntimeError):
    """A nuisance projection could not be fit on its sample."""


class IdentificationError(RuntimeError):
    """The average instrument-treatment residual product is near zero.

    With no detectable residual covariation between instrument and
    treatment the moment condition has no usable slope and the effect is
    not identified from this sample.
    """


@dataclass(frozen=True)
class NuisanceFit:
    """Fitted projections of instrument, outcome and treatment on features.

    Coefficient vectors span the full dictionary (zeros outside the
    selected columns); each equation carries its own intercept.
    ``metadata`` maps equation name ("zeta" instrument, "beta" outcome,
    "pi" treatment) to fit facts: selected column indices, refinement
    rounds, penalty level and penalty bandwidth (None for plain OLS).
    """

    zeta: np.ndarray
    zeta_intercept: float
    beta: np.ndarray
    beta_intercept: float
    pi: np.ndarray
    pi_intercept: float
    metadata: dict

    def __post_init__(self):
        p = self.zeta.shape[0]
        for name, vec in (("zeta", self.zeta), ("beta", self.beta), ("pi", self.pi)):
            if vec.shape != (p,):
                raise ValueError(f"{name} must have shape ({p},), got {vec.shape}")
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"{name} contains NaN or Inf")


@dataclass(frozen=True)
class DmlEstimate:
    """Point estimate with cluster-robust variances and fit diagnostics.

    se values are sqrt(var / n_units), matching the root-N convergence
    rate. The wider variance (``dka``) is nonnegative by construction;
    the corrected one (``chs``) can come out negative in finite samples,
    in which case its se and interval are NaN and a warning was issued.
    ``bandwidths`` is a single lag span for a full-sample fit or a K-by-L
    nested tuple for a cross-fit one.
    """

    theta: float
    se_chs: float
    se_dka: float
    var_chs: float
    var_dka: float
    ci_95_chs: tuple
    ci_95_dka: tuple
    method: str
    bandwidths: object
    n_units: int
    n_periods: int
    crossfit: CrossFitPlan = None
    score_matrix: np.ndarray = None
    nuisances: object = None
    selected_counts: dict = None

    def to_json(self):
        """Serialize the reportable fields to a JSON string."""

        def num(x):
            x = float(x)
            return None if math.isnan(x) else x

        def interval(ci):
            lo, hi = float(ci[0]), float(ci[1])
            return None if math.isnan(lo) else [lo, hi]

        payload = {
            "theta": float(self.theta),
            "se_chs": num(self.se_chs),
            "se_dka": num(self.se_dka),
            "var_chs": float(self.var_chs),
            "var_dka": float(self.var_dka),
            "ci_chs": interval(self.ci_95_chs),
            "ci_dka": interval(self.ci_95_dka),
            "method": self.method,
            "K": None if self.crossfit is None else self.crossfit.n_unit_folds,
            "L": None if self.crossfit is None else self.crossfit.n_time_folds,
            "bandwidths": self.bandwidths
            if isinstance(self.bandwidths, int)
            else [list(row) for row in self.bandwidths],
            "selected_counts": self.selected_counts,
        }
        return json.dumps(payload, sort_keys=True)


def orthogonal_score(z_res, y_res, d_res, theta):
    """Moment contributions psi = z_res * (y_res - d_res * theta).

    Linear in theta: psi = psi_a * theta + psi_b with
    psi_a = -z_res * d_res and psi_b = z_res * y_res. Arrays of any
    common shape are accepted and the shape is preserved.
    """
    z = np.asarray(z_res, dtype=np.float64)
    y = np.asarray(y_res, dtype=np.float64)
    d = np.asarray(d_res, dtype=np.float64)
    if z.shape != y.shape or z.shape != d.shape:
        raise ValueError(
            f"residual shapes differ: {z.shape}, {y.shape}, {d.shape}"
        )
    return z * (y - d * float(theta))


def fit_nuisances(
    features,
    outcome,
    treatment,
    instrument,
    n_units,
    n_periods,
    first_stage,
    c_lambda=2.0,
    gamma=None,
    bandwidth=None,
    max_refinements=10,
):
    """Fit the three nuisance projections on one sample.

    Parameters
    ----------
    features : FeatureMatrix or ndarray of shape (n_units*n_periods, q)
    outcome, treatment, instrument : ndarray of shape (n_units*n_periods,)
        Pass the identical array object as treatment and instrument to
        fit the shared projection only once.
    first_stage : {"pols", "h_lasso", "c_lasso", "tw_lasso"}
        pols refits all columns by least squares; the lasso variants run
        the iteratively reweighted lasso with the matching penalty
        weights, always followed by a least-squares refit on the
        selection.
    c_lambda, gamma, bandwidth, max_refinements :
        Lasso tuning, ignored under pols.

    Returns
    -------
    NuisanceFit
    """
    if first_stage not in FIRST_STAGES:
        raise ValueError(
            f"first_stage must be one of {FIRST_STAGES}, got {first_stage!r}"
        )
    design = prepare_design(features)

    def fit_one(response):
        if first_stage == "pols":
            fit = post_lasso(design, response, np.arange(design.n_columns))
            meta = {
                "selected": tuple(int(j) for j in fit.selected),
                "refinements": 0,
                "lam": None,
                "bandwidth": None,
                "rank_deficient": fit.rank_deficient,
            }
            return fit, meta
        fit, plan = iterate_two_way_lasso(
            design,
            response,
            n_units,
            n_periods,
            variant=_LASSO_VARIANTS[first_stage],
            c_lambda=c_lambda,
            gamma=gamma,
            bandwidth=bandwidth,
            max_refinements=max_refinements,
        )
        meta = {
            "selected": tuple(int(j) for j in fit.selected),
            "refinements": plan.refinements,
            "lam": plan.lam,
            "bandwidth": plan.bandwidth,
            "rank_deficient": fit.rank_deficient,
        }
        return fit, meta

    pi_fit, pi_meta = fit_one(np.asarray(treatment, dtype=np.float64))
    if instrument is treatment:
        zeta_fit, zeta_meta = pi_fit, pi_meta
    else:
        zeta_fit, zeta_meta = fit_one(np.asarray(instrument, dtype=np.float64))
    beta_fit, beta_meta = fit_one(np.asarray(outcome, dtype=np.float64))

    return NuisanceFit(
        zeta=zeta_fit.coefficients,
        zeta_intercept=zeta_fit.intercept,
        beta=beta_fit.coefficients,
        beta_intercept=beta_fit.intercept,
        pi=pi_fit.coefficients,
        pi_intercept=pi_fit.intercept,
        metadata={"zeta": zeta_meta, "beta": beta_meta, "pi": pi_meta},
    )


def _feature_values(features, n_rows):
    if isinstance(features, FeatureMatrix):
        values = features.values
    else:
        values = np.asarray(features, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != n_rows:
        raise ValueError(
            f"features must have shape ({n_rows}, q), got {values.shape}"
        )
    return values


def _subset_features(features, values_3d, units, times):
    sub = values_3d[np.ix_(units, times)].reshape(len(units) * len(times), -1)
    if isinstance(features, FeatureMatrix):
        return FeatureMatrix(
            values=sub,
            column_names=features.column_names,
            has_intercept=features.has_intercept,
        )
    return sub


def _check_lag_span(bandwidth, t_len):
    m = int(bandwidth)
    if m < 1:
        raise ValueError(f"lag span must be >= 1, got {m}")
    if m > t_len:
        raise ValueError(f"lag span {m} exceeds the {t_len} available periods")
    return m


def _default_lag_span(scores):
    # Fold blocks can be too short for the autocorrelation fit; fall back
    # to no lag weighting instead of failing.
    t_len = scores.shape[1]
    if t_len < 3:
        return 1
    return min(andrews_bandwidth(scores), t_len)


def _se_and_intervals(theta, var_chs, var_dka, n_units):
    se_dka = math.sqrt(var_dka / n_units)
    ci_dka = (theta - CRITICAL_95 * se_dka, theta + CRITICAL_95 * se_dka)
    if var_chs < 0:
        warnings.warn(
            f"corrected long-run variance is negative ({var_chs:.6g}); "
            "its standard error is reported as NaN",
            stacklevel=3,
        )
        se_chs = float("nan")
        ci_chs = (float("nan"), float("nan"))
    else:
        se_chs = math.sqrt(var_chs / n_units)
        ci_chs = (theta - CRITICAL_95 * se_chs, theta + CRITICAL_95 * se_chs)
    return se_chs, ci_chs, se_dka, ci_dka


def variance_fullsample(scores, psi_a, bandwidth):
    """Long-run variance of the estimate from full-sample scores.

    Parameters
    ----------
    scores : ndarray of shape (N, T)
        Moment contributions psi at the estimate.
    psi_a : ndarray of shape (N, T)
        Slope contributions -z_res * d_res.
    bandwidth : int
        Lag span M in [1, T] for the triangular kernel.

    Returns
    -------
    (float, float)
        (var_chs, var_dka) where

            omega_a  = (1/NT^2) sum_i (sum_t psi_it)^2
            omega_dk = (1/NT^2) sum_{t,r} k(|t-r|/M) (sum_i psi_it)(sum_j psi_jr)
            omega_nw = (1/NT^2) sum_i sum_{t,r} k(|t-r|/M) psi_it psi_ir

        and var_dka = A^-2 (omega_a + omega_dk),
        var_chs = var_dka - A^-2 omega_nw, with A the grand mean of psi_a.
    """
    psi = np.asarray(scores, dtype=np.float64)
    pa = np.asarray(psi_a, dtype=np.float64)
    if psi.ndim != 2 or psi.shape != pa.shape:
        raise ValueError(
            f"scores and psi_a must share a 2-D shape, got {psi.shape} and {pa.shape}"
        )
    n, t_len = psi.shape
    m = _check_lag_span(bandwidth, t_len)
    a_hat = pa.mean()
    if abs(a_hat) < 1e-12:
        raise IdentificationError(
            "average slope of the moment condition is numerically zero; "
            "the instrument carries no residual variation in the treatment"
        )
    scale = 1.0 / (n * t_len**2)
    row_sums = psi.sum(axis=1)
    omega_a = scale * float(row_sums @ row_sums)
    omega_dk = scale * float(_lagged_sum_series(psi.sum(axis=0)[:, None], m)[0])
    omega_nw = scale * float(_lagged_sum_panel(psi[:, :, None], m)[0])
    inv_a2 = 1.0 / a_hat**2
    var_dka = max(inv_a2 * (omega_a + omega_dk), 0.0)
    var_chs = var_dka - inv_a2 * omega_nw
    return var_chs, var_dka


def variance_crossfit(fold_scores, fold_psi_a, plan, bandwidths):
    """Long-run variance of the estimate from per-fold-pair scores.

    Parameters
    ----------
    fold_scores : sequence of sequences of ndarrays
        fold_scores[k][l] holds the (N_k, T_l) moment contributions on
        the main sample of fold pair (k, l).
    fold_psi_a : sequence of sequences of ndarrays
        Matching slope contributions -z_res * d_res.
    plan : CrossFitPlan
    bandwidths : int or sequence of sequences of int
        Lag span(s); a single value applies to every fold pair, clipped
        to the pair's period count.

    Returns
    -------
    (float, float)
        (var_chs, var_dka). Per fold pair, with k the triangular kernel
        of span M_kl,

            omega_a  += (1/(N_k T_l^2)) sum_i (sum_t psi_it)^2
            omega_dk += (K/L)/(N_k T_l^2) sum_{t,r} k (sum_i psi_it)(sum_j psi_jr)
            omega_nw += (K/L)/(N_k T_l^2) sum_i sum_{t,r} k psi_it psi_ir

        each then divided by K*L, and var_dka = A^-2 (omega_a + omega_dk),
        var_chs = var_dka - A^-2 omega_nw, with A the average over fold
        pairs of the mean of psi_a.
    """
    k_folds = plan.n_unit_folds
    l_folds = plan.n_time_folds
    cf_ratio = k_folds / l_folds
    if isinstance(bandwidths, (int, np.integer)):
        fixed = int(bandwidths)
        if fixed < 1:
            raise ValueError(f"lag span must be >= 1, got {fixed}")

        def span_of(k, l, t_len):
            return min(fixed, t_len)

    else:

        def span_of(k, l, t_len):
            return _check_lag_span(bandwidths[k][l], t_len)

    a_hat = 0.0
    omega_a = omega_dk = omega_nw = 0.0
    for k in range(k_folds):
        for l in range(l_folds):
            psi = np.asarray(fold_scores[k][l], dtype=np.float64)
            pa = np.asarray(fold_psi_a[k][l], dtype=np.float64)
            n_k = len(plan.unit_folds[k])
            t_l = len(plan.time_folds[l])
            if psi.shape != (n_k, t_l) or pa.shape != (n_k, t_l):
                raise ValueError(
                    f"fold pair ({k}, {l}) needs ({n_k}, {t_l}) scores, "
                    f"got {psi.shape} and {pa.shape}"
                )
            m = span_of(k, l, t_l)
            a_hat += pa.mean()
            scale = 1.0 / (n_k * t_l**2)
            row_sums = psi.sum(axis=1)
            omega_a += scale * float(row_sums @ row_sums)
            omega_dk += cf_ratio * scale * float(
                _lagged_sum_series(psi.sum(axis=0)[:, None], m)[0]
            )
            omega_nw += cf_ratio * scale * float(
                _lagged_sum_panel(psi[:, :, None], m)[0]
            )
    n_pairs = k_folds * l_folds
    a_hat /= n_pairs
    omega_a /= n_pairs
    omega_dk /= n_pairs
    omega_nw /= n_pairs
    if abs(a_hat) < 1e-12:
        raise IdentificationError(
            "average slope of the moment condition is numerically zero; "
            "the instrument carries no residual variation in the treatment"
        )
    inv_a2 = 1.0 / a_hat**2
    var_dka = max(inv_a2 * (omega_a + omega_dk), 0.0)
    var_chs = var_dka - inv_a2 * omega_nw
    return var_chs, var_dka


def _selected_counts(nuisance_fits):
    counts = {}
    for eq in ("zeta", "beta", "pi"):
        values = [len(nf.metadata[eq]["selected"]) for nf in nuisance_fits]
        counts[eq] = sum(values) / len(values)
    return counts


def estimate_fullsample(
    data,
    features,
    first_stage,
    c_lambda=2.0,
    gamma=None,
    bandwidth=None,
    variance_bandwidth=None,
    max_refinements=10,
):
    """Estimate the treatment effect with nuisances fit on all rows.

    Parameters
    ----------
    data : PanelDataset
    features : FeatureMatrix or ndarray of shape (N*T, q)
        Control dictionary in panel row order.
    first_stage : {"pols", "h_lasso", "c_lasso", "tw_lasso"}
    c_lambda, gamma, bandwidth, max_refinements :
        First-stage lasso tuning.
    variance_bandwidth : int, optional
        Lag span for the variance kernel; default fits the
        autocorrelation rule to the score matrix.

    Returns
    -------
    DmlEstimate
    """
    n, t_len = data.n_units, data.n_periods
    values = _feature_values(features, n * t_len)
    y = data.outcome.ravel()
    d = data.treatment.ravel()
    z = d if not data.has_own_instrument else data.instrument.ravel()
    try:
        nus = fit_nuisances(
            features if isinstance(features, FeatureMatrix) else values,
            y,
            d,
            z,
            n,
            t_len,
            first_stage,
            c_lambda=c_lambda,
            gamma=gamma,
            bandwidth=bandwidth,
            max_refinements=max_refinements,
        )
    except (ValueError, FloatingPointError) as exc:
        raise FirstStageError(
            f"first stage {first_stage!r} failed on the full sample: {exc}"
        ) from exc

    z_res = (z - nus.zeta_intercept - values @ nus.zeta).reshape(n, t_len)
    y_res = (y - nus.beta_intercept - values @ nus.beta).reshape(n, t_len)
    d_res = (d - nus.pi_intercept - values @ nus.pi).reshape(n, t_len)
    psi_a = -z_res * d_res
    a_hat = psi_a.mean()
    if abs(a_hat) < 1e-12:
        raise IdentificationError(
            "average slope of the moment condition is numerically zero; "
            "the instrument carries no residual variation in the treatment"
        )
    theta = float((z_res * y_res).mean() / (z_res * d_res).mean())
    psi = orthogonal_score(z_res, y_res, d_res, theta)
    if variance_bandwidth is None:
        m = _default_lag_span(psi)
    else:
        m = _check_lag_span(variance_bandwidth, t_len)
    var_chs, var_dka = variance_fullsample(psi, psi_a, m)
    se_chs, ci_chs, se_dka, ci_dka = _se_and_intervals(theta, var_chs, var_dka, n)
    return DmlEstimate(
        theta=theta,
        se_chs=se_chs,
        se_dka=se_dka,
        var_chs=var_chs,
        var_dka=var_dka,
        ci_95_chs=ci_chs,
        ci_95_dka=ci_dka,
        method=first_stage,
        bandwidths=m,
        n_units=n,
        n_periods=t_len,
        crossfit=None,
        score_matrix=psi,
        nuisances=nus,
        selected_counts=_selected_counts([nus]),
    )


def estimate_crossfit(
    data,
    features,
    plan,
    first_stage,
    c_lambda=2.0,
    gamma=None,
    bandwidth=None,
    variance_bandwidth=None,
    max_refinements=10,
):
    """Estimate the treatment effect with fold-held-out nuisances.

    For every fold pair the nuisances are fit on the auxiliary sample
    (other unit folds, non-adjacent time blocks) and evaluated on the
    main sample. The estimate solves the average of the per-pair moment
    conditions; variances follow :func:`variance_crossfit`.

    Parameters
    ----------
    data : PanelDataset
    features : FeatureMatrix or ndarray of shape (N*T, q)
    plan : CrossFitPlan
        Must match the panel's dimensions and needs at least 2 unit
        folds.
    first_stage, c_lambda, gamma, bandwidth, max_refinements :
        As in :func:`estimate_fullsample`; lasso tuning applies within
        each auxiliary sample.
    variance_bandwidth : int, optional
        Global lag-span override; default fits the autocorrelation rule
        per fold pair.

    Returns
    -------
    DmlEstimate
    """
    n, t_len = data.n_units, data.n_periods
    if plan.n_units != n or plan.n_periods != t_len:
        raise ValueError(
            f"plan covers {plan.n_units}x{plan.n_periods}, panel is {n}x{t_len}"
        )
    values = _feature_values(features, n * t_len)
    values_3d = values.reshape(n, t_len, values.shape[1])
    y_pan = data.outcome
    d_pan = data.treatment
    z_pan = d_pan if not data.has_own_instrument else data.instrument

    k_folds, l_folds = plan.n_unit_folds, plan.n_time_folds
    res = [[None] * l_folds for _ in range(k_folds)]
    fits = []
    for k in range(k_folds):
        for l in range(l_folds):
            aux_units, aux_times = auxiliary_sample(plan, k, l)
            sub = _subset_features(features, values_3d, aux_units, aux_times)
            box = np.ix_(aux_units, aux_times)
            d_aux = d_pan[box].ravel()
            z_aux = d_aux if not data.has_own_instrument else z_pan[box].ravel()
            try:
                nus = fit_nuisances(
                    sub,
                    y_pan[box].ravel(),
                    d_aux,
                    z_aux,
                    len(aux_units),
                    len(aux_times),
                    first_stage,
                    c_lambda=c_lambda,
                    gamma=gamma,
                    bandwidth=bandwidth,
                    max_refinements=max_refinements,
                )
            except (ValueError, FloatingPointError) as exc:
                raise FirstStageError(
                    f"first stage {first_stage!r} failed on the auxiliary "
                    f"sample of fold pair ({k}, {l}): {exc}"
                ) from exc
            fits.append(nus)
            units, times = main_sample(plan, k, l)
            shape = (len(units), len(times))
            mbox = np.ix_(units, times)
            fm = values_3d[mbox].reshape(-1, values.shape[1])
            z_res = (
                z_pan[mbox].ravel() - nus.zeta_intercept - fm @ nus.zeta
            ).reshape(shape)
            y_res = (
                y_pan[mbox].ravel() - nus.beta_intercept - fm @ nus.beta
            ).reshape(shape)
            d_res = (
                d_pan[mbox].ravel() - nus.pi_intercept - fm @ nus.pi
            ).reshape(shape)
            res[k][l] = (z_res, y_res, d_res)

    n_pairs = k_folds * l_folds
    a_bar = sum((-rz * rd).mean() for row in res for rz, _, rd in row) / n_pairs
    b_bar = sum((rz * ry).mean() for row in res for rz, ry, _ in row) / n_pairs
    if abs(a_bar) < 1e-12:
        raise IdentificationError(
            "average slope of the moment condition is numerically zero; "
            "the instrument carries no residual variation in the treatment"
        )
    theta = float(-b_bar / a_bar)

    fold_scores = [[None] * l_folds for _ in range(k_folds)]
    fold_psi_a = [[None] * l_folds for _ in range(k_folds)]
    score_matrix = np.empty((n, t_len))
    spans = [[0] * l_folds for _ in range(k_folds)]
    for k in range(k_folds):
        for l in range(l_folds):
            z_res, y_res, d_res = res[k][l]
            psi = orthogonal_score(z_res, y_res, d_res, theta)
            fold_scores[k][l] = psi
            fold_psi_a[k][l] = -z_res * d_res
            units, times = main_sample(plan, k, l)
            score_matrix[np.ix_(units, times)] = psi
            if variance_bandwidth is None:
                spans[k][l] = _default_lag_span(psi)
            else:
                spans[k][l] = min(
                    _check_lag_span(variance_bandwidth, t_len), len(times)
                )
    var_chs, var_dka = variance_crossfit(fold_scores, fold_psi_a, plan, spans)
    se_chs, ci_chs, se_dka, ci_dka = _se_and_intervals(theta, var_chs, var_dka, n)
    return DmlEstimate(
        theta=theta,
        se_chs=se_chs,
        se_dka=se_dka,
        var_chs=var_chs,
        var_dka=var_dka,
        ci_95_chs=ci_chs,
        ci_95_dka=ci_dka,
        method=first_stage,
        bandwidths=tuple(tuple(row) for row in spans),
        n_units=n,
        n_periods=t_len,
        crossfit=plan,
        score_matrix=score_matrix,
        nuisances=tuple(fits),
        selected_counts=_selected_counts(fits),
    )
