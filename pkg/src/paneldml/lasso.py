"""Weighted L1 least squares by cyclic coordinate descent, plus post-selection OLS.

The solver minimizes

    (1/n) * sum_r (y_r - b0 - x_r' coef)^2 + (lam/n) * sum_j w_j |coef_j|

with an unpenalized intercept b0 handled by demeaning the response and the
penalized columns, then back-solving. Coordinate updates use covariance
(Gram) bookkeeping so each sweep is O(p * active) after an O(n p^2) setup,
which lets callers reuse the Gram across refits on the same design.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .data import FeatureMatrix
from .utils import ols

__all__ = ["LassoFit", "solve_weighted_lasso", "post_lasso", "PreparedDesign", "prepare_design"]


@njit(cache=True)
def _soft(z, g):
    if z > g:
        return z - g
    if z < -g:
        return z + g
    return 0.0


@njit(cache=True)
def _cd_solve(G, xty, yty, n_obs, omega, lam, coef, tol, max_iter):
    """Cyclic coordinate descent on the Gram form of the objective.

    Mutates ``coef`` in place. Returns (sweeps, converged, monotone, objective).
    Convergence requires both a small max coefficient change over a full sweep
    and the stationarity conditions holding at tolerance ``tol``.
    """
    p = coef.shape[0]
    c = xty - np.dot(G, coef)  # c_j = F_j' residual on the demeaned system
    half = 0.5 * lam
    prev_obj = np.inf
    monotone = True
    converged = False
    sweeps = 0
    full = True
    active = np.zeros(p, dtype=np.bool_)
    while sweeps < max_iter:
        maxd = 0.0
        for j in range(p):
            if not full and not active[j]:
                continue
            gjj = G[j, j]
            old = coef[j]
            rho = c[j] + gjj * old
            new = _soft(rho, half * omega[j]) / gjj
            if new != old:
                d = new - old
                c -= G[j] * d  # Gram is symmetric, row j == column j
                coef[j] = new
                if abs(d) > maxd:
                    maxd = abs(d)
        sweeps += 1
        rss = yty
        pen = 0.0
        for k in range(p):
            rss -= (xty[k] + c[k]) * coef[k]
            pen += omega[k] * abs(coef[k])
        o = rss / n_obs + lam * pen / n_obs
        if o > prev_obj + 1e-10 * (1.0 + abs(prev_obj)):
            monotone = False
        prev_obj = o
        if full:
            if maxd < tol:
                ok = True
                for k in range(p):
                    grad = 2.0 * c[k] / n_obs
                    bound = lam * omega[k] / n_obs
                    if coef[k] != 0.0:
                        s = 1.0 if coef[k] > 0.0 else -1.0
                        if abs(grad - bound * s) > tol:
                            ok = False
                            break
                    elif abs(grad) > bound + tol:
                        ok = False
                        break
                if ok:
                    converged = True
                    break
            for k in range(p):
                active[k] = coef[k] != 0.0
            full = False
        elif maxd < tol:
            full = True
    return sweeps, converged, monotone, prev_obj


@dataclass(frozen=True)
class LassoFit:
    """Solution of one weighted lasso or post-selection OLS problem.

    ``selected`` is exactly the nonzero support of ``coefficients``;
    ``residuals`` equals response - intercept - F @ coefficients.
    """

    coefficients: np.ndarray
    intercept: float
    selected: np.ndarray
    residuals: np.ndarray
    objective_value: float
    n_iterations: int
    converged: bool
    rank_deficient: bool = False


@dataclass(frozen=True)
class PreparedDesign:
    """Demeaned design with cached Gram for repeated solves on the same rows."""

    values: np.ndarray        # original columns, (n, p)
    centered: np.ndarray      # penalized columns demeaned, (n, p_eff)
    col_means: np.ndarray     # means of penalized columns, (p_eff,)
    penalized: np.ndarray     # bool mask over the p columns
    gram: np.ndarray          # centered' centered, (p_eff, p_eff)
    intercept_index: object = None

    @property
    def n_rows(self):
        return self.values.shape[0]

    @property
    def n_columns(self):
        return self.values.shape[1]


def prepare_design(features):
    """Validate a design and cache its demeaned Gram matrix.

    Parameters
    ----------
    features : FeatureMatrix or ndarray of shape (n, p)

    Raises
    ------
    ValueError
        On non-finite entries or a zero-variance column other than the
        intercept column of a FeatureMatrix.
    """
    if isinstance(features, FeatureMatrix):
        values = features.values
        icol = features.intercept_index
        names = features.column_names
    else:
        values = np.asarray(features, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        icol = None
        names = None
    if not np.all(np.isfinite(values)):
        raise ValueError("feature matrix contains NaN or Inf")
    n, p = values.shape
    penalized = np.ones(p, dtype=bool)
    if icol is not None:
        penalized[icol] = False
    sub = values[:, penalized]
    col_means = sub.mean(axis=0) if n else np.zeros(penalized.sum())
    centered = sub - col_means
    variances = np.einsum("ij,ij->j", centered, centered)
    dead = np.flatnonzero(variances == 0.0)
    if dead.size:
        j = np.flatnonzero(penalized)[dead[0]]
        label = names[j] if names else f"column {j}"
        raise ValueError(
            f"{label} has zero variance; constant regressors are only allowed "
            "as the designated intercept column"
        )
    gram = centered.T @ centered
    return PreparedDesign(
        values=values,
        centered=centered,
        col_means=col_means,
        penalized=penalized,
        gram=gram,
        intercept_index=icol,
    )


def solve_weighted_lasso(
    features,
    response,
    lam,
    weights,
    tol=1e-7,
    max_iter=10000,
    warm_start=None,
):
    """Solve the weighted lasso problem.

    Parameters
    ----------
    features : FeatureMatrix or ndarray of shape (n, p)
        A FeatureMatrix intercept column is left unpenalized and its
        coefficient reported through ``intercept``.
    response : ndarray of shape (n,)
    lam : float
        Penalty level, >= 0.
    weights : ndarray of shape (p,)
        Per-column penalty loadings, >= 0. The entry for the intercept
        column, if any, is ignored.
    tol : float
        Convergence tolerance: max coefficient change per sweep and the
        stationarity-condition slack.
    max_iter : int
        Maximum number of coordinate sweeps; exceeding it returns a fit
        with ``converged=False``.
    warm_start : ndarray, optional
        Initial coefficients of shape (p,).

    Returns
    -------
    LassoFit
    """
    design = features if isinstance(features, PreparedDesign) else prepare_design(features)
    return solve_weighted_lasso_prepared(
        design, response, lam, weights, tol=tol, max_iter=max_iter, warm_start=warm_start
    )


def solve_weighted_lasso_prepared(
    design, response, lam, weights, tol=1e-7, max_iter=10000, warm_start=None
):
    """Same as :func:`solve_weighted_lasso` on a :class:`PreparedDesign`."""
    y = np.asarray(response, dtype=np.float64)
    n, p = design.values.shape
    if y.shape != (n,):
        raise ValueError(f"response must have shape ({n},), got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("response contains NaN or Inf")
    lam = float(lam)
    if not np.isfinite(lam) or lam < 0:
        raise ValueError(f"penalty level must be a finite nonnegative number, got {lam}")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (p,):
        raise ValueError(f"weights must have shape ({p},), got {weights.shape}")
    if not np.all(np.isfinite(weights)) or np.any(weights < 0):
        raise ValueError("weights must be finite and nonnegative")

    ybar = y.mean()
    yc = y - ybar
    yty = float(yc @ yc)
    omega = np.ascontiguousarray(weights[design.penalized])
    xty = design.centered.T @ yc

    if omega.size == 0:
        full_coef = np.zeros(p)
        residuals = y - ybar
        return LassoFit(
            coefficients=full_coef,
            intercept=float(ybar),
            selected=np.empty(0, dtype=np.intp),
            residuals=residuals,
            objective_value=float(residuals @ residuals / n),
            n_iterations=0,
            converged=True,
        )

    if warm_start is not None:
        coef = np.ascontiguousarray(
            np.asarray(warm_start, dtype=np.float64)[design.penalized]
        ).copy()
    else:
        coef = np.zeros(omega.size)
    sweeps, converged, monotone, _ = _cd_solve(
        design.gram, xty, yty, float(n), omega, lam, coef, float(tol), int(max_iter)
    )
    if not monotone:
        # Exact coordinate minimization cannot increase the objective; a
        # violation beyond rounding slack indicates a numerical problem.
        raise FloatingPointError("coordinate descent objective increased between sweeps")
    coef[np.abs(coef) < 1e-12] = 0.0

    full_coef = np.zeros(p)
    full_coef[design.penalized] = coef
    intercept = float(ybar - design.col_means @ coef)
    residuals = y - intercept - design.values @ full_coef
    objective = float(residuals @ residuals / n + lam / n * np.abs(full_coef) @ weights)
    return LassoFit(
        coefficients=full_coef,
        intercept=intercept,
        selected=np.flatnonzero(full_coef),
        residuals=residuals,
        objective_value=objective,
        n_iterations=int(sweeps),
        converged=bool(converged),
    )


def post_lasso(features, response, selected):
    """OLS refit on the selected columns plus an intercept.

    Parameters
    ----------
    features : FeatureMatrix or ndarray of shape (n, p)
    response : ndarray of shape (n,)
    selected : iterable of column indices
        An empty selection yields the intercept-only fit. The intercept
        column of a FeatureMatrix is dropped from the selection since the
        refit always carries its own constant.

    Returns
    -------
    LassoFit
        Coefficients outside the selection are zero. A rank-deficient
        selection is solved by the minimum-norm rule and flagged; refit
        coefficients that come out exactly zero drop from ``selected`` so
        the support invariant holds.
    """
    if isinstance(features, FeatureMatrix):
        values = features.values
        icol = features.intercept_index
    elif isinstance(features, PreparedDesign):
        values = features.values
        icol = features.intercept_index
    else:
        values = np.asarray(features, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        icol = None
    y = np.asarray(response, dtype=np.float64)
    n, p = values.shape
    if y.shape != (n,):
        raise ValueError(f"response must have shape ({n},), got {y.shape}")
    if not np.all(np.isfinite(values)) or not np.all(np.isfinite(y)):
        raise ValueError("inputs contain NaN or Inf")
    sel = np.unique(np.asarray(list(selected), dtype=np.intp))
    if sel.size and (sel[0] < 0 or sel[-1] >= p):
        raise ValueError(f"selected indices must lie in [0, {p}), got {sel}")
    if icol is not None:
        sel = sel[sel != icol]
    if sel.size >= n:
        raise ValueError(
            f"cannot refit {sel.size} columns on {n} rows; selection must be "
            "smaller than the sample"
        )

    design = np.column_stack([np.ones(n), values[:, sel]])
    coef_ls, rank = ols(design, y, return_rank=True)
    rank_deficient = rank < design.shape[1]
    full_coef = np.zeros(p)
    full_coef[sel] = coef_ls[1:]
    intercept = float(coef_ls[0])
    residuals = y - intercept - values @ full_coef
    return LassoFit(
        coefficients=full_coef,
        intercept=intercept,
        selected=np.flatnonzero(full_coef),
        residuals=residuals,
        objective_value=float(residuals @ residuals / n),
        n_iterations=0,
        converged=True,
        rank_deficient=bool(rank_deficient),
    )
