"""Monte Carlo engine: panel DGP, replication runner and summary report.

The design generates outcome and treatment errors as weighted sums of a
unit component, a time component and an idiosyncratic component, giving
dependence along both panel dimensions. Covariates follow the same
three-part structure with correlated coordinates, and the slope vectors
decay polynomially so the model is approximately sparse. Replications
draw from counter-based seeds, so parallel and serial runs produce the
same report bytes.
"""

import csv
import dataclasses
import io
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .crossfit import make_plan
from .data import PanelDataset, flatten
from .dml import (
    FIRST_STAGES,
    FirstStageError,
    IdentificationError,
    estimate_crossfit,
    estimate_fullsample,
)
from .utils import RngStream, toeplitz_gaussian

__all__ = [
    "DgpConfig",
    "TruthRecord",
    "McRow",
    "McReport",
    "generate",
    "run_monte_carlo",
]


@dataclass(frozen=True)
class DgpConfig:
    """Design of the simulated panel.

    Errors and covariates are built as w1*unit + w2*time + w3*cell
    components. Unit and cell covariate components draw correlated
    p-vectors with covariance toeplitz_base**|j-k|; time components
    follow independent AR(1) paths with coefficient ar_coef whose
    innovations and initial draw have variance ar_init_var. Slope
    vectors for the outcome and treatment equations are 1/j^2. With
    ``iid_mode`` every component is redrawn per cell, removing the
    dependence along both panel dimensions while keeping the marginal
    distributions.
    """

    n_units: int
    n_periods: int
    n_regressors: int
    theta0: float = 1.0
    weights: tuple = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
    ar_coef: float = 0.5
    ar_init_var: float = 0.75
    toeplitz_base: float = 0.5
    iid_mode: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_units < 2 or self.n_periods < 4:
            raise ValueError(
                f"panel must be at least 2x4, got {self.n_units}x{self.n_periods}"
            )
        if self.n_regressors < 1:
            raise ValueError(f"need at least one regressor, got {self.n_regressors}")
        if len(self.weights) != 3 or any(w < 0 for w in self.weights):
            raise ValueError(f"weights must be 3 nonnegative values, got {self.weights}")
        if not abs(self.ar_coef) < 1:
            raise ValueError(f"|ar_coef| must be below 1, got {self.ar_coef}")
        if self.ar_init_var < 0:
            raise ValueError(f"ar_init_var must be nonnegative, got {self.ar_init_var}")
        if not abs(self.toeplitz_base) < 1:
            raise ValueError(
                f"|toeplitz_base| must be below 1, got {self.toeplitz_base}"
            )

    @property
    def slope(self):
        """Common slope vector (1, 1/4, ..., 1/p^2) of both equations."""
        return np.arange(1, self.n_regressors + 1, dtype=np.float64) ** -2.0


@dataclass(frozen=True)
class TruthRecord:
    """Hidden realizations kept for diagnostics that need the truth."""

    theta0: float
    beta0: np.ndarray
    pi0: np.ndarray
    u: np.ndarray  # (N, T) outcome-equation errors
    v: np.ndarray  # (N, T) treatment-equation errors


def _ar1_paths(rng, t_len, n_series, coef, init_var):
    # First row doubles as the initial draw; innovations share its variance.
    shocks = math.sqrt(init_var) * rng.standard_normal((t_len, n_series))
    paths = np.empty((t_len, n_series))
    paths[0] = shocks[0]
    for t in range(1, t_len):
        paths[t] = coef * paths[t - 1] + shocks[t]
    return paths


def generate(config):
    """Draw one panel from the design.

    Returns
    -------
    (PanelDataset, TruthRecord)
        The dataset has Y = D*theta0 + X@slope + U and D = X@slope + V;
        the record keeps theta0, the slopes and the U, V matrices. The
        same config (including seed) always returns identical draws.
    """
    n, t_len, p = config.n_units, config.n_periods, config.n_regressors
    w1, w2, w3 = config.weights
    rng = RngStream(config.seed, 0).generator()

    def error_matrix():
        if config.iid_mode:
            unit = rng.standard_normal((n, t_len))
            time = rng.standard_normal((n, t_len))
            cell = rng.standard_normal((n, t_len))
            return w1 * unit + w2 * time + w3 * cell
        unit = rng.standard_normal(n)
        time = _ar1_paths(rng, t_len, 1, config.ar_coef, config.ar_init_var)[:, 0]
        cell = rng.standard_normal((n, t_len))
        return w1 * unit[:, None] + w2 * time[None, :] + w3 * cell

    u = error_matrix()
    v = error_matrix()

    if config.iid_mode:
        unit_x = toeplitz_gaussian(p, config.toeplitz_base, rng, size=n * t_len)
        unit_x = unit_x.reshape(n, t_len, p)
        time_x = rng.standard_normal((n, t_len, p))
        cell_x = toeplitz_gaussian(p, config.toeplitz_base, rng, size=n * t_len)
        cell_x = cell_x.reshape(n, t_len, p)
        x = w1 * unit_x + w2 * time_x + w3 * cell_x
    else:
        unit_x = toeplitz_gaussian(p, config.toeplitz_base, rng, size=n)
        time_x = _ar1_paths(rng, t_len, p, config.ar_coef, config.ar_init_var)
        cell_x = toeplitz_gaussian(p, config.toeplitz_base, rng, size=n * t_len)
        cell_x = cell_x.reshape(n, t_len, p)
        x = w1 * unit_x[:, None, :] + w2 * time_x[None, :, :] + w3 * cell_x

    slope = config.slope
    d = x @ slope + v
    y = config.theta0 * d + x @ slope + u
    data = PanelDataset(outcome=y, treatment=d, covariates=x)
    truth = TruthRecord(
        theta0=config.theta0, beta0=slope, pi0=slope, u=u, v=v
    )
    return data, truth


@dataclass(frozen=True)
class McRow:
    """Summary of one method cell across replications.

    ``crossfit`` flags whether nuisances were fit on held-out folds.
    ``n_reps`` counts the replications included in the statistics;
    ``n_failures`` the ones dropped by the failure policy. When every
    replication failed the row is marked invalid and the statistics are
    NaN.
    """

    method: str
    crossfit: bool
    bias: float
    sd: float
    rmse: float
    coverage_chs: float
    coverage_dka: float
    mean_selected: float
    n_reps: int
    n_failures: int
    valid: bool


@dataclass(frozen=True)
class McReport:
    """Replication summary with deterministic emitters."""

    rows: tuple
    n_replications: int
    base_seed: int
    config: dict

    def to_csv_string(self):
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(
            [
                "method",
                "crossfit",
                "bias",
                "sd",
                "rmse",
                "coverage_chs",
                "coverage_dka",
                "mean_selected",
                "n_reps",
                "n_failures",
                "valid",
            ]
        )
        for row in self.rows:
            writer.writerow(
                [
                    row.method,
                    str(row.crossfit).lower(),
                    format(row.bias, ".17g"),
                    format(row.sd, ".17g"),
                    format(row.rmse, ".17g"),
                    format(row.coverage_chs, ".17g"),
                    format(row.coverage_dka, ".17g"),
                    format(row.mean_selected, ".17g"),
                    row.n_reps,
                    row.n_failures,
                    str(row.valid).lower(),
                ]
            )
        return buffer.getvalue()

    def to_json_string(self):
        def num(x):
            x = float(x)
            return None if math.isnan(x) else x

        payload = {
            "base_seed": self.base_seed,
            "n_replications": self.n_replications,
            "config": self.config,
            "rows": [
                {
                    "method": row.method,
                    "crossfit": row.crossfit,
                    "bias": num(row.bias),
                    "sd": num(row.sd),
                    "rmse": num(row.rmse),
                    "coverage_chs": num(row.coverage_chs),
                    "coverage_dka": num(row.coverage_dka),
                    "mean_selected": num(row.mean_selected),
                    "n_reps": row.n_reps,
                    "n_failures": row.n_failures,
                    "valid": row.valid,
                }
                for row in self.rows
            ],
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def row(self, method, crossfit):
        """Look up the summary row for one method cell."""
        for r in self.rows:
            if r.method == method and r.crossfit == crossfit:
                return r
        raise KeyError(f"no row for method={method!r} crossfit={crossfit}")


def _check_methods(methods):
    cells = []
    for entry in methods:
        stage, crossfit = entry
        if stage not in FIRST_STAGES:
            raise ValueError(f"unknown first stage {stage!r}; choose from {FIRST_STAGES}")
        cells.append((stage, bool(crossfit)))
    if not cells:
        raise ValueError("methods must not be empty")
    if len(set(cells)) != len(cells):
        raise ValueError("duplicate method cells")
    return cells


def _replicate(task):
    """Run one replication; returns per-method (theta, chs, dka, sel) or None."""
    config, methods, tuning, rep = task
    rep_seed = config.seed + rep
    data, _ = generate(dataclasses.replace(config, seed=rep_seed))
    features = flatten(data)
    plan = None
    if any(cf for _, cf in methods):
        plan = make_plan(
            config.n_units,
            config.n_periods,
            n_unit_folds=tuning["n_unit_folds"],
            n_time_folds=tuning["n_time_folds"],
            seed=rep_seed,
        )
    half_cells = config.n_units * config.n_periods / 2.0
    first_stage_args = {
        key: tuning[key]
        for key in ("c_lambda", "gamma", "bandwidth", "variance_bandwidth", "max_refinements")
    }
    results = []
    for stage, crossfit in methods:
        try:
            with warnings.catch_warnings():
                # Per-replication diagnostics (negative corrected variance,
                # degenerate weights) are expected in bulk runs; the report
                # rows carry the aggregate picture.
                warnings.simplefilter("ignore")
                if crossfit:
                    est = estimate_crossfit(data, features, plan, stage, **first_stage_args)
                else:
                    est = estimate_fullsample(data, features, stage, **first_stage_args)
            if stage != "pols":
                fits = est.nuisances if isinstance(est.nuisances, tuple) else (est.nuisances,)
                overgrown = any(
                    len(fit.metadata[eq]["selected"]) > half_cells
                    for fit in fits
                    for eq in ("zeta", "beta", "pi")
                )
                if overgrown:
                    results.append(None)
                    continue
            theta0 = config.theta0
            lo, hi = est.ci_95_chs
            chs_covers = 0.0 if math.isnan(lo) else float(lo <= theta0 <= hi)
            lo, hi = est.ci_95_dka
            dka_covers = float(lo <= theta0 <= hi)
            mean_sel = sum(est.selected_counts.values()) / len(est.selected_counts)
            results.append((est.theta, chs_covers, dka_covers, mean_sel))
        except (FirstStageError, IdentificationError):
            results.append(None)
    return results


def run_monte_carlo(
    config,
    methods,
    n_reps,
    n_unit_folds=4,
    n_time_folds=8,
    c_lambda=2.0,
    gamma=None,
    bandwidth=None,
    variance_bandwidth=None,
    max_refinements=10,
    n_workers=1,
):
    """Run replications of the design and summarize each method cell.

    Parameters
    ----------
    config : DgpConfig
        Replication r uses seed config.seed + r.
    methods : sequence of (first_stage, crossfit) pairs
        e.g. [("pols", False), ("tw_lasso", True)].
    n_reps : int
    n_unit_folds, n_time_folds : fold layout for cross-fit cells.
    c_lambda, gamma, bandwidth, variance_bandwidth, max_refinements :
        Estimation tuning shared by every cell. ``gamma`` defaults to
        0.1 / log(max(N, T)) of the full panel and is passed down so
        fold-level fits use the same value.
    n_workers : int
        Process count; any value produces identical reports because each
        replication is seeded independently and aggregation runs in
        replication order.

    Returns
    -------
    McReport
        Bias, SD and RMSE of the estimate against theta0 (SD uses the
        population formula so rmse^2 = bias^2 + sd^2 exactly), coverage
        percentages of the nominal 95% intervals, and the mean selected
        count per first-stage equation. A replication is dropped from a
        cell when the first stage fails, the moment slope is degenerate,
        or a lasso selects more than half the cells.
    """
    cells = _check_methods(methods)
    n_reps = int(n_reps)
    if n_reps < 1:
        raise ValueError(f"need at least one replication, got {n_reps}")
    if gamma is None:
        gamma = 0.1 / math.log(max(config.n_units, config.n_periods))
    tuning = {
        "n_unit_folds": n_unit_folds,
        "n_time_folds": n_time_folds,
        "c_lambda": c_lambda,
        "gamma": gamma,
        "bandwidth": bandwidth,
        "variance_bandwidth": variance_bandwidth,
        "max_refinements": max_refinements,
    }
    tasks = [(config, cells, tuning, r) for r in range(n_reps)]
    if int(n_workers) > 1:
        with ProcessPoolExecutor(max_workers=int(n_workers)) as pool:
            per_rep = list(pool.map(_replicate, tasks, chunksize=1))
    else:
        per_rep = [_replicate(task) for task in tasks]

    rows = []
    for idx, (stage, crossfit) in enumerate(cells):
        outcomes = [rep[idx] for rep in per_rep]
        kept = [o for o in outcomes if o is not None]
        n_failures = len(outcomes) - len(kept)
        if not kept:
            rows.append(
                McRow(
                    method=stage,
                    crossfit=crossfit,
                    bias=float("nan"),
                    sd=float("nan"),
                    rmse=float("nan"),
                    coverage_chs=float("nan"),
                    coverage_dka=float("nan"),
                    mean_selected=float("nan"),
                    n_reps=0,
                    n_failures=n_failures,
                    valid=False,
                )
            )
            continue
        thetas = np.array([o[0] for o in kept])
        errors = thetas - config.theta0
        bias = float(errors.mean())
        sd = float(errors.std(ddof=0))
        rmse = float(math.sqrt(np.mean(errors**2)))
        rows.append(
            McRow(
                method=stage,
                crossfit=crossfit,
                bias=bias,
                sd=sd,
                rmse=rmse,
                coverage_chs=100.0 * float(np.mean([o[1] for o in kept])),
                coverage_dka=100.0 * float(np.mean([o[2] for o in kept])),
                mean_selected=float(np.mean([o[3] for o in kept])),
                n_reps=len(kept),
                n_failures=n_failures,
                valid=True,
            )
        )
    config_echo = {
        "n_units": config.n_units,
        "n_periods": config.n_periods,
        "n_regressors": config.n_regressors,
        "theta0": config.theta0,
        "iid_mode": config.iid_mode,
        "n_unit_folds": n_unit_folds,
        "n_time_folds": n_time_folds,
        "c_lambda": c_lambda,
        "gamma": gamma,
        "bandwidth": bandwidth,
        "variance_bandwidth": variance_bandwidth,
        "max_refinements": max_refinements,
    }
    return McReport(
        rows=tuple(rows),
        n_replications=n_reps,
        base_seed=config.seed,
        config=config_echo,
    )
