"""Command-line front end: simulate, estimate and weights subcommands.

Settings come from a flat key=value config file; the --seed, --out,
--format and --threads flags override their file counterparts. Data goes
to stdout or the --out path, diagnostics go to stderr, and exit codes
are 0 for success, 1 for user errors (bad config, bad data, failed
estimation) and 2 for internal errors.
"""

import sys

import click

from .crossfit import make_plan
from .data import PanelDataError, flatten, load_csv
from .dml import FIRST_STAGES, FirstStageError, IdentificationError, estimate_crossfit, estimate_fullsample
from .lasso import prepare_design
from .mundlak import build_dictionary
from .penalty import iterate_two_way_lasso
from .sim import DgpConfig, run_monte_carlo

__all__ = ["cli", "main"]


def _parse_bool(text):
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_int(text):
    return int(text.strip())


def _parse_float(text):
    return float(text.strip())


def _parse_str(text):
    return text.strip()


def _parse_name_list(text):
    return [part.strip() for part in text.split(",") if part.strip()]


def _parse_methods(text):
    cells = []
    for part in _parse_name_list(text):
        crossfit = part.endswith("+cf")
        stage = part[:-3] if crossfit else part
        if stage not in FIRST_STAGES:
            raise ValueError(
                f"unknown method {part!r}; use one of {FIRST_STAGES}, "
                "with an optional '+cf' suffix for cross-fitting"
            )
        cells.append((stage, crossfit))
    if not cells:
        raise ValueError("methods must name at least one entry")
    return cells


def _read_config_file(path):
    values = {}
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise click.UsageError(
                    f"{path}:{line_no}: expected key=value, got {line!r}"
                )
            key = key.strip()
            if key in values:
                raise click.UsageError(f"{path}:{line_no}: duplicate key {key!r}")
            values[key] = value.strip()
    return values


def _apply_schema(raw, known, where):
    settings = {}
    for key, value in raw.items():
        if key not in known:
            raise click.UsageError(
                f"unknown configuration key {key!r} in {where}; "
                f"known keys: {', '.join(sorted(known))}"
            )
        parser = known[key]
        try:
            settings[key] = parser(value)
        except ValueError as exc:
            raise click.UsageError(f"bad value for {key!r} in {where}: {exc}") from exc
    return settings


def _load_settings(config_path, known, defaults, required):
    settings = dict(defaults)
    if config_path is not None:
        settings.update(_apply_schema(_read_config_file(config_path), known, config_path))
    missing = [key for key in required if settings.get(key) is None]
    if missing:
        raise click.UsageError(
            f"missing required configuration key(s): {', '.join(missing)}"
        )
    return settings


def _write_or_print(text, out_path):
    if out_path is None:
        sys.stdout.write(text)
    else:
        with open(out_path, "w", encoding="utf-8") as handle:
            handle.write(text)


def _render_table(headers, rows):
    text_rows = [[str(c) for c in headers]] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[j]) for r in text_rows) for j in range(len(headers))]
    lines = []
    for idx, row in enumerate(text_rows):
        lines.append("  ".join(cell.rjust(widths[j]) for j, cell in enumerate(row)))
        if idx == 0:
            lines.append("  ".join("-" * widths[j] for j in range(len(headers))))
    return "\n".join(lines) + "\n"


def _load_panel(settings):
    schema = {
        "outcome": settings["outcome"],
        "treatment": settings["treatment"],
        "covariates": settings["covariates"] or [],
    }
    if settings.get("instrument"):
        schema["instrument"] = settings["instrument"]
    return load_csv(settings["data"], schema)


def _features_for(data, tau):
    if tau == 0:
        return flatten(data)
    return build_dictionary(data, tau)


@click.group()
def cli():
    """Panel treatment-effect estimation with cluster-robust lasso tools.

    Subcommands read a flat key=value config file (--config); lines
    starting with '#' are comments. Flags override file values.
    """


_SIMULATE_KEYS = {
    "n_units": _parse_int,
    "n_periods": _parse_int,
    "n_regressors": _parse_int,
    "n_reps": _parse_int,
    "methods": _parse_methods,
    "theta0": _parse_float,
    "iid_mode": _parse_bool,
    "n_unit_folds": _parse_int,
    "n_time_folds": _parse_int,
    "c_lambda": _parse_float,
    "gamma": _parse_float,
    "bandwidth": _parse_int,
    "variance_bandwidth": _parse_int,
    "max_refinements": _parse_int,
    "seed": _parse_int,
}

_SIMULATE_DEFAULTS = {
    "n_units": None,
    "n_periods": None,
    "n_regressors": None,
    "n_reps": None,
    "methods": None,
    "theta0": 1.0,
    "iid_mode": False,
    "n_unit_folds": 4,
    "n_time_folds": 8,
    "c_lambda": 2.0,
    "gamma": None,
    "bandwidth": None,
    "variance_bandwidth": None,
    "max_refinements": 10,
    "seed": 0,
}


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="Key=value settings file.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False),
              help="Write the report here instead of stdout.")
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv",
              show_default=True, help="Report format.")
@click.option("--threads", type=int, default=1, show_default=True,
              help="Worker processes for replications.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
def simulate(config_path, out_path, fmt, threads, seed):
    """Run a Monte Carlo study and emit its summary report.

    Required config keys: n_units, n_periods, n_regressors, n_reps,
    methods (comma list of pols, h_lasso, c_lasso, tw_lasso, each with
    an optional +cf suffix). Optional: theta0, iid_mode, n_unit_folds,
    n_time_folds, c_lambda, gamma, bandwidth, variance_bandwidth,
    max_refinements, seed.
    """
    settings = _load_settings(
        config_path,
        _SIMULATE_KEYS,
        _SIMULATE_DEFAULTS,
        required=("n_units", "n_periods", "n_regressors", "n_reps", "methods"),
    )
    if seed is not None:
        settings["seed"] = seed
    config = DgpConfig(
        n_units=settings["n_units"],
        n_periods=settings["n_periods"],
        n_regressors=settings["n_regressors"],
        theta0=settings["theta0"],
        iid_mode=settings["iid_mode"],
        seed=settings["seed"],
    )
    report = run_monte_carlo(
        config,
        settings["methods"],
        settings["n_reps"],
        n_unit_folds=settings["n_unit_folds"],
        n_time_folds=settings["n_time_folds"],
        c_lambda=settings["c_lambda"],
        gamma=settings["gamma"],
        bandwidth=settings["bandwidth"],
        variance_bandwidth=settings["variance_bandwidth"],
        max_refinements=settings["max_refinements"],
        n_workers=max(1, int(threads)),
    )
    text = report.to_csv_string() if fmt == "csv" else report.to_json_string()
    _write_or_print(text, out_path)


_PANEL_KEYS = {
    "data": _parse_str,
    "outcome": _parse_str,
    "treatment": _parse_str,
    "instrument": _parse_str,
    "covariates": _parse_name_list,
    "tau": _parse_int,
    "c_lambda": _parse_float,
    "gamma": _parse_float,
    "bandwidth": _parse_int,
    "max_refinements": _parse_int,
    "seed": _parse_int,
}

_PANEL_DEFAULTS = {
    "data": None,
    "outcome": None,
    "treatment": None,
    "instrument": None,
    "covariates": [],
    "tau": 0,
    "c_lambda": 2.0,
    "gamma": None,
    "bandwidth": None,
    "max_refinements": 10,
    "seed": 0,
}

_ESTIMATE_KEYS = dict(
    _PANEL_KEYS,
    method=_parse_str,
    crossfit=_parse_bool,
    n_unit_folds=_parse_int,
    n_time_folds=_parse_int,
    variance_bandwidth=_parse_int,
)

_ESTIMATE_DEFAULTS = dict(
    _PANEL_DEFAULTS,
    method="tw_lasso",
    crossfit=False,
    n_unit_folds=4,
    n_time_folds=8,
    variance_bandwidth=None,
)


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="Key=value settings file.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False),
              help="Write the JSON estimate here; the table still prints.")
@click.option("--format", "fmt", type=click.Choice(["table", "json"]), default="table",
              show_default=True, help="Stdout format.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
def estimate(config_path, out_path, fmt, seed):
    """Estimate the treatment effect from a CSV panel.

    Required config keys: data (CSV path with unit and time columns),
    outcome, treatment. Optional: instrument, covariates (comma list),
    method (pols, h_lasso, c_lasso, tw_lasso), crossfit, n_unit_folds,
    n_time_folds, tau (polynomial dictionary order, 0 uses raw
    covariates), c_lambda, gamma, bandwidth, variance_bandwidth,
    max_refinements, seed.
    """
    settings = _load_settings(
        config_path,
        _ESTIMATE_KEYS,
        _ESTIMATE_DEFAULTS,
        required=("data", "outcome", "treatment"),
    )
    if seed is not None:
        settings["seed"] = seed
    if settings["method"] not in FIRST_STAGES:
        raise click.UsageError(
            f"unknown method {settings['method']!r}; choose from {FIRST_STAGES}"
        )
    data = _load_panel(settings)
    features = _features_for(data, settings["tau"])
    common = dict(
        c_lambda=settings["c_lambda"],
        gamma=settings["gamma"],
        bandwidth=settings["bandwidth"],
        variance_bandwidth=settings["variance_bandwidth"],
        max_refinements=settings["max_refinements"],
    )
    if settings["crossfit"]:
        plan = make_plan(
            data.n_units,
            data.n_periods,
            n_unit_folds=settings["n_unit_folds"],
            n_time_folds=settings["n_time_folds"],
            seed=settings["seed"],
        )
        result = estimate_crossfit(data, features, plan, settings["method"], **common)
    else:
        result = estimate_fullsample(data, features, settings["method"], **common)

    if out_path is not None:
        _write_or_print(result.to_json() + "\n", out_path)
    if fmt == "json":
        sys.stdout.write(result.to_json() + "\n")
    else:
        def fnum(x):
            return format(x, ".3f")

        rows = [
            ["theta", fnum(result.theta)],
            ["se_chs", fnum(result.se_chs)],
            ["se_dka", fnum(result.se_dka)],
            ["ci_chs", f"[{fnum(result.ci_95_chs[0])}, {fnum(result.ci_95_chs[1])}]"],
            ["ci_dka", f"[{fnum(result.ci_95_dka[0])}, {fnum(result.ci_95_dka[1])}]"],
            ["method", result.method],
            ["crossfit", "yes" if result.crossfit is not None else "no"],
        ]
        sys.stdout.write(_render_table(["field", "value"], rows))


_WEIGHTS_KEYS = dict(
    _PANEL_KEYS,
    response=_parse_str,
    variant=_parse_str,
)

_WEIGHTS_DEFAULTS = dict(
    _PANEL_DEFAULTS,
    response="outcome",
    variant="two_way",
)


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="Key=value settings file.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False),
              help="Write the table here instead of stdout.")
@click.option("--format", "fmt", type=click.Choice(["table", "csv"]), default="table",
              show_default=True, help="Output format.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
def weights(config_path, out_path, fmt, seed):
    """Audit per-regressor penalty weights on a CSV panel.

    Fits the iteratively reweighted lasso of the chosen response
    (outcome or treatment) on the features and prints each regressor's
    long-run weight components: unit part, time part, remainder part
    and the combined loading. Config keys are those of estimate plus
    response and variant (two_way, cluster, heteroskedastic).
    """
    settings = _load_settings(
        config_path,
        _WEIGHTS_KEYS,
        _WEIGHTS_DEFAULTS,
        required=("data", "outcome", "treatment"),
    )
    if seed is not None:
        settings["seed"] = seed
    if settings["response"] not in ("outcome", "treatment"):
        raise click.UsageError(
            f"response must be 'outcome' or 'treatment', got {settings['response']!r}"
        )
    if settings["variant"] not in ("two_way", "cluster", "heteroskedastic"):
        raise click.UsageError(
            f"unknown variant {settings['variant']!r}; choose two_way, "
            "cluster or heteroskedastic"
        )
    data = _load_panel(settings)
    features = _features_for(data, settings["tau"])
    response = getattr(data, settings["response"]).ravel()
    design = prepare_design(features)
    _, plan = iterate_two_way_lasso(
        design,
        response,
        data.n_units,
        data.n_periods,
        variant=settings["variant"],
        c_lambda=settings["c_lambda"],
        gamma=settings["gamma"],
        bandwidth=settings["bandwidth"],
        max_refinements=settings["max_refinements"],
    )
    names = (
        features.column_names
        if hasattr(features, "column_names")
        else tuple(f"x{j + 1}" for j in range(plan.n_regressors))
    )
    if fmt == "csv":
        lines = ["column,w2_unit,w2_time,w2_cell,weight"]
        for j, name in enumerate(names):
            lines.append(
                f"{name},{format(plan.w2_a[j], '.17g')},{format(plan.w2_g[j], '.17g')},"
                f"{format(plan.w2_e[j], '.17g')},{format(plan.weights[j], '.17g')}"
            )
        _write_or_print("\n".join(lines) + "\n", out_path)
    else:
        rows = [
            [
                name,
                format(plan.w2_a[j], ".6f"),
                format(plan.w2_g[j], ".6f"),
                format(plan.w2_e[j], ".6f"),
                format(plan.weights[j], ".6f"),
            ]
            for j, name in enumerate(names)
        ]
        _write_or_print(
            _render_table(["column", "w2_unit", "w2_time", "w2_cell", "weight"], rows),
            out_path,
        )


def main(argv=None):
    """Entry point mapping exceptions to exit codes 0/1/2."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return 1
    except click.Abort:
        print("aborted", file=sys.stderr)
        return 1
    except (PanelDataError, FirstStageError, IdentificationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - internal problems
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
