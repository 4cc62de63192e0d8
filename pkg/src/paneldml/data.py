"""Balanced panel containers, CSV ingestion, and row-major flattening.

Every module in the package indexes flattened arrays the same way: row
r = i * T + t holds unit i at period t (unit-major, then time).
"""

import csv
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PanelDataset",
    "FeatureMatrix",
    "PanelDataError",
    "UnbalancedPanelError",
    "DuplicateKeyError",
    "CsvParseError",
    "load_csv",
    "save_csv",
    "flatten",
    "unflatten",
]


class PanelDataError(ValueError):
    """Base class for panel construction and ingestion errors."""


class UnbalancedPanelError(PanelDataError):
    """A unit is missing one or more periods; carries the offending pairs."""

    def __init__(self, missing):
        self.missing = tuple(missing)
        shown = ", ".join(f"({u}, {t})" for u, t in self.missing[:10])
        extra = "" if len(self.missing) <= 10 else f" and {len(self.missing) - 10} more"
        super().__init__(f"unbalanced panel: missing (unit, time) pairs {shown}{extra}")


class DuplicateKeyError(PanelDataError):
    """The same (unit, time) pair appears more than once."""

    def __init__(self, pairs):
        self.pairs = tuple(pairs)
        shown = ", ".join(f"({u}, {t})" for u, t in self.pairs[:10])
        super().__init__(f"duplicate (unit, time) pairs: {shown}")


class CsvParseError(PanelDataError):
    """A cell failed numeric parsing; carries 1-based row and column name."""

    def __init__(self, row, column, value):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(
            f"cannot parse value {value!r} in column {column!r} at data row {row}"
        )


def _as_readonly(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PanelDataset:
    """Balanced N x T panel of outcome, treatment, instrument and covariates.

    Arrays are immutable after construction and share the (N, T) layout; the
    covariates array has shape (N, T, p) with p >= 0. When no instrument is
    supplied the treatment doubles as its own instrument.
    """

    outcome: np.ndarray
    treatment: np.ndarray
    covariates: np.ndarray
    instrument: np.ndarray = None
    unit_labels: tuple = ()
    time_labels: tuple = ()

    def __post_init__(self):
        outcome = _as_readonly(self.outcome)
        treatment = _as_readonly(self.treatment)
        if outcome.ndim != 2:
            raise PanelDataError(f"outcome must be 2-D (N, T), got shape {outcome.shape}")
        n, t = outcome.shape
        if n < 2:
            raise PanelDataError(f"panel needs at least 2 units, got N={n}")
        if t < 4:
            raise PanelDataError(f"panel needs at least 4 periods, got T={t}")
        if treatment.shape != (n, t):
            raise PanelDataError(
                f"treatment shape {treatment.shape} does not match outcome {outcome.shape}"
            )
        instrument = self.instrument
        instrument = treatment if instrument is None else _as_readonly(instrument)
        if instrument.shape != (n, t):
            raise PanelDataError(
                f"instrument shape {instrument.shape} does not match outcome {outcome.shape}"
            )
        covariates = self.covariates
        covariates = (
            np.empty((n, t, 0)) if covariates is None else np.asarray(covariates, dtype=np.float64)
        )
        if covariates.ndim != 3 or covariates.shape[:2] != (n, t):
            raise PanelDataError(
                f"covariates must have shape (N, T, p) = ({n}, {t}, p), got {covariates.shape}"
            )
        covariates = _as_readonly(covariates)
        for name, arr in (
            ("outcome", outcome),
            ("treatment", treatment),
            ("instrument", instrument),
            ("covariates", covariates),
        ):
            if not np.all(np.isfinite(arr)):
                raise PanelDataError(f"{name} contains missing or non-finite cells")
        unit_labels = tuple(self.unit_labels) if self.unit_labels else tuple(range(n))
        time_labels = tuple(self.time_labels) if self.time_labels else tuple(range(t))
        if len(unit_labels) != n:
            raise PanelDataError(f"{len(unit_labels)} unit labels for N={n} units")
        if len(time_labels) != t:
            raise PanelDataError(f"{len(time_labels)} time labels for T={t} periods")
        if any(time_labels[s] >= time_labels[s + 1] for s in range(t - 1)):
            raise PanelDataError("time labels must be strictly increasing")
        object.__setattr__(self, "outcome", outcome)
        object.__setattr__(self, "treatment", treatment)
        object.__setattr__(self, "instrument", instrument)
        object.__setattr__(self, "covariates", covariates)
        object.__setattr__(self, "unit_labels", unit_labels)
        object.__setattr__(self, "time_labels", time_labels)

    @property
    def n_units(self):
        return self.outcome.shape[0]

    @property
    def n_periods(self):
        return self.outcome.shape[1]

    @property
    def n_covariates(self):
        return self.covariates.shape[2]

    @property
    def has_own_instrument(self):
        """True when a distinct instrument was supplied (Z is not just D)."""
        return self.instrument is not self.treatment


@dataclass(frozen=True)
class FeatureMatrix:
    """Regressor matrix in row-major panel order with named columns.

    ``has_intercept`` marks that exactly one column is constant one; that
    column is never penalized by the lasso solver.
    """

    values: np.ndarray
    column_names: tuple = ()
    has_intercept: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"feature values must be 2-D, got shape {values.shape}")
        names = tuple(self.column_names)
        if not names:
            names = tuple(f"x{j + 1}" for j in range(values.shape[1]))
        if len(names) != values.shape[1]:
            raise ValueError(
                f"{len(names)} column names for {values.shape[1]} columns"
            )
        if len(set(names)) != len(names):
            raise ValueError("column names must be unique")
        values = _as_readonly(values)
        if self.has_intercept:
            constant = [
                j
                for j in range(values.shape[1])
                if np.all(values[:, j] == 1.0)
            ]
            if len(constant) != 1:
                raise ValueError(
                    "has_intercept requires exactly one constant-one column, "
                    f"found {len(constant)}"
                )
            object.__setattr__(self, "_intercept_index", constant[0])
        else:
            object.__setattr__(self, "_intercept_index", None)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "column_names", names)

    @property
    def n_columns(self):
        return self.values.shape[1]

    @property
    def intercept_index(self):
        """Column index of the constant column, or None."""
        return self._intercept_index


def flatten(data):
    """Flatten covariates to an (N*T) x p FeatureMatrix in row-major panel order.

    Accepts a PanelDataset or a raw (N, T, p) array. Row r = i * T + t maps
    cell (i, t); columns are copied verbatim, no intercept is added.
    """
    if isinstance(data, PanelDataset):
        values = data.covariates
    else:
        values = np.asarray(data, dtype=np.float64)
        if values.ndim != 3:
            raise ValueError(f"expected (N, T, p) array, got shape {values.shape}")
    n, t, p = values.shape
    return FeatureMatrix(values.reshape(n * t, p))


def unflatten(matrix, n_units, n_periods):
    """Inverse of :func:`flatten`: reshape rows back to an (N, T, p) array."""
    values = matrix.values if isinstance(matrix, FeatureMatrix) else np.asarray(matrix)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] != n_units * n_periods:
        raise ValueError(
            f"{values.shape[0]} rows cannot reshape to ({n_units}, {n_periods}, p)"
        )
    return values.reshape(n_units, n_periods, values.shape[1])


def flatten_series(panel):
    """Flatten an (N, T) matrix to the (N*T,) vector in row-major panel order."""
    panel = np.asarray(panel, dtype=np.float64)
    if panel.ndim != 2:
        raise ValueError(f"expected (N, T) matrix, got shape {panel.shape}")
    return panel.reshape(-1)


def _sort_key(label):
    # Numeric labels sort numerically, everything else lexicographically after.
    try:
        return (0, float(label), "")
    except (TypeError, ValueError):
        return (1, 0.0, str(label))


def _parse_time(raw):
    value = float(raw)
    return int(value) if value == int(value) else value


def load_csv(path, schema):
    """Load a balanced panel from CSV.

    Parameters
    ----------
    path : path-like
        UTF-8 CSV with a header row containing ``unit`` and ``time`` columns.
    schema : mapping
        Role mapping with keys ``outcome`` (required), ``treatment``
        (required), ``instrument`` (optional) and ``covariates`` (optional
        list of column names).

    Returns
    -------
    PanelDataset
        Rows sorted unit-major then time, regardless of file order.

    Raises
    ------
    UnbalancedPanelError, DuplicateKeyError, CsvParseError, PanelDataError
    """
    outcome_col = schema.get("outcome")
    treatment_col = schema.get("treatment")
    if not outcome_col or not treatment_col:
        raise PanelDataError("schema must map 'outcome' and 'treatment' to columns")
    instrument_col = schema.get("instrument")
    covariate_cols = list(schema.get("covariates", []))
    wanted = [outcome_col, treatment_col] + ([instrument_col] if instrument_col else [])
    wanted += covariate_cols

    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        for col in ["unit", "time"] + wanted:
            if col not in header:
                raise PanelDataError(f"CSV is missing required column {col!r}")
        cells = {}
        for row_no, row in enumerate(reader, start=1):
            unit = row["unit"]
            try:
                time = _parse_time(row["time"])
            except ValueError:
                raise CsvParseError(row_no, "time", row["time"]) from None
            key = (unit, time)
            if key in cells:
                raise DuplicateKeyError([key])
            parsed = []
            for col in wanted:
                try:
                    parsed.append(float(row[col]))
                except (TypeError, ValueError):
                    raise CsvParseError(row_no, col, row[col]) from None
            cells[key] = parsed

    if not cells:
        raise PanelDataError("CSV contains no data rows")
    units = sorted({u for u, _ in cells}, key=_sort_key)
    try:
        # All-numeric unit labels round-trip as numbers, not strings.
        converted = [_parse_time(u) for u in units]
    except ValueError:
        pass
    else:
        conv = dict(zip(units, converted))
        cells = {(conv[u], t): v for (u, t), v in cells.items()}
        units = sorted(converted)
    times = sorted({t for _, t in cells})
    missing = [(u, t) for u in units for t in times if (u, t) not in cells]
    if missing:
        raise UnbalancedPanelError(missing)

    n, t, p = len(units), len(times), len(covariate_cols)
    outcome = np.empty((n, t))
    treatment = np.empty((n, t))
    instrument = np.empty((n, t)) if instrument_col else None
    covariates = np.empty((n, t, p))
    for i, u in enumerate(units):
        for s, tm in enumerate(times):
            row = cells[(u, tm)]
            outcome[i, s] = row[0]
            treatment[i, s] = row[1]
            offset = 2
            if instrument_col:
                instrument[i, s] = row[2]
                offset = 3
            covariates[i, s, :] = row[offset:]
    return PanelDataset(
        outcome=outcome,
        treatment=treatment,
        instrument=instrument,
        covariates=covariates,
        unit_labels=tuple(units),
        time_labels=tuple(times),
    )


def save_csv(data, path, schema=None):
    """Write a PanelDataset back to the CSV schema used by :func:`load_csv`.

    Floats are written with 17 significant digits so a load/save round trip
    reproduces the dataset exactly.
    """
    schema = schema or {}
    outcome_col = schema.get("outcome", "y")
    treatment_col = schema.get("treatment", "d")
    instrument_col = schema.get("instrument", "z" if data.has_own_instrument else None)
    covariate_cols = list(
        schema.get("covariates", [f"x{j + 1}" for j in range(data.n_covariates)])
    )
    if len(covariate_cols) != data.n_covariates:
        raise PanelDataError(
            f"{len(covariate_cols)} covariate names for p={data.n_covariates}"
        )

    def fmt(v):
        return format(v, ".17g")

    header = ["unit", "time", outcome_col, treatment_col]
    if instrument_col:
        header.append(instrument_col)
    header += covariate_cols
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for i, u in enumerate(data.unit_labels):
            for s, tm in enumerate(data.time_labels):
                row = [u, tm, fmt(data.outcome[i, s]), fmt(data.treatment[i, s])]
                if instrument_col:
                    row.append(fmt(data.instrument[i, s]))
                row += [fmt(v) for v in data.covariates[i, s, :]]
                writer.writerow(row)
