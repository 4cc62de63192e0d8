import numpy as np
import pytest

from paneldml.data import PanelDataset


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance: end-to-end criteria with long Monte Carlo runs"
    )


ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    """Log one pass/fail line per acceptance criterion.

    The line prints immediately (visible under -s or on failure) and is
    replayed in the terminal summary so every run ends with the full
    criterion scoreboard.
    """
    line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_panel(rng, n_units=6, n_periods=8, n_covariates=3, instrument=False):
    """A small balanced panel with generic continuous columns."""
    shape = (n_units, n_periods)
    outcome = rng.standard_normal(shape)
    treatment = rng.standard_normal(shape)
    covariates = rng.standard_normal(shape + (n_covariates,))
    z = rng.standard_normal(shape) if instrument else None
    return PanelDataset(
        outcome=outcome,
        treatment=treatment,
        covariates=covariates,
        instrument=z,
        unit_labels=tuple(f"u{i}" for i in range(n_units)),
        time_labels=tuple(range(1, n_periods + 1)),
    )


@pytest.fixture
def panel(rng):
    return random_panel(rng)
