import numpy as np
import pytest

from paneldml.data import FeatureMatrix, PanelDataset
from paneldml.mundlak import (
    Dictionary,
    build_dictionary,
    monomial_terms,
    mundlak_averages,
    term_count,
)

from .conftest import random_panel
from .oracles import mundlak_oracle, term_count_oracle


def panel_from_arrays(treatment, covariates):
    n, t_len = treatment.shape
    return PanelDataset(
        outcome=np.zeros((n, t_len)),
        treatment=treatment,
        covariates=covariates,
    )


class TestMundlakAverages:
    def test_unit_indexed_treatment(self):
        n, t_len = 4, 5
        treatment = np.repeat(
            np.arange(1.0, n + 1)[:, None], t_len, axis=1
        )  # D_it = i, constant in t
        data = panel_from_arrays(treatment, np.zeros((n, t_len, 0)))
        unit_means, time_means = mundlak_averages(data)
        np.testing.assert_allclose(unit_means[:, 0], np.arange(1.0, n + 1), atol=1e-14)
        np.testing.assert_allclose(
            time_means[:, 0], np.full(t_len, np.arange(1.0, n + 1).mean()), atol=1e-14
        )

    def test_time_constant_covariates_reproduced(self, rng):
        n, t_len = 5, 6
        levels = rng.standard_normal((n, 2))
        covariates = np.repeat(levels[:, None, :], t_len, axis=1)
        data = panel_from_arrays(rng.standard_normal((n, t_len)), covariates)
        unit_means, _ = mundlak_averages(data)
        np.testing.assert_allclose(unit_means[:, 1:], levels, atol=1e-14)

    def test_random_panel_against_loop_oracle(self, rng):
        n, t_len = 3, 4
        treatment = rng.standard_normal((n, t_len))
        covariates = rng.standard_normal((n, t_len, 2))
        data = panel_from_arrays(treatment, covariates)
        unit_means, time_means = mundlak_averages(data)
        unit_block, time_block = mundlak_oracle(treatment, covariates)
        expanded_unit = np.repeat(unit_means, t_len, axis=0)
        expanded_time = np.tile(time_means, (n, 1))
        np.testing.assert_allclose(expanded_unit, unit_block, atol=1e-14)
        np.testing.assert_allclose(expanded_time, time_block, atol=1e-14)

    def test_requires_dataset(self):
        with pytest.raises(TypeError):
            mundlak_averages(np.zeros((3, 4)))


class TestTermCount:
    def test_linear_case(self):
        assert term_count(5, 1) == 5

    def test_quadratic_seven_inputs(self):
        assert term_count(7, 2) == 35

    def test_cubic_seven_inputs(self):
        assert term_count(7, 3) == 119

    def test_matches_enumeration_oracle(self):
        for k in range(1, 9):
            for order in (1, 2, 3):
                assert term_count(k, order) == term_count_oracle(k, order)

    def test_matches_actual_term_list(self):
        for k in (2, 4, 7):
            for order in (1, 2, 3):
                assert len(monomial_terms(k, order)) == term_count(k, order)

    def test_term_list_is_deduplicated_and_degree_bounded(self):
        terms = monomial_terms(3, 3)
        assert len(set(terms)) == len(terms)
        assert all(1 <= sum(t) <= 3 for t in terms)

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            term_count(0, 2)
        with pytest.raises(ValueError):
            term_count(3, 4)


class TestBuildDictionary:
    def test_linear_expansion_has_input_columns_plus_intercept(self, rng):
        data = random_panel(rng, n_units=4, n_periods=5, n_covariates=1)
        out = build_dictionary(data, 1)
        # 1 covariate + 2 unit averages + 2 time averages = 5 inputs
        assert out.n_columns == 5 + 1
        assert out.has_intercept
        assert out.order == 1

    def test_quadratic_column_count(self, rng):
        data = random_panel(rng, n_units=4, n_periods=5, n_covariates=1)
        out = build_dictionary(data, 2)
        assert out.n_columns == term_count(5, 2) + 1

    def test_is_a_feature_matrix(self, rng):
        data = random_panel(rng, n_units=4, n_periods=5, n_covariates=2)
        out = build_dictionary(data, 2)
        assert isinstance(out, Dictionary)
        assert isinstance(out, FeatureMatrix)
        assert len(out.term_index) == out.n_columns

    def test_inputs_standardized_before_expansion(self, rng):
        data = random_panel(rng, n_units=6, n_periods=8, n_covariates=2)
        out = build_dictionary(data, 1)
        linear = out.values[:, : out.n_columns - 1]
        np.testing.assert_allclose(linear.mean(axis=0), 0.0, atol=1e-10)
        np.testing.assert_allclose(linear.std(axis=0), 1.0, atol=1e-10)

    def test_squared_column_is_square_of_linear_column(self, rng):
        data = random_panel(rng, n_units=4, n_periods=6, n_covariates=1)
        out = build_dictionary(data, 2)
        names = list(out.column_names)
        x1 = out.values[:, names.index("x1")]
        x1_sq = out.values[:, names.index("x1^2")]
        np.testing.assert_allclose(x1_sq, x1**2, atol=1e-12)

    def test_column_guard(self, rng):
        data = random_panel(rng, n_units=4, n_periods=5, n_covariates=3)
        with pytest.raises(ValueError, match="columns"):
            build_dictionary(data, 3, max_columns=20)

    def test_deterministic_output(self, rng):
        data = random_panel(rng, n_units=4, n_periods=5, n_covariates=2)
        a = build_dictionary(data, 2)
        b = build_dictionary(data, 2)
        np.testing.assert_array_equal(a.values, b.values)
        assert a.column_names == b.column_names
