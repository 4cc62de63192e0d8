import numpy as np
import pytest

from paneldml.data import flatten
from paneldml.dml import estimate_fullsample
from paneldml.estimators import PanelDml, TwoWayClusterLasso
from paneldml.penalty import iterate_two_way_lasso
from paneldml.sim import DgpConfig, generate


def small_draw(seed=31):
    data, truth = generate(
        DgpConfig(n_units=10, n_periods=16, n_regressors=6, seed=seed)
    )
    return data, truth


class TestParamInterface:
    def test_get_params_round_trip(self):
        model = PanelDml(first_stage="pols", crossfit=False, c_lambda=3.0)
        params = model.get_params()
        clone = PanelDml().set_params(**params)
        assert clone.get_params() == params

    def test_set_params_rejects_unknown(self):
        with pytest.raises(ValueError, match="unknown parameter"):
            TwoWayClusterLasso().set_params(alpha=1.0)

    def test_repr_lists_parameters(self):
        text = repr(TwoWayClusterLasso(variant="cluster"))
        assert text.startswith("TwoWayClusterLasso(")
        assert "variant='cluster'" in text

    def test_unfitted_access_raises(self):
        model = TwoWayClusterLasso()
        with pytest.raises(RuntimeError, match="not fitted"):
            model.predict(np.zeros((4, 2)))


class TestTwoWayClusterLasso:
    def test_fit_matches_functional_layer(self, rng):
        n, t_len, p = 10, 12, 5
        x = rng.standard_normal((n * t_len, p))
        y = 0.9 * x[:, 0] + rng.standard_normal(n * t_len)
        model = TwoWayClusterLasso().fit(x, y, n_units=n, n_periods=t_len)
        fit, plan = iterate_two_way_lasso(x, y, n, t_len)
        np.testing.assert_array_equal(model.coef_, fit.coefficients)
        assert model.intercept_ == fit.intercept
        np.testing.assert_array_equal(model.selected_, fit.selected)
        np.testing.assert_array_equal(model.penalty_plan_.weights, plan.weights)

    def test_predict_is_linear_model(self, rng):
        n, t_len, p = 10, 12, 4
        x = rng.standard_normal((n * t_len, p))
        y = x[:, 1] + 0.1 * rng.standard_normal(n * t_len)
        model = TwoWayClusterLasso().fit(x, y, n_units=n, n_periods=t_len)
        pred = model.predict(x)
        np.testing.assert_allclose(
            pred, model.intercept_ + x @ model.coef_, atol=1e-12
        )

    def test_panel_shape_required(self, rng):
        x = rng.standard_normal((40, 3))
        with pytest.raises(ValueError, match="n_units and n_periods"):
            TwoWayClusterLasso().fit(x, np.zeros(40))

    def test_parameter_change_changes_fit(self, rng):
        n, t_len, p = 10, 12, 5
        x = rng.standard_normal((n * t_len, p))
        y = 0.5 * x[:, 0] + rng.standard_normal(n * t_len)
        loose = TwoWayClusterLasso(c_lambda=1.01).fit(x, y, n_units=n, n_periods=t_len)
        tight = TwoWayClusterLasso(c_lambda=8.0).fit(x, y, n_units=n, n_periods=t_len)
        assert loose.selected_.size >= tight.selected_.size


class TestPanelDml:
    def test_fullsample_fit_matches_functional_layer(self):
        data, _ = small_draw()
        model = PanelDml(first_stage="pols", crossfit=False).fit(data)
        direct = estimate_fullsample(data, flatten(data), "pols")
        assert model.theta_ == direct.theta
        assert model.se_dka_ == direct.se_dka
        assert model.plan_ is None

    def test_crossfit_fit_produces_plan_and_intervals(self):
        data, truth = small_draw()
        model = PanelDml(
            first_stage="pols", crossfit=True, n_unit_folds=2, n_time_folds=4, seed=3
        ).fit(data)
        assert model.plan_ is not None
        lo, hi = model.ci_95_dka_
        assert lo < model.theta_ < hi
        assert model.estimate_.method == "pols"

    def test_fit_requires_dataset(self):
        with pytest.raises(TypeError, match="PanelDataset"):
            PanelDml().fit(np.zeros((4, 5)))

    def test_seed_controls_fold_plan(self):
        data, _ = small_draw()
        a = PanelDml(first_stage="pols", n_unit_folds=2, n_time_folds=4, seed=1).fit(data)
        b = PanelDml(first_stage="pols", n_unit_folds=2, n_time_folds=4, seed=1).fit(data)
        c = PanelDml(first_stage="pols", n_unit_folds=2, n_time_folds=4, seed=2).fit(data)
        assert a.plan_ == b.plan_
        assert a.theta_ == b.theta_
        assert a.plan_ != c.plan_

    def test_lasso_first_stage_end_to_end(self):
        data, truth = small_draw()
        model = PanelDml(first_stage="tw_lasso", crossfit=False).fit(data)
        assert np.isfinite(model.theta_)
        assert model.se_chs_ > 0 or np.isnan(model.se_chs_)
        assert model.se_dka_ > 0
        # the estimate should land within a broad neighborhood of truth
        assert abs(model.theta_ - truth.theta0) < 1.0
