import json

import numpy as np
import pytest

from snam.errors import DimensionMismatch, WrongUnitKind
from snam.model import (
    AdditiveModel,
    count_params,
    cubic_unit,
    freeze_centering,
    linear_unit,
    model_from_dict,
    model_to_dict,
    predict_eta,
    predict_eta_matrix,
    predict_mu,
    refresh_centering,
    shape_curve,
    shape_surface,
    silverman_unit,
    tensor_expand,
    tensor_unit,
    unit_forward,
)
from snam.splines import eval_basis, eval_basis_matrix
from snam.training import penalized_least_squares_oracle


def small_model(rng, frozen=True):
    X = np.column_stack([rng.uniform(0, 1, 200), rng.normal(size=200), rng.uniform(-1, 1, 200)])
    units = [
        cubic_unit(0, X[:, 0], k=6, lam=1e-3),
        linear_unit(1),
        silverman_unit(2, X[:, 2], k=5),
    ]
    model = AdditiveModel(intercept=0.3, family="gaussian", units=units, feature_names=["a", "b", "c"])
    for u in model.units:
        u.beta = rng.normal(size=u.beta.size)
    refresh_centering(model, X, only_trainable=False)
    if frozen:
        freeze_centering(model, X)
    return model, X


class TestUnitForward:
    def test_linear_unit_contribution(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(50, 2))
        model = AdditiveModel(0.0, "gaussian", [linear_unit(1)], ["a", "b"])
        model.units[0].beta = np.array([2.5])
        freeze_centering(model, X)
        mean_v = X[:, 1].mean()
        contrib, row = unit_forward(model.units[0], X[3])
        assert contrib == pytest.approx(2.5 * (X[3, 1] - mean_v))
        assert row == pytest.approx(X[3, 1] - mean_v)

    def test_zero_beta_zero_contribution(self):
        rng = np.random.default_rng(1)
        X = rng.uniform(0, 1, size=(40, 1))
        unit = cubic_unit(0, X[:, 0], k=5)
        for row in X[:5]:
            contrib, _ = unit_forward(unit, row)
            assert contrib == 0.0

    def test_frozen_contributions_sum_to_zero(self):
        rng = np.random.default_rng(2)
        model, X = small_model(rng)
        for u in model.units:
            total = u.contributions(X).sum()
            assert abs(total) < 1e-8 * X.shape[0]


class TestTensorExpand:
    def test_one_hot_outer(self):
        ei = np.zeros(4)
        ei[1] = 1.0
        ej = np.zeros(3)
        ej[2] = 1.0
        flat = tensor_expand(ei, ej)
        expected = np.zeros(12)
        expected[1 * 3 + 2] = 1.0
        assert np.array_equal(flat, expected)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            tensor_expand(np.eye(2), np.ones(3))

    def test_partition_of_unity_product(self):
        rng = np.random.default_rng(3)
        xi = rng.uniform(0, 1, 100)
        xj = rng.uniform(0, 1, 100)
        unit = tensor_unit((0, 1), xi, xj, 5, 4, strategy="uniform")
        X = np.column_stack([xi, xj])
        raw = unit.raw_design(X)
        assert np.allclose(raw @ np.ones(20), 1.0, atol=1e-10)

    def test_separable_recovery_by_least_squares(self):
        rng = np.random.default_rng(4)
        xi = np.linspace(0, 1, 30)
        xj = np.linspace(-1, 1, 30)
        unit = tensor_unit((0, 1), xi, xj, 5, 6, strategy="uniform")
        bi, bj = unit.basis
        u_vals = rng.normal(size=5)
        v_vals = rng.normal(size=6)
        # separable target evaluated on the product grid
        gi, gj = np.meshgrid(xi, xj, indexing="ij")
        X = np.column_stack([gi.ravel(), gj.ravel()])
        target = (eval_basis_matrix(bi, xi) @ u_vals)[:, None] * (
            eval_basis_matrix(bj, xj) @ v_vals
        )[None, :]
        design = unit.raw_design(X)
        beta = penalized_least_squares_oracle(design, target.ravel(), lam=0.0)
        assert np.allclose(beta, np.outer(u_vals, v_vals).ravel(), atol=1e-6)


class TestPredict:
    def test_intercept_only_gaussian(self):
        model = AdditiveModel(2.5, "gaussian", [], ["x"])
        assert predict_mu(model, [0.7]) == 2.5
        assert predict_eta(model, [-3.0]) == 2.5

    def test_bernoulli_half_at_zero(self):
        model = AdditiveModel(0.0, "bernoulli", [], ["x"])
        assert predict_mu(model, [5.0]) == pytest.approx(0.5)

    def test_matches_ordinary_linear_regression(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=300)
        y = 1.7 * x - 0.4 + rng.normal(size=300) * 0.01
        X = x[:, None]
        model = AdditiveModel(0.0, "gaussian", [linear_unit(0)], ["x"])
        freeze_centering(model, X)
        xc = x - x.mean()
        model.units[0].beta = penalized_least_squares_oracle(xc[:, None], y - y.mean(), lam=0.0)
        model.intercept = float(y.mean())
        slope, icept = np.polyfit(x, y, 1)
        preds = predict_eta_matrix(model, X)
        assert np.allclose(preds, slope * x + icept, atol=1e-8)

    def test_additivity(self):
        rng = np.random.default_rng(6)
        model, X = small_model(rng)
        for row in X[:10]:
            total = model.intercept + sum(unit_forward(u, row)[0] for u in model.units)
            assert predict_eta(model, row) == pytest.approx(total, abs=1e-12)

    def test_frozen_determinism(self):
        rng = np.random.default_rng(7)
        model, X = small_model(rng)
        a = predict_eta_matrix(model, X)
        b = predict_eta_matrix(model, X)
        assert np.array_equal(a, b)

    def test_reparameterization_invariance(self):
        rng = np.random.default_rng(8)
        model, X = small_model(rng)
        before = predict_eta_matrix(model, X)
        unit = model.units[0]
        c = 0.83
        shift = c * (1.0 - unit.center_means.sum())
        unit.beta = unit.beta + c
        model.intercept -= shift
        after = predict_eta_matrix(model, X)
        assert np.allclose(before, after, atol=1e-10)


class TestCountParams:
    def test_intercept_only(self):
        assert count_params(AdditiveModel(0.0, "gaussian", [], ["x"])) == 1

    def test_cubic_fixed_knots(self):
        rng = np.random.default_rng(9)
        unit = cubic_unit(0, rng.uniform(0, 1, 100), k=10)
        model = AdditiveModel(0.0, "gaussian", [unit], ["x"])
        assert count_params(model) == 11

    def test_silverman_counts_centers_and_bandwidths(self):
        rng = np.random.default_rng(10)
        unit = silverman_unit(0, rng.uniform(0, 1, 100), k=8)
        model = AdditiveModel(0.0, "gaussian", [unit], ["x"])
        assert count_params(model) == 1 + 8 + 16

    def test_housing_style_config_is_sparse(self):
        rng = np.random.default_rng(11)
        cols = [rng.uniform(-1, 1, 300) for _ in range(8)]
        units = [cubic_unit(i, cols[i], k=20) for i in range(6)]
        units.append(tensor_unit((6, 7), cols[6], cols[7], 20, 20))
        model = AdditiveModel(0.0, "gaussian", units, [f"f{i}" for i in range(8)])
        assert count_params(model) == 1 + 6 * 20 + 400
        assert count_params(model) <= 2400


class TestShapes:
    def test_zero_beta_flat_curve(self):
        rng = np.random.default_rng(12)
        x = rng.uniform(0, 1, 100)
        unit = cubic_unit(0, x, k=5)
        model = AdditiveModel(0.0, "gaussian", [unit], ["x"])
        freeze_centering(model, x[:, None])
        assert np.allclose(shape_curve(model, unit, np.linspace(0, 1, 11)), 0.0)

    def test_curve_sums_to_zero_on_training_values(self):
        rng = np.random.default_rng(13)
        model, X = small_model(rng)
        unit = model.units[0]
        vals = shape_curve(model, unit, X[:, 0])
        assert abs(vals.sum()) < 1e-8 * X.shape[0]

    def test_linear_unit_curve_is_affine(self):
        rng = np.random.default_rng(14)
        X = rng.normal(size=(60, 1))
        unit = linear_unit(0)
        model = AdditiveModel(0.0, "gaussian", [unit], ["x"])
        unit.beta = np.array([1.25])
        freeze_centering(model, X)
        grid = np.linspace(-2, 2, 9)
        vals = shape_curve(model, unit, grid)
        slopes = np.diff(vals) / np.diff(grid)
        assert np.allclose(slopes, 1.25)

    def test_curve_rejects_tensor(self):
        rng = np.random.default_rng(15)
        x = rng.uniform(0, 1, 50)
        unit = tensor_unit((0, 1), x, x, 4, 4)
        model = AdditiveModel(0.0, "gaussian", [unit], ["a", "b"])
        with pytest.raises(WrongUnitKind):
            shape_curve(model, unit, np.linspace(0, 1, 5))
        with pytest.raises(WrongUnitKind):
            shape_surface(model, linear_unit(0), [0.0], [0.0])

    def test_surface_zero_and_constant(self):
        rng = np.random.default_rng(16)
        x = rng.uniform(0, 1, 80)
        y = rng.uniform(0, 1, 80)
        unit = tensor_unit((0, 1), x, y, 4, 5)
        model = AdditiveModel(0.0, "gaussian", [unit], ["a", "b"])
        X = np.column_stack([x, y])
        freeze_centering(model, X)
        grid_i = np.linspace(0.1, 0.9, 7)
        grid_j = np.linspace(0.1, 0.9, 6)
        assert np.allclose(shape_surface(model, unit, grid_i, grid_j), 0.0)
        unit.beta = np.ones(20)
        # partition of unity in both marginals: raw value 1 everywhere inside
        surf = shape_surface(model, unit, grid_i, grid_j)
        assert np.allclose(surf, surf[0, 0])

    def test_surface_separable_matches_marginals(self):
        rng = np.random.default_rng(17)
        x = rng.uniform(0, 1, 80)
        y = rng.uniform(0, 1, 80)
        unit = tensor_unit((0, 1), x, y, 4, 5)
        model = AdditiveModel(0.0, "gaussian", [unit], ["a", "b"])
        u_vals = rng.normal(size=4)
        v_vals = rng.normal(size=5)
        unit.beta = np.outer(u_vals, v_vals).ravel()
        grid_i = np.linspace(0, 1, 8)
        grid_j = np.linspace(0, 1, 9)
        surf = shape_surface(model, unit, grid_i, grid_j)
        bi, bj = unit.basis
        expected = (eval_basis_matrix(bi, grid_i) @ u_vals)[:, None] * (
            eval_basis_matrix(bj, grid_j) @ v_vals
        )[None, :] - unit.center_means @ unit.beta
        assert np.allclose(surf, expected, atol=1e-8)


class TestModelValidation:
    def test_duplicate_feature_set_rejected(self):
        rng = np.random.default_rng(18)
        x = rng.uniform(0, 1, 50)
        with pytest.raises(ValueError):
            AdditiveModel(0.0, "gaussian", [linear_unit(0), cubic_unit(0, x, 5)], ["x"])

    def test_out_of_range_feature_rejected(self):
        with pytest.raises(DimensionMismatch):
            AdditiveModel(0.0, "gaussian", [linear_unit(3)], ["x"])


class TestSerialization:
    def test_round_trip_value_exact(self):
        rng = np.random.default_rng(19)
        model, X = small_model(rng)
        payload = json.dumps(model_to_dict(model))
        clone = model_from_dict(json.loads(payload))
        assert clone.family == model.family
        assert clone.intercept == model.intercept
        for a, b in zip(model.units, clone.units):
            assert a.kind == b.kind
            assert a.features == b.features
            assert np.array_equal(a.beta, b.beta)
            assert np.array_equal(a.center_means, b.center_means)
            assert a.lam == b.lam
            assert a.center_frozen == b.center_frozen
        assert np.array_equal(predict_eta_matrix(model, X), predict_eta_matrix(clone, X))

    def test_round_trip_tensor_and_truncated(self):
        rng = np.random.default_rng(20)
        x = rng.uniform(0, 1, 60)
        y = rng.uniform(-2, 2, 60)
        from snam.model import truncated_unit

        units = [tensor_unit((0, 1), x, y, 4, 4), truncated_unit(2, y, 5, degree=2)]
        model = AdditiveModel(0.1, "bernoulli", units, ["a", "b", "c"])
        for u in model.units:
            u.beta = rng.normal(size=u.beta.size)
        X = np.column_stack([x, y, y])
        freeze_centering(model, X)
        clone = model_from_dict(json.loads(json.dumps(model_to_dict(model))))
        assert np.array_equal(predict_eta_matrix(model, X), predict_eta_matrix(clone, X))
