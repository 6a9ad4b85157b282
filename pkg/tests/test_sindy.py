"""Sparse polynomial dynamics: library layout, STLSQ, sparsity invariant."""

import numpy as np
import pytest

from romuq.errors import DataError, NumericalError
from romuq.rom.sindy import (
    SindyModel,
    n_polynomial_features,
    polynomial_feature_names,
    polynomial_features,
    sindy_fit,
)


class TestLibrary:
    def test_feature_counts(self):
        # C(m + p, p) hand table
        assert n_polynomial_features(4, 2) == 15
        assert n_polynomial_features(2, 3) == 10
        assert n_polynomial_features(1, 1) == 2
        assert n_polynomial_features(3, 0) == 1
        with pytest.raises(DataError):
            n_polynomial_features(0, 2)
        with pytest.raises(DataError):
            n_polynomial_features(2, -1)

    def test_names_graded_lex(self):
        assert polynomial_feature_names(2, 2) == (
            "1", "z1", "z2", "z1^2", "z1*z2", "z2^2",
        )
        assert polynomial_feature_names(3, 2) == (
            "1", "z1", "z2", "z3",
            "z1^2", "z1*z2", "z1*z3", "z2^2", "z2*z3", "z3^2",
        )

    def test_column_values(self, rng):
        z = rng.normal(size=(7, 2))
        theta = polynomial_features(z, 2)
        assert theta.shape == (7, 6)
        np.testing.assert_array_equal(theta[:, 0], 1.0)
        np.testing.assert_array_equal(theta[:, 1], z[:, 0])
        np.testing.assert_array_equal(theta[:, 2], z[:, 1])
        np.testing.assert_array_equal(theta[:, 3], z[:, 0] ** 2)
        np.testing.assert_array_equal(theta[:, 4], z[:, 0] * z[:, 1])
        np.testing.assert_array_equal(theta[:, 5], z[:, 1] ** 2)

    def test_single_vector_promoted(self):
        theta = polynomial_features([2.0, 3.0], 2)
        np.testing.assert_array_equal(theta, [[1.0, 2.0, 3.0, 4.0, 6.0, 9.0]])


class TestSindyFit:
    def _make_data(self, rng, n=200):
        z = rng.uniform(-2.0, 2.0, size=(n, 2))
        theta = polynomial_features(z, 2)
        xi_true = np.zeros((6, 2))
        xi_true[2, 0] = 1.5    # dz1 = 1.5 z2 - 0.8 z1*z2
        xi_true[4, 0] = -0.8
        xi_true[0, 1] = 0.3    # dz2 = 0.3 - 1.2 z1^2
        xi_true[3, 1] = -1.2
        return z, theta @ xi_true, xi_true

    def test_exact_recovery(self, rng):
        z, dz, xi_true = self._make_data(rng)
        model = sindy_fit(z, dz, poly_order=2, threshold=0.05, ridge=0.0)
        np.testing.assert_array_equal(
            model.coefficients != 0.0, xi_true != 0.0
        )
        np.testing.assert_allclose(model.coefficients, xi_true, atol=1e-10)

    def test_linear_decay_recovery(self, rng):
        z = rng.uniform(-2.0, 2.0, size=(400, 1))
        dz = -0.5 * z
        model = sindy_fit(z, dz, poly_order=2, threshold=0.1, ridge=0.0)
        expected = np.zeros((3, 1))
        expected[1, 0] = -0.5
        np.testing.assert_allclose(model.coefficients, expected, atol=1e-8)

    def test_oscillator_with_quadratic_term(self, rng):
        z = rng.uniform(-2.0, 2.0, size=(1000, 2))
        dz = np.column_stack([z[:, 1], -z[:, 0] - 0.1 * z[:, 0] ** 2])
        model = sindy_fit(z, dz, poly_order=2, threshold=0.05, ridge=0.0)
        expected = np.zeros((6, 2))
        expected[2, 0] = 1.0    # dz1 = z2
        expected[1, 1] = -1.0   # dz2 = -z1 - 0.1 z1^2
        expected[3, 1] = -0.1
        np.testing.assert_array_equal(model.coefficients != 0.0, expected != 0.0)
        np.testing.assert_allclose(model.coefficients, expected, atol=1e-6)

    def test_zero_derivatives_give_zero_model(self, rng):
        z = rng.normal(size=(100, 2))
        model = sindy_fit(z, np.zeros((100, 2)), poly_order=2, ridge=0.0)
        np.testing.assert_array_equal(model.coefficients, 0.0)

    def test_sparsity_invariant_on_fit(self, rng):
        z = rng.uniform(-2.0, 2.0, size=(300, 3))
        dz = rng.normal(size=(300, 2))  # noise: forces heavy pruning
        model = sindy_fit(z, dz, poly_order=2, threshold=0.1, ridge=1e-6)
        nonzero = model.coefficients[model.coefficients != 0.0]
        if nonzero.size:
            assert np.abs(nonzero).min() >= 0.1

    def test_threshold_can_prune_everything(self, rng):
        z, dz, _ = self._make_data(rng)
        model = sindy_fit(z, dz, poly_order=2, threshold=1e6, ridge=0.0)
        assert model.complexity == 0
        assert model.equations() == ("0", "0")

    def test_deterministic(self, rng):
        z, dz, _ = self._make_data(rng)
        a = sindy_fit(z, dz, poly_order=2)
        b = sindy_fit(z, dz, poly_order=2)
        np.testing.assert_array_equal(a.coefficients, b.coefficients)

    def test_rank_deficiency(self, rng):
        z1 = rng.uniform(-1.0, 1.0, size=(50, 1))
        z = np.hstack([z1, z1])  # collinear coordinates
        dz = z1.copy()
        with pytest.raises(NumericalError, match="ridge"):
            sindy_fit(z, dz, poly_order=2, threshold=0.0, ridge=0.0)
        model = sindy_fit(z, dz, poly_order=2, threshold=0.05, ridge=1e-6)
        np.testing.assert_allclose(model.predict(z), dz, atol=1e-3)

    def test_underdetermined_warning(self, rng):
        z = rng.normal(size=(3, 4))
        dz = rng.normal(size=(3, 2))
        with pytest.warns(UserWarning, match="underdetermined"):
            sindy_fit(z, dz, poly_order=2, ridge=1e-6)

    def test_input_validation(self, rng):
        z = rng.normal(size=(10, 2))
        dz = rng.normal(size=(10, 1))
        with pytest.raises(DataError, match="2-d"):
            sindy_fit(z[0], dz, poly_order=2)
        with pytest.raises(DataError, match="sample count"):
            sindy_fit(z, dz[:5], poly_order=2)
        with pytest.raises(DataError, match="finite"):
            bad = z.copy()
            bad[0, 0] = np.inf
            sindy_fit(bad, dz, poly_order=2)
        with pytest.raises(DataError, match="poly_order"):
            sindy_fit(z, dz, poly_order=0)
        with pytest.raises(DataError, match="nonnegative"):
            sindy_fit(z, dz, threshold=-0.1)


class TestSindyModel:
    def _model(self):
        coef = np.zeros((6, 2))
        coef[0, 0] = 0.3
        coef[3, 0] = -1.2
        return SindyModel(
            coefficients=coef, n_state=2, poly_order=2, threshold=0.05, ridge=0.0
        )

    def test_predict_matches_library(self, rng):
        model = self._model()
        z = rng.normal(size=(9, 2))
        expected = polynomial_features(z, 2) @ model.coefficients
        np.testing.assert_array_equal(model.predict(z), expected)
        assert model.n_features == 6
        assert model.n_targets == 2
        assert model.complexity == 2

    def test_predict_shape_check(self):
        with pytest.raises(DataError, match="columns"):
            self._model().predict(np.zeros((4, 3)))

    def test_equations_rendering(self):
        eq = self._model().equations()
        assert eq == ("0.3 + -1.2 z1^2", "0")

    def test_subthreshold_nonzero_rejected(self):
        coef = np.zeros((6, 1))
        coef[1, 0] = 0.01  # below threshold but not exactly zero
        with pytest.raises(DataError, match="exactly zero"):
            SindyModel(
                coefficients=coef, n_state=2, poly_order=2, threshold=0.05, ridge=0.0
            )

    def test_shape_and_finiteness_checks(self):
        with pytest.raises(DataError, match="rows"):
            SindyModel(
                coefficients=np.zeros((5, 1)),
                n_state=2, poly_order=2, threshold=0.05, ridge=0.0,
            )
        bad = np.zeros((6, 1))
        bad[0, 0] = np.nan
        with pytest.raises(DataError, match="finite"):
            SindyModel(
                coefficients=bad, n_state=2, poly_order=2, threshold=0.05, ridge=0.0
            )

    def test_coefficients_frozen(self):
        model = self._model()
        with pytest.raises(ValueError):
            model.coefficients[0, 0] = 9.9
