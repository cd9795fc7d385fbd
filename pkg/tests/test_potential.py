"""
Unit tests for potential module
"""
import logging

import numpy as np
import pytest

from src.exceptions import ConfigurationError, DomainError, HypothesisViolationError, InvalidPotentialError
from src.potential import PotentialSpec, build_potential, custom_polynomial_potential, eval_potential, \
    eval_reaction, inflated_box, product_wells_potential, quartic_potential, quasi_random_cloud, \
    spectral_bounds, validate

THREE_WELLS = [[-1.0, 0.0], [1.0, 0.0], [0.0, 1.5]]


@pytest.fixture
def quartic():
    """Scalar double well"""
    return quartic_potential()


@pytest.fixture
def three_wells():
    """Planar product-of-wells potential with three zeros"""
    return product_wells_potential(THREE_WELLS)


class TestBuiltinPotentials:
    """Test cases for the built-in potentials"""

    def test_quartic_values(self, quartic):
        """Test quartic values at the wells and the barrier"""
        assert eval_potential(quartic, [-1.0]) == 0.0
        assert eval_potential(quartic, [1.0]) == 0.0
        assert eval_potential(quartic, [0.0]) == pytest.approx(0.25)

    def test_quartic_reaction(self, quartic):
        """Test f = -F' for the quartic"""
        assert eval_reaction(quartic, [0.5])[0] == pytest.approx(0.375)
        assert eval_reaction(quartic, [1.0])[0] == 0.0

    def test_scalar_input_accepted(self, quartic):
        """Test that a plain float is a point of R^1"""
        assert eval_potential(quartic, 0.0) == pytest.approx(0.25)

    def test_product_wells_vanish_at_zeros(self, three_wells):
        """Test that F and grad F vanish at every listed zero"""
        for z in three_wells.zeros:
            assert eval_potential(three_wells, z) == 0.0
            assert np.allclose(eval_reaction(three_wells, z), 0.0)

    def test_product_wells_gradient_matches_finite_differences(self, three_wells):
        """Test the analytic gradient against central differences"""
        point = np.array([0.3, -0.4])
        h = 1e-6
        fd = np.array([(three_wells.F(point + h * e) - three_wells.F(point - h * e)) / (2 * h)
                       for e in np.eye(2)])
        assert np.allclose(three_wells.grad(point), fd, rtol=1e-6, atol=1e-8)

    def test_coincident_zeros_rejected(self):
        """Test that product_wells refuses repeated zeros"""
        with pytest.raises(ConfigurationError):
            product_wells_potential([[0.0, 0.0], [0.0, 0.0]])

    def test_single_zero_rejected(self):
        """Test that a potential needs two wells"""
        with pytest.raises(ConfigurationError):
            PotentialSpec(name='single', dimension=1, value=lambda U: U[..., 0] ** 2, zeros=[[0.0]])

    def test_build_potential_factory(self):
        """Test the config factory"""
        assert build_potential('quartic').name == 'quartic'
        assert build_potential('product_wells', zeros=THREE_WELLS).well_count == 3
        custom = build_potential('custom_polynomial', zeros=[[-1.0], [1.0]], coefficients=[0.25, 0, -0.5, 0, 0.25])
        assert custom.F(np.array([0.0])) == pytest.approx(0.25)

    def test_build_potential_errors(self):
        """Test missing parameters and unknown kinds"""
        with pytest.raises(ConfigurationError):
            build_potential('product_wells')
        with pytest.raises(ConfigurationError):
            build_potential('custom_polynomial', zeros=[-1.0, 1.0])
        with pytest.raises(ConfigurationError):
            build_potential('sextic')


class TestDiscreteGradient:
    """Test cases for the exact energy-difference property"""

    @pytest.mark.parametrize('name', ['quartic', 'three_wells', 'custom'])
    def test_energy_difference_identity(self, name, quartic, three_wells):
        """Test F(U1) - F(U0) = dg(U0, U1) . (U1 - U0)"""
        spec = {
            'quartic': quartic,
            'three_wells': three_wells,
            'custom': custom_polynomial_potential([0.0, 0.0, 1.0, -0.5, 0.1], [0.0, 1.0]),
        }[name]
        rng = np.random.default_rng(7)
        U0 = rng.uniform(-2.0, 2.0, size=(50, spec.dimension))
        U1 = rng.uniform(-2.0, 2.0, size=(50, spec.dimension))
        lhs = spec.F(U1) - spec.F(U0)
        rhs = np.sum(spec.dgrad(U0, U1) * (U1 - U0), axis=-1)
        assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-10)

    def test_midpoint_fallback(self):
        """Test the generic discrete gradient built from F and grad F only"""
        spec = PotentialSpec(name='value_only', dimension=2,
                             value=lambda U: np.sum((U * U - 1.0) ** 2, axis=-1),
                             zeros=[[1.0, 1.0], [-1.0, -1.0]])
        U0 = np.array([[0.2, -0.3], [1.5, 0.1]])
        U1 = np.array([[0.9, 0.4], [-0.5, 0.7]])
        rhs = np.sum(spec.dgrad(U0, U1) * (U1 - U0), axis=-1)
        assert np.allclose(spec.F(U1) - spec.F(U0), rhs, rtol=1e-9)

    def test_coincident_points_give_gradient(self, quartic):
        """Test that dg(U, U) = grad F(U)"""
        U = np.array([[0.3], [-0.7]])
        assert np.allclose(quartic.dgrad(U, U), quartic.grad(U))


class TestFiniteDifferenceFallbacks:
    """Test cases for potentials without analytic derivatives"""

    def test_gradient_and_hessian(self):
        """Test FD gradient and Hessian of a value-only quartic"""
        spec = PotentialSpec(name='value_only', dimension=1,
                             value=lambda U: 0.25 * (U[..., 0] ** 2 - 1.0) ** 2,
                             zeros=[[-1.0], [1.0]])
        assert spec.analytic['gradient'] is False
        assert spec.grad(np.array([0.5]))[0] == pytest.approx(-0.375, rel=1e-6)
        assert spec.hess(np.array([1.0]))[0, 0] == pytest.approx(2.0, rel=1e-4)


class TestDomainChecks:
    """Test cases for evaluator input checks"""

    def test_non_finite_input(self, quartic):
        """Test DomainError on NaN"""
        with pytest.raises(DomainError):
            eval_potential(quartic, [np.nan])

    def test_wrong_shape(self, three_wells):
        """Test DomainError on a point of the wrong dimension"""
        with pytest.raises(DomainError):
            eval_reaction(three_wells, [1.0, 2.0, 3.0])

    def test_negative_potential(self):
        """Test InvalidPotentialError below -tol_zero"""
        spec = custom_polynomial_potential([-1.0], [-1.0, 1.0])
        with pytest.raises(InvalidPotentialError):
            eval_potential(spec, [0.0])

    def test_rounding_negative_logged(self, caplog):
        """Test a value inside -tol_zero is returned as 0 and logged"""
        spec = custom_polynomial_potential([-1e-13], [-1.0, 1.0])
        with caplog.at_level(logging.DEBUG, logger='src.potential'):
            assert eval_potential(spec, [0.0]) == 0.0
        assert "reported as 0" in caplog.text


class TestSpectralBounds:
    """Test cases for Hessian bounds at the wells"""

    def test_quartic_bounds(self, quartic):
        """Test lambda = Lambda = 2 for the quartic"""
        bounds = spectral_bounds(quartic)
        assert bounds.lam == pytest.approx(2.0)
        assert bounds.Lam == pytest.approx(2.0)

    def test_product_wells_bounds(self, three_wells):
        """Test 2 prod |z_i - z_k|^2 at each well"""
        bounds = spectral_bounds(three_wells)
        assert bounds.per_well_min[0] == pytest.approx(26.0)
        assert bounds.per_well_min[2] == pytest.approx(21.125)
        assert bounds.lam == pytest.approx(21.125)
        assert bounds.Lam == pytest.approx(26.0)

    def test_degenerate_well(self):
        """Test HypothesisViolationError for a flat well"""
        spec = custom_polynomial_potential([0.0, 0.0, 0.0, 0.0, 1.0], [0.0, 2.0])
        with pytest.raises(HypothesisViolationError):
            spectral_bounds(spec)


class TestValidation:
    """Test cases for validate()"""

    def test_quartic_passes(self, quartic):
        """Test a clean report for the quartic"""
        report = validate(quartic, 2000)
        assert report.passed
        assert report.issues == []
        assert report.bounds.lam == pytest.approx(2.0)
        assert report.coercivity_constant > 0.0
        assert report.to_dict()['lambda'] == pytest.approx(2.0)

    def test_three_wells_pass(self, three_wells):
        """Test a clean report for the planar potential"""
        report = validate(three_wells, 2000)
        assert report.passed
        assert report.min_sampled_value >= 0.0

    def test_wrong_zero_flagged(self):
        """Test that a listed point that is not a zero is reported"""
        spec = custom_polynomial_potential([0.25, 0.0, -0.5, 0.0, 0.25], [-1.0, 0.5])
        report = validate(spec, 500)
        assert not report.passed
        assert any('0.5' in issue for issue in report.issues)

    def test_negative_values_flagged(self):
        """Test that a potential dipping below zero fails"""
        spec = custom_polynomial_potential([0.0, 0.0, -1.0, 0.0, 0.5], [-1.0, 1.0])
        report = validate(spec, 500)
        assert not report.passed
        assert report.min_sampled_value < 0.0


class TestSampling:
    """Test cases for the quasi-random helpers"""

    def test_cloud_is_deterministic_and_inside(self):
        """Test Halton clouds"""
        lo, hi = np.array([-1.0, 0.0]), np.array([2.0, 1.0])
        a = quasi_random_cloud(lo, hi, 100)
        b = quasi_random_cloud(lo, hi, 100)
        assert a.shape == (100, 2)
        assert np.array_equal(a, b)
        assert np.all(a >= lo) and np.all(a <= hi)

    def test_inflated_box(self):
        """Test the padding of the zero box"""
        lo, hi = inflated_box(np.array([[-1.0], [1.0]]), inflation=0.5)
        assert lo[0] == pytest.approx(-1.5)
        assert hi[0] == pytest.approx(1.5)
