"""
Unit tests for geodesic module
"""
import numpy as np
import pytest

from src.exceptions import ConfigurationError, DomainError
from src.geodesic import MetricTable, PathPolyline, action_J, asymptotic_energy_P0, build_metric_table, \
    lattice_phi, optimal_path, phi, redistribute
from src.layer_profile import StepFunction
from src.potential import product_wells_potential, quartic_potential

QUARTIC_PHI = 2.0 * np.sqrt(2.0) / 3.0
# along the axis F = (1 - x^2)^2, so phi = sqrt(2) * 4 / 3
TWO_WELL_PHI = np.sqrt(2.0) * 4.0 / 3.0


@pytest.fixture
def quartic():
    """Scalar double well"""
    return quartic_potential()


@pytest.fixture(scope='module')
def two_wells():
    """Planar wells at (-1, 0) and (1, 0)"""
    return product_wells_potential([[-1.0, 0.0], [1.0, 0.0]])


@pytest.fixture(scope='module')
def three_wells():
    """Planar wells at (-1, 0), (1, 0) and (0, 1.5)"""
    return product_wells_potential([[-1.0, 0.0], [1.0, 0.0], [0.0, 1.5]])


@pytest.fixture(scope='module')
def three_well_table(three_wells):
    """Metric table of the three-well potential"""
    return build_metric_table(three_wells)


class TestPathPolyline:
    """Test cases for the polyline container"""

    def test_geometry(self):
        """Test length, endpoints and interpolation of a straight path"""
        path = PathPolyline(np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]))
        assert path.length == pytest.approx(2.0)
        assert path.sigma == pytest.approx(2.0)
        assert np.allclose(path.point_at(0.25), [0.5, 0.0])
        assert np.allclose(path.point_at([0.0, 1.0]), [[0.0, 0.0], [2.0, 0.0]])
        assert np.allclose(path.point_at(1.5), [2.0, 0.0])

    def test_reversed(self):
        """Test reversal keeps the metadata"""
        path = PathPolyline(np.array([[0.0], [1.0], [3.0]]), converged=False, action=2.5)
        back = path.reversed()
        assert np.allclose(back.start, [3.0])
        assert back.action == 2.5
        assert back.converged is False

    def test_frame_columns(self):
        """Test the CSV columns s, u_1..u_m"""
        cols = PathPolyline(np.array([[0.0, 1.0], [1.0, 1.0]])).to_frame_columns()
        assert list(cols) == ['s', 'u_1', 'u_2']
        assert cols['s'][-1] == pytest.approx(1.0)

    def test_invalid_nodes(self):
        """Test rejection of degenerate and non-finite paths"""
        with pytest.raises(ConfigurationError):
            PathPolyline(np.array([[0.0]]))
        with pytest.raises(DomainError):
            PathPolyline(np.array([[0.0], [np.nan]]))


class TestRedistribute:
    """Test cases for equal-arclength resampling"""

    def test_equal_spacing_on_line(self):
        """Test uneven nodes of a segment become equally spaced"""
        nodes = np.array([[0.0, 0.0], [0.1, 0.0], [0.15, 0.0], [1.0, 0.0]])
        out = redistribute(nodes, 11)
        assert out.shape == (11, 2)
        assert np.allclose(np.diff(out[:, 0]), 0.1)
        assert np.array_equal(out[0], nodes[0])
        assert np.array_equal(out[-1], nodes[-1])

    def test_curved_path_spread(self):
        """Test near-uniform spacing on a circular arc"""
        theta = np.linspace(0.0, np.pi, 30) ** 2 / np.pi
        nodes = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        out = PathPolyline(redistribute(nodes, 65))
        assert out.spacing_spread() < 0.02


class TestScalarPhi:
    """Test cases for phi with m = 1"""

    def test_quartic_closed_form(self, quartic):
        """Test phi(-1, 1) = 2 sqrt(2) / 3"""
        assert phi(quartic, -1.0, 1.0) == pytest.approx(QUARTIC_PHI, abs=1e-10)

    def test_partial_distance(self, quartic):
        """Test phi(-1, 0) = sqrt(2) / 3"""
        assert phi(quartic, -1.0, 0.0) == pytest.approx(np.sqrt(2.0) / 3.0, abs=1e-10)

    def test_symmetry_and_identity(self, quartic):
        """Test phi(x, y) = phi(y, x) and phi(x, x) = 0"""
        assert phi(quartic, 0.3, -0.8) == pytest.approx(phi(quartic, -0.8, 0.3))
        assert phi(quartic, 0.4, 0.4) == 0.0

    def test_straight_string_action(self, quartic):
        """Test the m = 1 string against the closed form"""
        path = optimal_path(quartic, [-1.0], [1.0])
        assert path.converged
        assert path.action == pytest.approx(QUARTIC_PHI, abs=1e-3)
        assert action_J(quartic, path) == pytest.approx(path.action)

    def test_non_finite_endpoint(self, quartic):
        """Test DomainError for a NaN endpoint"""
        with pytest.raises(DomainError):
            phi(quartic, np.nan, 1.0)


class TestActionAndTable:
    """Test cases for the discrete action and metric table helpers"""

    def test_action_refinement(self, quartic):
        """Test quadrupling the segment count cuts the error against the closed form by >= 10"""
        errors = [abs(action_J(quartic, np.linspace(-1.0, 1.0, P + 1)) - QUARTIC_PHI) for P in (10, 40)]
        assert errors[1] > 0.0
        assert errors[0] / errors[1] >= 10.0

    def test_action_rejects_nan(self, quartic):
        """Test DomainError on non-finite nodes"""
        with pytest.raises(DomainError):
            action_J(quartic, np.array([[0.0], [np.nan]]))

    def test_axiom_violations_reported(self):
        """Test that a non-metric table is flagged"""
        table = MetricTable(values=np.array([[0.0, 1.0, 5.0], [1.0, 0.0, 1.0], [5.0, 1.0, 0.0]]), sigma_max=1.0)
        issues = table.check_axioms()
        assert any('triangle' in issue for issue in issues)

    def test_asymmetry_reported(self):
        """Test that an asymmetric table is flagged"""
        table = MetricTable(values=np.array([[0.0, 1.0], [1.5, 0.0]]), sigma_max=1.0)
        assert any('asymmetry' in issue for issue in table.check_axioms())

    def test_quartic_table_and_p0(self, quartic):
        """Test the two-well table and P0 of a two-jump step function"""
        table = build_metric_table(quartic)
        assert table.values[0, 1] == pytest.approx(QUARTIC_PHI, abs=1e-10)
        assert table.sigma_max == pytest.approx(2.0)
        assert table.check_axioms() == []
        assert np.allclose(table.path(1, 0).start, [1.0])
        v = StepFunction.parse("0.3:0>1,0.7:1>0", r=0.1)
        assert asymptotic_energy_P0(quartic, v, table) == pytest.approx(2.0 * QUARTIC_PHI, abs=1e-10)

    def test_p0_rejects_unknown_index(self, quartic):
        """Test ConfigurationError for a plateau that is not a well"""
        table = build_metric_table(quartic)
        v = StepFunction.parse("0.5:0>2", r=0.1)
        with pytest.raises(ConfigurationError):
            asymptotic_energy_P0(quartic, v, table)

    def test_missing_path(self, quartic):
        """Test KeyError for a pair that was never solved"""
        table = build_metric_table(quartic)
        with pytest.raises(KeyError):
            table.path(0, 5)


class TestLatticeOracle:
    """Test cases for the grid-graph shortest path"""

    def test_planar_only(self, quartic):
        """Test ConfigurationError for m != 2"""
        with pytest.raises(ConfigurationError):
            lattice_phi(quartic, [-1.0], [1.0])

    def test_two_wells_closed_form(self, two_wells):
        """Test the lattice estimate against the straight-axis value"""
        value = lattice_phi(two_wells, two_wells.zeros[0], two_wells.zeros[1], resolution=201)
        assert value == pytest.approx(TWO_WELL_PHI, rel=0.02)


@pytest.mark.slow
class TestPlanarStrings:
    """Test cases for the string method with m = 2"""

    def test_two_wells_optimizer(self, two_wells):
        """Test the relaxed string returns to the axis and matches the closed form"""
        path = optimal_path(two_wells, two_wells.zeros[0], two_wells.zeros[1])
        assert path.action == pytest.approx(TWO_WELL_PHI, rel=5e-3)
        assert np.max(np.abs(path.nodes[:, 1])) < 0.1
        assert np.array_equal(path.start, two_wells.zeros[0])
        assert np.array_equal(path.end, two_wells.zeros[1])

    def test_two_wells_exchange_symmetry(self, two_wells):
        """Test the string is invariant under x -> -x with reversed orientation"""
        path = optimal_path(two_wells, two_wells.zeros[0], two_wells.zeros[1])
        mirrored = path.nodes[::-1] * np.array([-1.0, 1.0])
        assert np.max(np.abs(path.nodes - mirrored)) <= 1e-4

    def test_two_wells_against_lattice(self, two_wells):
        """Test optimizer and lattice agree within 2%"""
        optimized = phi(two_wells, two_wells.zeros[0], two_wells.zeros[1])
        lattice = lattice_phi(two_wells, two_wells.zeros[0], two_wells.zeros[1])
        assert optimized == pytest.approx(lattice, rel=0.02)

    def test_three_well_table_axioms(self, three_well_table):
        """Test zero diagonal, symmetry and the triangle inequality"""
        V = three_well_table.values
        assert np.all(np.diag(V) == 0.0)
        assert np.allclose(V, V.T, atol=1e-6)
        assert three_well_table.check_axioms() == []
        assert np.all(V[~np.eye(3, dtype=bool)] > 0.0)

    def test_three_well_table_against_lattice(self, three_wells, three_well_table):
        """Test each entry is at most a few percent above the lattice estimate"""
        for i, j in [(0, 1), (0, 2), (1, 2)]:
            lattice = lattice_phi(three_wells, three_wells.zeros[i], three_wells.zeros[j])
            assert three_well_table.values[i, j] <= lattice * 1.03
            assert lattice <= three_well_table.values[i, j] * 1.05

    def test_split_at_intermediate_well(self):
        """Test a path between outer collinear wells through the middle one"""
        potential = product_wells_potential([[-1.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
        full = optimal_path(potential, potential.zeros[0], potential.zeros[2])
        leg = phi(potential, potential.zeros[0], potential.zeros[1])
        assert full.action == pytest.approx(2.0 * leg, rel=0.02)
