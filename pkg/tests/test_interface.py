"""
Unit tests for interface module
"""
import numpy as np
import pytest

from src.exceptions import ConfigurationError
from src.interface import DSetSpec, ExitTimeDetector, InterfaceSet, detect_exit_time, hausdorff, \
    interface_of_profile, interface_of_step, layer_centroids, layer_positions
from src.layer_profile import StepFunction
from src.potential import product_wells_potential, quartic_potential
from src.solver import Grid1D, State

EPS = 0.05


@pytest.fixture(scope='module')
def quartic():
    """Scalar double well"""
    return quartic_potential()


@pytest.fixture(scope='module')
def grid():
    """400 cells on [0, 1]"""
    return Grid1D(0.0, 1.0, 400)


@pytest.fixture(scope='module')
def D(quartic):
    """Default D-set of the quartic"""
    return DSetSpec(0.5, quartic.zeros)


def layer_at(grid, centre):
    """Single tanh layer centred at the given point"""
    return np.tanh((grid.x - centre) / (np.sqrt(2.0) * EPS))


class TestHausdorff:
    """Test cases for the Hausdorff distance of finite sets"""

    def test_single_points(self):
        """Test {0.3} against {0.35}"""
        assert hausdorff(InterfaceSet.of([0.3]), InterfaceSet.of([0.35])) == pytest.approx(0.05)

    def test_unmatched_point(self):
        """Test that an extra point far away dominates"""
        assert hausdorff(InterfaceSet.of([0.3, 0.7]), InterfaceSet.of([0.3])) == pytest.approx(0.4)

    def test_brute_force_pairs(self):
        """Test small sets against the brute-force definition"""
        assert hausdorff(InterfaceSet.of([0.0, 2.0]), InterfaceSet.of([1.0])) == pytest.approx(1.0)
        assert hausdorff(InterfaceSet.of([0.2, 0.4]), InterfaceSet.of([0.2, 0.4])) == 0.0

    def test_empty_sets(self):
        """Test 0 for two empty sets and inf for one"""
        assert hausdorff(InterfaceSet(), InterfaceSet()) == 0.0
        assert hausdorff(InterfaceSet(), InterfaceSet.of([0.5])) == np.inf

    def test_sorted_construction(self):
        """Test that positions are stored in increasing order"""
        iface = InterfaceSet.of([0.7, 0.1, 0.4])
        assert iface.positions == (0.1, 0.4, 0.7)
        assert len(iface) == 3


class TestDSet:
    """Test cases for DSetSpec"""

    def test_rho_bound(self, quartic):
        """Test ConfigurationError when rho_d reaches half the well separation"""
        with pytest.raises(ConfigurationError):
            DSetSpec(1.0, quartic.zeros)
        with pytest.raises(ConfigurationError):
            DSetSpec(0.0, quartic.zeros)

    def test_membership(self, D):
        """Test the barrier is in D and a near-well state is not"""
        assert list(D.contains(np.array([0.0, 0.8, -0.3]))) == [True, False, True]

    def test_nearest_well(self, D):
        """Test the well index of each state"""
        assert list(D.nearest_well(np.array([-0.9, 0.2]))) == [0, 1]


class TestInterfaceSets:
    """Test cases for interface extraction"""

    def test_step_interface(self):
        """Test I[v] is the jump set"""
        v = StepFunction.parse("0.3:0>1,0.7:1>0", r=0.1)
        assert interface_of_step(v).positions == (0.3, 0.7)

    def test_profile_interface_near_layer(self, grid, D):
        """Test I_D[u] sits inside a few eps of the layer centre"""
        iface = interface_of_profile(layer_at(grid, 0.5), grid, D)
        assert not iface.empty
        assert np.all(np.abs(iface.as_array() - 0.5) < 2.0 * EPS)

    def test_centroids_of_two_clusters(self):
        """Test one median per cluster"""
        iface = InterfaceSet.of([0.1, 0.11, 0.12, 0.5, 0.51])
        assert np.allclose(layer_centroids(iface, 0.01), [0.11, 0.505])
        assert layer_centroids(InterfaceSet(), 0.01).size == 0

    def test_symmetric_layer_position(self, grid, D):
        """Test the sub-cell position of a symmetric layer"""
        positions = layer_positions(layer_at(grid, 0.5), grid, D)
        assert positions == pytest.approx([0.5], abs=1e-12)

    def test_two_layer_positions(self, grid, D):
        """Test one position per layer of a -1 | +1 | -1 profile"""
        s = np.sqrt(2.0) * EPS
        u = -np.tanh((grid.x - 0.3) / s) * np.tanh((grid.x - 0.7) / s)
        assert layer_positions(u, grid, D) == pytest.approx([0.3, 0.7], abs=1e-3)

    def test_planar_layer_position(self, grid):
        """Test the projection on the segment joining two planar wells"""
        potential = product_wells_potential([[-1.0, 0.0], [1.0, 0.0], [0.0, 1.5]])
        D = DSetSpec(0.5, potential.zeros)
        u = np.stack([layer_at(grid, 0.5), np.zeros(grid.n)], axis=1)
        assert layer_positions(u, grid, D) == pytest.approx([0.5], abs=1e-12)


class TestExitTime:
    """Test cases for exit-time detection"""

    def test_empty_initial_interface(self, grid, D):
        """Test ConfigurationError when u0 never enters D"""
        with pytest.raises(ConfigurationError):
            ExitTimeDetector(D, 0.05, np.ones(grid.n), grid)

    def test_delta1_positive(self, grid, D):
        """Test ConfigurationError for delta1 <= 0"""
        with pytest.raises(ConfigurationError):
            ExitTimeDetector(D, 0.0, layer_at(grid, 0.5), grid)

    def test_exit_on_stream(self, grid, D):
        """Test the first snapshot beyond delta1 is reported"""
        stream = [(0.0, layer_at(grid, 0.5)), (1.0, layer_at(grid, 0.52)),
                  (2.0, layer_at(grid, 0.6)), (3.0, layer_at(grid, 0.7))]
        result = detect_exit_time(stream, 0.05, D, layer_at(grid, 0.5), grid)
        assert result.exited
        assert result.exit_time == 2.0
        assert result.resolution == 1.0
        assert result.max_distance > 0.05

    def test_no_exit(self, grid, D):
        """Test exited is False when the stream stays in the neighbourhood"""
        stream = [(t, layer_at(grid, 0.5 + 0.01 * t)) for t in (0.0, 1.0, 2.0)]
        result = detect_exit_time(stream, 0.05, D, layer_at(grid, 0.5), grid)
        assert not result.exited
        assert result.exit_time is None
        assert result.max_distance < 0.05
        assert result.to_dict()['exited'] is False

    def test_callback_columns(self, grid, D):
        """Test the interface columns written into a ledger row"""
        u0 = layer_at(grid, 0.5)
        detector = ExitTimeDetector(D, 0.05, u0, grid)
        row = {'t': 0.0}
        stop = detector(row, State(0.0, u0, np.zeros(grid.n), EPS, 1.0))
        assert stop is False
        assert row['iface_hausdorff_to_init'] == 0.0
        assert row['iface_count'] == len(detector.initial)
        assert row['iface_min'] < 0.5 < row['iface_max']
        assert row['layer_pos_1'] == pytest.approx(0.5, abs=1e-12)
        assert row['layer_centroid_1'] == pytest.approx(0.5, abs=grid.dx)

    def test_callback_stops_on_exit(self, grid, D):
        """Test stop_on_exit ends the run at the first exit"""
        detector = ExitTimeDetector(D, 0.05, layer_at(grid, 0.5), grid, stop_on_exit=True)
        assert detector({}, State(0.0, layer_at(grid, 0.5), np.zeros(grid.n), EPS, 1.0)) is False
        assert detector({}, State(1.5, layer_at(grid, 0.6), np.zeros(grid.n), EPS, 1.0)) is True
        assert detector.result().exit_time == 1.5

    def test_stop_after_window(self, grid, D):
        """Test an early exit only stops the run once t reaches stop_after"""
        detector = ExitTimeDetector(D, 0.05, layer_at(grid, 0.5), grid, stop_on_exit=True, stop_after=3.0)
        moved = layer_at(grid, 0.6)
        assert detector({}, State(1.0, moved, np.zeros(grid.n), EPS, 1.0)) is False
        assert detector({}, State(2.0, moved, np.zeros(grid.n), EPS, 1.0)) is False
        assert detector({}, State(3.0, moved, np.zeros(grid.n), EPS, 1.0)) is True
        assert detector.result().exit_time == 1.0

    def test_exit_time_monotone_in_delta1(self, grid, D):
        """Test a larger delta1 never exits earlier"""
        stream = [(float(t), layer_at(grid, 0.5 + 0.02 * t)) for t in range(11)]
        u0 = layer_at(grid, 0.5)
        times = []
        for delta1 in (0.01, 0.03, 0.05, 0.09, 0.25):
            result = detect_exit_time(stream, delta1, D, u0, grid)
            times.append(result.exit_time if result.exited else np.inf)
        assert times == sorted(times)
        assert np.isfinite(times[0]) and times[-1] == np.inf


class TestInterfaceProperties:
    """Test cases for set inclusion and metric properties"""

    def test_larger_rho_gives_smaller_interface(self, quartic, grid):
        """Test rho' > rho implies I_D'[u] inside I_D[u]"""
        s = np.sqrt(2.0) * EPS
        u = -np.tanh((grid.x - 0.3) / s) * np.tanh((grid.x - 0.7) / s)
        sets = [set(interface_of_profile(u, grid, DSetSpec(rho, quartic.zeros)).positions)
                for rho in (0.2, 0.5, 0.8)]
        assert sets[2] <= sets[1] <= sets[0]
        assert len(sets[2]) < len(sets[0])

    def test_hausdorff_symmetric_and_triangle(self, grid):
        """Test symmetry and the triangle inequality on random grid subsets"""
        rng = np.random.default_rng(7)
        sets = [InterfaceSet.of(rng.choice(grid.x, size=rng.integers(1, 12), replace=False))
                for _ in range(8)]
        for A in sets:
            for B in sets:
                assert hausdorff(A, B) == hausdorff(B, A)
                for C in sets:
                    assert hausdorff(A, C) <= hausdorff(A, B) + hausdorff(B, C) + 1e-15
