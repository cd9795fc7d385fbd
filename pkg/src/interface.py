"""
Interface sets I_D[u] = u^{-1}(D), Hausdorff distances between them and the exit time of a
trajectory from a neighbourhood of its initial interface. Also tracks layer positions for drift.
"""
from dataclasses import dataclass, field
from typing import Dict, Any, Iterable, Optional, Tuple
import logging
import math

import numpy as np
from scipy.spatial.distance import cdist

from src.exceptions import ConfigurationError
from src.solver import Grid1D, State

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

DEFAULT_RHO_D = 0.5
CLUSTER_GAP_CELLS = 1.5


@dataclass(frozen=True)
class InterfaceSet:
    """Sorted finite set of x positions"""
    positions: Tuple[float, ...] = ()

    @classmethod
    def of(cls, points) -> 'InterfaceSet':
        return cls(tuple(float(p) for p in np.sort(np.asarray(points, dtype=float).reshape(-1))))

    @property
    def empty(self) -> bool:
        return not self.positions

    def __len__(self) -> int:
        return len(self.positions)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.positions, dtype=float)


@dataclass(frozen=True)
class DSetSpec:
    """D = {p : min_j |p - z_j| >= rho_d}, closed and away from the wells"""
    rho_d: float
    zeros: np.ndarray = field(compare=False)

    def __post_init__(self):
        Z = np.asarray(self.zeros, dtype=float)
        object.__setattr__(self, 'zeros', Z)
        separation = min(np.linalg.norm(Z[i] - Z[j]) for i in range(len(Z)) for j in range(i + 1, len(Z)))
        if not 0.0 < self.rho_d < 0.5 * separation:
            raise ConfigurationError(
                f"rho_d={self.rho_d} must lie in (0, {0.5 * separation:.4g}) (half the minimal well separation)")

    def distance_to_wells(self, U: np.ndarray) -> np.ndarray:
        U = np.asarray(U, dtype=float)
        U = U[:, None] if U.ndim == 1 else U
        return cdist(U, self.zeros).min(axis=1)

    def contains(self, U: np.ndarray) -> np.ndarray:
        return self.distance_to_wells(U) >= self.rho_d

    def nearest_well(self, U: np.ndarray) -> np.ndarray:
        U = np.asarray(U, dtype=float)
        U = U[:, None] if U.ndim == 1 else U
        return cdist(U, self.zeros).argmin(axis=1)


def interface_of_step(v) -> InterfaceSet:
    """I[v], the jump set of a step function"""
    return InterfaceSet.of(v.jumps)


def interface_of_profile(u, grid: Grid1D, D: DSetSpec) -> InterfaceSet:
    """Cell centres whose state lies in D"""
    mask = D.contains(u)
    return InterfaceSet.of(grid.x[mask])


def hausdorff(A: InterfaceSet, B: InterfaceSet) -> float:
    """
    Hausdorff distance between finite sets.

    Returns 0 when both are empty and inf when exactly one is.
    """
    if A.empty and B.empty:
        return 0.0
    if A.empty or B.empty:
        return math.inf
    d = cdist(A.as_array()[:, None], B.as_array()[:, None])
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def layer_centroids(iface: InterfaceSet, dx: float) -> np.ndarray:
    """Median position of each cluster of the interface set (gap > 1.5 dx starts a new cluster)"""
    x = iface.as_array()
    if x.size == 0:
        return x
    breaks = np.where(np.diff(x) > CLUSTER_GAP_CELLS * dx)[0] + 1
    return np.array([np.median(c) for c in np.split(x, breaks)])


def layer_positions(u, grid: Grid1D, D: DSetSpec) -> np.ndarray:
    """
    Sub-cell layer positions, one per cluster of I_D[u].

    Across each cluster the state is projected on the segment joining the wells it connects and
    the crossing of the half-way level is located by linear interpolation. A cluster whose two
    sides sit at the same well falls back to its median.
    """
    U = np.asarray(u, dtype=float)
    U = U[:, None] if U.ndim == 1 else U
    mask = D.contains(U)
    idx = np.where(mask)[0]
    if idx.size == 0:
        return np.array([])
    breaks = np.where(np.diff(idx) > 1)[0] + 1
    x = grid.x
    positions = []
    for cluster in np.split(idx, breaks):
        lo = max(int(cluster[0]) - 1, 0)
        hi = min(int(cluster[-1]) + 1, grid.n - 1)
        wells = D.nearest_well(U[[lo, hi]])
        if wells[0] == wells[1]:
            positions.append(float(np.median(x[cluster])))
            continue
        zl, zr = D.zeros[wells[0]], D.zeros[wells[1]]
        direction = zr - zl
        s = (U[lo:hi + 1] - zl) @ direction / float(direction @ direction)
        crossing = np.where((s[:-1] - 0.5) * (s[1:] - 0.5) <= 0.0)[0]
        if crossing.size == 0:
            positions.append(float(np.median(x[cluster])))
            continue
        k = int(crossing[0])
        s0, s1 = s[k], s[k + 1]
        theta = 0.5 if s1 == s0 else (0.5 - s0) / (s1 - s0)
        positions.append(float(x[lo + k] + theta * grid.dx))
    return np.array(positions)


@dataclass
class ExitResult:
    exited: bool
    exit_time: Optional[float]
    resolution: float
    max_distance: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            'exited': self.exited,
            'exit_time': self.exit_time,
            'resolution': self.resolution,
            'max_distance': self.max_distance,
        }


class ExitTimeDetector:
    """
    Run callback recording interface columns and the first time the Hausdorff distance between
    I_D[u(t)] and I_D[u0] exceeds delta1.

    Adds iface_min, iface_max, iface_hausdorff_to_init, iface_count, layer_pos_k and
    layer_centroid_k to each row.
    With stop_on_exit the run is stopped at the first row past the exit that also has t >= stop_after.
    """

    def __init__(self, D: DSetSpec, delta1: float, u0, grid: Grid1D, stop_on_exit: bool = False,
                 stop_after: float = 0.0):
        if not delta1 > 0.0:
            raise ConfigurationError(f"delta1 must be positive, got {delta1}")
        self.D = D
        self.delta1 = delta1
        self.grid = grid
        self.stop_on_exit = stop_on_exit
        self.stop_after = stop_after
        self.initial = interface_of_profile(u0, grid, D)
        if self.initial.empty:
            raise ConfigurationError("Initial interface I_D[u0] is empty")
        self.exit_time: Optional[float] = None
        self.max_distance = 0.0
        self._last_t: Optional[float] = None
        self.resolution = 0.0
        logger.info(f"ExitTimeDetector initialized: delta1={delta1}, rho_d={D.rho_d}, "
                    f"{len(self.initial)} initial interface cells")

    def observe(self, t: float, u, iface: Optional[InterfaceSet] = None) -> float:
        if iface is None:
            iface = interface_of_profile(u, self.grid, self.D)
        d = hausdorff(iface, self.initial)
        if self._last_t is not None:
            self.resolution = max(self.resolution, t - self._last_t)
        self._last_t = t
        self.max_distance = max(self.max_distance, d)
        if self.exit_time is None and d > self.delta1:
            self.exit_time = t
            logger.info(f"Interface left the {self.delta1}-neighbourhood at t={t:.6g}")
        return d

    def __call__(self, row: Dict[str, Any], state: State) -> bool:
        iface = interface_of_profile(state.u, self.grid, self.D)
        d = self.observe(state.t, state.u, iface)
        row['iface_min'] = iface.positions[0] if not iface.empty else np.nan
        row['iface_max'] = iface.positions[-1] if not iface.empty else np.nan
        row['iface_hausdorff_to_init'] = d
        row['iface_count'] = len(iface)
        for k, pos in enumerate(layer_positions(state.u, self.grid, self.D)):
            row[f'layer_pos_{k + 1}'] = pos
        for k, pos in enumerate(layer_centroids(iface, self.grid.dx)):
            row[f'layer_centroid_{k + 1}'] = pos
        return self.stop_on_exit and self.exit_time is not None and state.t >= self.stop_after

    def result(self) -> ExitResult:
        return ExitResult(exited=self.exit_time is not None, exit_time=self.exit_time,
                          resolution=self.resolution, max_distance=self.max_distance)


def detect_exit_time(stream: Iterable[Tuple[float, np.ndarray]], delta1: float, D: DSetSpec,
                     u0, grid: Grid1D) -> ExitResult:
    """
    Exit time over a stream of (t, u) snapshots.

    Returns:
        ExitResult; exited is False when the stream ends inside the neighbourhood
    """
    detector = ExitTimeDetector(D, delta1, u0, grid)
    for t, u in stream:
        detector.observe(t, u)
        if detector.exit_time is not None:
            break
    return detector.result()


if __name__ == "__main__":
    from src.potential import quartic_potential

    quartic = quartic_potential()
    grid = Grid1D(0.0, 1.0, 400)
    D = DSetSpec(DEFAULT_RHO_D, quartic.zeros)
    u = np.tanh((grid.x - 0.5) / (np.sqrt(2.0) * 0.05))
    iface = interface_of_profile(u, grid, D)
    print(len(iface), layer_centroids(iface, grid.dx), layer_positions(u, grid, D))
