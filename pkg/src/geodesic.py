"""
Degenerate metric phi induced by sqrt(2F), optimal well-to-well paths and the asymptotic energy P0.
Paths are polylines relaxed by a preconditioned string method with equal-arclength redistribution.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np
from scipy import integrate, sparse
from scipy.linalg import solve_banded
from scipy.sparse.csgraph import dijkstra

from src.exceptions import PathOptimizationError, ConfigurationError, DomainError
from src.potential import PotentialSpec, inflated_box

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

DEFAULT_NODES = 257
MAX_SWEEPS = 5000
TOL_PATH = 1e-10
RHO_SPLIT = 1e-3
TOL_METRIC_SCALAR = 1e-6
TOL_METRIC_VECTOR = 2e-2
MIN_STEP = 1e-10


@dataclass
class PathPolyline:
    """
    Polyline p_0..p_P in R^m parametrized on [0, 1] at constant speed.

    sigma is the speed, i.e. the total Euclidean length.
    """
    nodes: np.ndarray
    converged: bool = True
    sweeps: int = 0
    action: Optional[float] = None

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        if nodes.shape[0] < 2:
            raise ConfigurationError("A path needs at least two nodes")
        if not np.all(np.isfinite(nodes)):
            raise DomainError("Path nodes must be finite")
        self.nodes = nodes

    @property
    def dimension(self) -> int:
        return self.nodes.shape[1]

    @property
    def start(self) -> np.ndarray:
        return self.nodes[0]

    @property
    def end(self) -> np.ndarray:
        return self.nodes[-1]

    @property
    def segment_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.nodes, axis=0), axis=1)

    @property
    def arclength(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.segment_lengths)])

    @property
    def length(self) -> float:
        return float(self.segment_lengths.sum())

    @property
    def sigma(self) -> float:
        return self.length

    def spacing_spread(self) -> float:
        """Relative spread of the node spacing (0 for an exactly equal-arclength path)"""
        seg = self.segment_lengths
        mean = seg.mean()
        if mean == 0.0:
            return 0.0
        return float((seg.max() - seg.min()) / mean)

    def point_at(self, w) -> np.ndarray:
        """Point at normalized arclength w in [0, 1] (clamped), vectorized over w"""
        s = self.arclength
        total = s[-1]
        w = np.clip(np.asarray(w, dtype=float), 0.0, 1.0)
        if total == 0.0:
            return np.broadcast_to(self.nodes[0], w.shape + (self.dimension,)).copy()
        target = w * total
        return np.stack([np.interp(target, s, self.nodes[:, k]) for k in range(self.dimension)], axis=-1)

    def reversed(self) -> 'PathPolyline':
        return PathPolyline(self.nodes[::-1].copy(), converged=self.converged, sweeps=self.sweeps,
                            action=self.action)

    def to_frame_columns(self) -> Dict[str, np.ndarray]:
        """Columns s, u_1..u_m for CSV export"""
        s = self.arclength
        cols = {'s': s / s[-1] if s[-1] > 0 else s}
        for k in range(self.dimension):
            cols[f'u_{k + 1}'] = self.nodes[:, k]
        return cols


@dataclass
class MetricTable:
    """phi(z_i, z_j) for all listed wells plus the stored optimal paths"""
    values: np.ndarray
    sigma_max: float
    paths: Dict[Tuple[int, int], PathPolyline] = field(default_factory=dict)
    tol_metric: float = TOL_METRIC_SCALAR

    @property
    def well_count(self) -> int:
        return self.values.shape[0]

    def path(self, i: int, j: int) -> PathPolyline:
        if (i, j) in self.paths:
            return self.paths[(i, j)]
        if (j, i) in self.paths:
            return self.paths[(j, i)].reversed()
        raise KeyError(f"No stored path between wells {i} and {j}")

    def check_axioms(self) -> List[str]:
        """Metric axiom violations (empty when the table is a metric within tol_metric)"""
        issues = []
        V = self.values
        K = self.well_count
        tol = self.tol_metric * max(1.0, float(V.max()))
        if np.any(np.diag(V) != 0.0):
            issues.append("nonzero diagonal")
        if np.max(np.abs(V - V.T)) > tol:
            issues.append(f"asymmetry {np.max(np.abs(V - V.T)):.3e}")
        for i in range(K):
            for j in range(K):
                for k in range(K):
                    if V[i, k] > V[i, j] + V[j, k] + tol:
                        issues.append(f"triangle inequality fails for ({i}, {j}, {k})")
        return issues


# ---------------------------------------------------------------------------
# action

def _sqrt_2F(potential: PotentialSpec, U: np.ndarray) -> np.ndarray:
    return np.sqrt(2.0 * np.maximum(potential.F(U), 0.0))


def action_J(potential: PotentialSpec, path) -> float:
    """
    Discrete action: sum over segments of sqrt(2 F(midpoint)) times the segment length.

    Args:
        potential: the potential F
        path: PathPolyline or an array of nodes (P+1, m)

    Returns:
        Nonnegative action value
    """
    nodes = path.nodes if isinstance(path, PathPolyline) else np.asarray(path, dtype=float)
    if nodes.ndim == 1:
        nodes = nodes[:, None]
    if not np.all(np.isfinite(nodes)):
        raise DomainError("Path nodes must be finite")
    mid = 0.5 * (nodes[1:] + nodes[:-1])
    lengths = np.linalg.norm(np.diff(nodes, axis=0), axis=1)
    return float(np.sum(_sqrt_2F(potential, mid) * lengths))


def _phi_scalar(potential: PotentialSpec, a: float, b: float) -> float:
    lo, hi = min(a, b), max(a, b)
    if lo == hi:
        return 0.0
    inner = [float(z) for z in potential.zeros[:, 0] if lo < z < hi]
    value, _ = integrate.quad(lambda s: float(_sqrt_2F(potential, np.array([s]))), lo, hi,
                              points=inner or None, epsabs=1e-13, epsrel=1e-12, limit=200)
    return float(value)


def phi(potential: PotentialSpec, xi1, xi2, n_nodes: int = DEFAULT_NODES) -> float:
    """
    Degenerate distance phi(xi1, xi2).

    For m = 1 the monotone path is optimal and phi is the quadrature of sqrt(2F) between the
    points. For m >= 2 the value is the action of the relaxed string.

    Raises:
        PathOptimizationError: string relaxation did not converge (best_value is an upper bound)
    """
    p = np.atleast_1d(np.asarray(xi1, dtype=float))
    q = np.atleast_1d(np.asarray(xi2, dtype=float))
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
        raise DomainError("phi needs finite endpoints")
    if potential.dimension == 1:
        return _phi_scalar(potential, float(p[0]), float(q[0]))
    if np.array_equal(p, q):
        return 0.0
    path = optimal_path(potential, p, q, n_nodes=n_nodes)
    if not path.converged:
        raise PathOptimizationError(
            f"String relaxation between {p.tolist()} and {q.tolist()} did not converge",
            best_value=float(path.action), path=path)
    return float(path.action)


# ---------------------------------------------------------------------------
# string method

def redistribute(nodes: np.ndarray, n_nodes: Optional[int] = None, tol: float = 1e-10,
                 max_passes: int = 200) -> np.ndarray:
    """Resample a polyline at equal arclength, keeping the endpoints exactly"""
    nodes = np.asarray(nodes, dtype=float)
    n = nodes.shape[0] if n_nodes is None else n_nodes
    start = nodes[0].copy()
    end = nodes[-1].copy()
    current = nodes
    for _ in range(max_passes):
        seg = np.linalg.norm(np.diff(current, axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        if s[-1] == 0.0:
            return np.repeat(start[None, :], n, axis=0)
        target = np.linspace(0.0, s[-1], n)
        current = np.stack([np.interp(target, s, current[:, k]) for k in range(current.shape[1])], axis=1)
        current[0] = start
        current[-1] = end
        seg = np.linalg.norm(np.diff(current, axis=0), axis=1)
        if (seg.max() - seg.min()) <= tol * seg.mean():
            break
    return current


def _action_gradient(potential: PotentialSpec, nodes: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradient of the discrete action with respect to the interior nodes, plus S and L per segment"""
    diff = np.diff(nodes, axis=0)
    L = np.linalg.norm(diff, axis=1)
    L_safe = np.where(L > 0.0, L, 1.0)
    t = diff / L_safe[:, None]
    mid = 0.5 * (nodes[1:] + nodes[:-1])
    F = np.maximum(potential.F(mid), 0.0)
    S = np.sqrt(2.0 * F)
    S_safe = np.where(S > 0.0, S, 1.0)
    # grad sqrt(2F) = grad F / sqrt(2F), zero where F vanishes
    gS = np.where((S > 0.0)[:, None], potential.grad(mid) / S_safe[:, None], 0.0)
    g = (0.5 * L[:-1, None] * gS[:-1] + S[:-1, None] * t[:-1]
         + 0.5 * L[1:, None] * gS[1:] - S[1:, None] * t[1:])
    return g, S, L


def _preconditioned_direction(g: np.ndarray, nodes: np.ndarray, S: np.ndarray, L: np.ndarray) -> np.ndarray:
    # drop the tangential part of the gradient
    tangent = nodes[2:] - nodes[:-2]
    norm = np.linalg.norm(tangent, axis=1, keepdims=True)
    tangent = tangent / np.where(norm > 0.0, norm, 1.0)
    g_perp = g - np.sum(g * tangent, axis=1, keepdims=True) * tangent

    stiff = S / np.where(L > 0.0, L, 1.0)
    mu = 1e-3 * max(float(stiff.max()), 1e-12)
    n = g.shape[0]
    ab = np.zeros((3, n))
    ab[1] = stiff[:-1] + stiff[1:] + mu
    ab[0, 1:] = -stiff[1:-1]
    ab[2, :-1] = -stiff[1:-1]
    return solve_banded((1, 1), ab, g_perp)


def _initial_string(z_i: np.ndarray, z_j: np.ndarray, n_nodes: int) -> np.ndarray:
    s = np.linspace(0.0, 1.0, n_nodes)
    nodes = z_i[None, :] + s[:, None] * (z_j - z_i)[None, :]
    m = z_i.shape[0]
    if m >= 2:
        delta = z_j - z_i
        # transverse bump in the plane of the first two coordinates that delta does not annihilate
        normal = np.zeros(m)
        if abs(delta[0]) + abs(delta[1]) > 0.0:
            normal[0], normal[1] = -delta[1], delta[0]
        else:
            normal[0] = 1.0
        normal /= np.linalg.norm(normal)
        nodes = nodes + 0.1 * np.linalg.norm(delta) * np.sin(np.pi * s)[:, None] * normal[None, :]
    return nodes


def _relax_string(potential: PotentialSpec, nodes: np.ndarray, max_sweeps: int,
                  tol_path: float) -> Tuple[np.ndarray, float, bool, int]:
    nodes = redistribute(nodes)
    J = action_J(potential, nodes)
    eta = 1.0
    for sweep in range(1, max_sweeps + 1):
        g, S, L = _action_gradient(potential, nodes)
        direction = _preconditioned_direction(g, nodes, S, L)
        while True:
            trial = nodes.copy()
            trial[1:-1] -= eta * direction
            trial = redistribute(trial)
            J_trial = action_J(potential, trial)
            if J_trial < J:
                decrease = J - J_trial
                nodes, J = trial, J_trial
                eta = min(1.0, 1.2 * eta)
                if decrease < tol_path * J:
                    return nodes, J, True, sweep
                break
            eta *= 0.5
            if eta < MIN_STEP:
                # no descent left at the resolution of the string
                return nodes, J, True, sweep
    return nodes, J, False, max_sweeps


def optimal_path(potential: PotentialSpec, z_i, z_j, n_nodes: int = DEFAULT_NODES,
                 max_sweeps: int = MAX_SWEEPS, tol_path: float = TOL_PATH,
                 rho_split: float = RHO_SPLIT, _depth: int = 0) -> PathPolyline:
    """
    Approximate minimizer of the action between two points.

    The string starts from the straight segment (with one transverse bump when m >= 2) and
    alternates preconditioned descent of the interior nodes with equal-arclength redistribution.
    A relaxed string passing within rho_split of another well is split there and both legs are
    relaxed separately.

    Args:
        potential: the potential F
        z_i, z_j: endpoints, normally two listed zeros
        n_nodes: node count P + 1
        max_sweeps: descent sweep cap
        tol_path: relative decrease per sweep that counts as converged

    Returns:
        PathPolyline with exact endpoints; converged is False after max_sweeps
    """
    a = np.atleast_1d(np.asarray(z_i, dtype=float))
    b = np.atleast_1d(np.asarray(z_j, dtype=float))
    if a.shape != (potential.dimension,) or b.shape != (potential.dimension,):
        raise DomainError(f"Endpoints must lie in R^{potential.dimension}")
    if n_nodes < 3:
        raise ConfigurationError("optimal_path needs at least three nodes")

    if potential.dimension == 1 or np.array_equal(a, b):
        nodes = np.linspace(0.0, 1.0, n_nodes)[:, None] * (b - a)[None, :] + a[None, :]
        nodes[-1] = b
        return PathPolyline(nodes, converged=True, sweeps=0, action=action_J(potential, nodes))

    if potential.dimension >= 3 and _depth == 0:
        logger.warning(f"String relaxation in R^{potential.dimension} returns a local minimizer only")

    nodes, J, converged, sweeps = _relax_string(potential, _initial_string(a, b, n_nodes), max_sweeps, tol_path)
    if not converged:
        logger.warning(f"String between {a.tolist()} and {b.tolist()} not converged after {sweeps} sweeps "
                       f"(J = {J:.8g})")

    # split at intermediate wells the string runs through
    for z in potential.zeros:
        if np.array_equal(z, a) or np.array_equal(z, b) or _depth > potential.well_count:
            continue
        if np.min(np.linalg.norm(nodes[1:-1] - z, axis=1)) < rho_split:
            logger.info(f"Splitting path at intermediate well {z.tolist()}")
            first = optimal_path(potential, a, z, n_nodes, max_sweeps, tol_path, rho_split, _depth + 1)
            second = optimal_path(potential, z, b, n_nodes, max_sweeps, tol_path, rho_split, _depth + 1)
            joined = redistribute(np.vstack([first.nodes, second.nodes[1:]]), n_nodes)
            return PathPolyline(joined, converged=first.converged and second.converged,
                                sweeps=sweeps + first.sweeps + second.sweeps,
                                action=first.action + second.action)

    return PathPolyline(nodes, converged=converged, sweeps=sweeps, action=J)


# ---------------------------------------------------------------------------
# metric table and asymptotic energy

def build_metric_table(potential: PotentialSpec, n_nodes: int = DEFAULT_NODES,
                       max_workers: Optional[int] = None) -> MetricTable:
    """
    phi between every pair of listed wells.

    Pairs are optimized concurrently; results are merged by index so the table is deterministic.
    """
    Z = potential.zeros
    K = potential.well_count
    pairs = [(i, j) for i in range(K) for j in range(i + 1, K)]
    logger.info(f"Building metric table for {potential.name}: {len(pairs)} pairs")

    def solve(pair):
        i, j = pair
        path = optimal_path(potential, Z[i], Z[j], n_nodes=n_nodes)
        if potential.dimension == 1:
            path.action = _phi_scalar(potential, float(Z[i, 0]), float(Z[j, 0]))
        return pair, path

    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        results = dict(executor.map(solve, pairs))

    values = np.zeros((K, K))
    paths = {}
    for (i, j) in pairs:
        path = results[(i, j)]
        if not path.converged:
            logger.warning(f"Metric entry ({i}, {j}) is an upper bound only")
        values[i, j] = values[j, i] = path.action
        paths[(i, j)] = path
    sigma_max = max(p.sigma for p in paths.values())
    tol = TOL_METRIC_SCALAR if potential.dimension == 1 else TOL_METRIC_VECTOR
    table = MetricTable(values=values, sigma_max=float(sigma_max), paths=paths, tol_metric=tol)
    issues = table.check_axioms()
    if issues:
        logger.warning(f"Metric table violates axioms: {issues}")
    return table


def asymptotic_energy_P0(potential: PotentialSpec, v, table: MetricTable) -> float:
    """
    P0[v]: sum of phi across the jumps of a step function.

    Args:
        potential: the potential whose wells v takes values in
        v: step function with plateau indices v.values
        table: metric table of the same potential
    """
    indices = [int(k) for k in v.values]
    K = table.well_count
    for k in indices:
        if not 0 <= k < K or k >= potential.well_count:
            raise ConfigurationError(f"Step function value index {k} is not a listed zero")
    return float(sum(table.values[indices[n], indices[n + 1]] for n in range(len(indices) - 1)))


# ---------------------------------------------------------------------------
# lattice oracle

_STENCIL = [(1, 0), (0, 1), (1, 1), (1, -1), (1, 2), (2, 1), (1, -2), (2, -1)]


def lattice_phi(potential: PotentialSpec, xi1, xi2, resolution: int = 401,
                box: Optional[Tuple[Sequence[float], Sequence[float]]] = None) -> float:
    """
    Shortest-path estimate of phi on a planar grid graph with a 16-neighbour stencil.

    Edge weights are sqrt(2 F(edge midpoint)) times the edge length; endpoints snap to the
    nearest grid node.

    Args:
        potential: a potential with m = 2
        xi1, xi2: endpoints
        resolution: nodes per axis
        box: (lo, hi); defaults to the wells and endpoints inflated by 50%
    """
    if potential.dimension != 2:
        raise ConfigurationError("The lattice oracle is planar (m = 2)")
    p = np.asarray(xi1, dtype=float)
    q = np.asarray(xi2, dtype=float)
    if box is None:
        lo, hi = inflated_box(np.vstack([potential.zeros, p, q]), inflation=0.5)
    else:
        lo, hi = np.asarray(box[0], dtype=float), np.asarray(box[1], dtype=float)
    xs = np.linspace(lo[0], hi[0], resolution)
    ys = np.linspace(lo[1], hi[1], resolution)
    hx = xs[1] - xs[0]
    hy = ys[1] - ys[0]
    n = resolution
    I, Jy = np.meshgrid(np.arange(n), np.arange(n), indexing='ij')

    rows, cols, weights = [], [], []
    for di, dj in _STENCIL:
        valid = (I + di >= 0) & (I + di < n) & (Jy + dj >= 0) & (Jy + dj < n)
        i0, j0 = I[valid], Jy[valid]
        i1, j1 = i0 + di, j0 + dj
        mid = np.stack([xs[0] + 0.5 * (i0 + i1) * hx, ys[0] + 0.5 * (j0 + j1) * hy], axis=1)
        length = np.hypot(di * hx, dj * hy)
        w = np.maximum(_sqrt_2F(potential, mid) * length, 1e-300)
        rows.append(i0 * n + j0)
        cols.append(i1 * n + j1)
        weights.append(w)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    weights = np.concatenate(weights)
    graph = sparse.coo_matrix((weights, (rows, cols)), shape=(n * n, n * n)).tocsr()

    def snap(point):
        i = int(np.clip(np.rint((point[0] - lo[0]) / hx), 0, n - 1))
        j = int(np.clip(np.rint((point[1] - lo[1]) / hy), 0, n - 1))
        return i * n + j

    source, target = snap(p), snap(q)
    dist = dijkstra(graph, directed=False, indices=source)
    return float(dist[target])


if __name__ == "__main__":
    from src.potential import quartic_potential, product_wells_potential

    quartic = quartic_potential()
    print("quartic phi(-1, 1) =", phi(quartic, -1.0, 1.0), "expected", 2.0 * np.sqrt(2.0) / 3.0)
    wells = product_wells_potential([[-1.0, 0.0], [1.0, 0.0], [0.0, 1.5]])
    table = build_metric_table(wells)
    print(table.values)
    print("lattice phi(z1, z2) =", lattice_phi(wells, wells.zeros[0], wells.zeros[1]))
