"""
Transition-layer initial data: step functions, heteroclinic layer profiles along optimal paths,
the ball and midpoint constructions of u0 and small initial velocities u1.
"""
from dataclasses import dataclass, field
from typing import Dict, Any, List, Sequence
import logging
import math

import numpy as np
from scipy import integrate, stats

from src.exceptions import ConfigurationError, ProfileSolveError, LayerConsistencyError, InsufficientDataError
from src.potential import PotentialSpec, spectral_bounds
from src.geodesic import PathPolyline, MetricTable
from src.solver import Grid1D, energy_P, l1_distance

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

TOL_TAIL = 1e-12
TOL_ENERGY = 1e-8
NOISE_MODES = 16
DEFAULT_SEED = 42
CONSTRUCTIONS = ('balls', 'midpoint')
CENTERINGS = ('midpoint', 'origin')
VELOCITY_KINDS = ('zero', 'scaled_noise')
# a layered profile carries at most this fraction of P0 on top of P0
LAYER_EXCESS_FRACTION = 0.1


@dataclass
class StepFunction:
    """
    Piecewise-constant v on [a, b] with jumps gamma_1 < ... < gamma_N.

    values holds N + 1 indices into the potential's zero list, one per plateau.
    """
    a: float
    b: float
    jumps: np.ndarray
    values: List[int]
    r: float

    def __post_init__(self):
        self.jumps = np.asarray(self.jumps, dtype=float).reshape(-1)
        self.values = [int(k) for k in self.values]
        N = len(self.jumps)
        if len(self.values) != N + 1:
            raise ConfigurationError(f"{N} jumps need {N + 1} plateau values, got {len(self.values)}")
        if not self.r > 0.0:
            raise ConfigurationError(f"Separation radius must be positive, got {self.r}")
        if N and not (self.a < self.jumps[0] and self.jumps[-1] < self.b):
            raise ConfigurationError("Jumps must lie strictly inside (a, b)")
        if np.any(np.diff(self.jumps) <= 0.0):
            raise ConfigurationError("Jumps must be strictly increasing")
        if N and (self.jumps[0] - self.r < self.a - 1e-12 or self.jumps[-1] + self.r > self.b + 1e-12):
            raise ConfigurationError(f"Balls of radius {self.r} around the jumps leave [{self.a}, {self.b}]")
        if np.any(np.diff(self.jumps) <= 2.0 * self.r):
            raise ConfigurationError(f"Balls of radius {self.r} around the jumps overlap")
        for left, right in zip(self.values[:-1], self.values[1:]):
            if left == right:
                raise ConfigurationError(f"Adjacent plateaus share the value index {left}")

    @property
    def jump_count(self) -> int:
        return len(self.jumps)

    @classmethod
    def parse(cls, text: str, a: float = 0.0, b: float = 1.0, r: float = 0.1,
              constant: int = 0) -> 'StepFunction':
        """
        Parse "0.3:0>1,0.7:1>0" (position:left>right per jump).

        An empty string gives the constant step function at index constant.
        """
        tokens = [t.strip() for t in text.split(',') if t.strip()]
        if not tokens:
            return cls(a, b, np.array([]), [constant], r)
        jumps, values = [], []
        for token in tokens:
            try:
                position, pair = token.split(':')
                left, right = (int(s) for s in pair.split('>'))
                jumps.append(float(position))
            except ValueError as e:
                raise ConfigurationError(f"Cannot parse jump '{token}': {e}")
            if values and values[-1] != left:
                raise ConfigurationError(f"Jump '{token}' does not start from plateau {values[-1]}")
            if not values:
                values.append(left)
            values.append(right)
        return cls(a, b, np.array(jumps), values, r)

    def format(self) -> str:
        return ','.join(f"{g:g}:{self.values[i]}>{self.values[i + 1]}" for i, g in enumerate(self.jumps))

    def plateau_index(self, x) -> np.ndarray:
        """Plateau number for each x (a point on a jump belongs to the right plateau)"""
        return np.searchsorted(self.jumps, np.asarray(x, dtype=float), side='right')

    def evaluate(self, x, zeros: np.ndarray) -> np.ndarray:
        """v(x) as points of R^m, shape (len(x), m)"""
        idx = np.asarray(self.values)[self.plateau_index(x)]
        return np.asarray(zeros, dtype=float)[idx]

    def check_values(self, potential: PotentialSpec):
        for k in self.values:
            if not 0 <= k < potential.well_count:
                raise ConfigurationError(f"Plateau value index {k} is not one of the {potential.well_count} zeros")


@dataclass
class ProfileCurve:
    """
    Layer profile w on the path parameter interval [0, 1], w' = sqrt(2F(psi(w))) / sigma.

    The solution is kept as dense output forward and backward from x = 0 and is clamped to the
    endpoint past the terminal events.
    """
    path: PathPolyline
    w0: float
    forward: Any
    backward: Any
    x_forward_end: float
    x_backward_end: float
    clamped: bool = False
    samples_x: np.ndarray = field(default_factory=lambda: np.array([]))
    samples_w: np.ndarray = field(default_factory=lambda: np.array([]))

    @property
    def limits(self):
        return 0.0, 1.0

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.samples_w) >= 0.0))

    def parameter(self, x) -> np.ndarray:
        """w(x), vectorized"""
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape)
        pos = x >= 0.0
        xf = np.minimum(x[pos], self.x_forward_end)
        xb = np.maximum(x[~pos], self.x_backward_end)
        out[pos] = self.forward(xf)[0] if xf.size else xf
        out[~pos] = self.backward(xb)[0] if xb.size else xb
        out[x > self.x_forward_end] = 1.0
        out[x < self.x_backward_end] = 0.0
        return np.clip(out, 0.0, 1.0)

    def evaluate(self, x) -> np.ndarray:
        """psi(w(x)) in R^m"""
        return self.path.point_at(self.parameter(x))


def solve_profile_ode(potential: PotentialSpec, path: PathPolyline, centering: str = 'midpoint',
                      tol_tail: float = TOL_TAIL) -> ProfileCurve:
    """
    Integrate the layer profile ODE forward and backward from its centre.

    Args:
        potential: the potential F
        path: constant-speed well-to-well path
        centering: midpoint (w(0) = 1/2) or origin (scalar only: psi(w(0)) = 0)
        tol_tail: stop once w is this close to an endpoint

    Returns:
        ProfileCurve

    Raises:
        ProfileSolveError: an endpoint is not reached within the parameter window
    """
    if centering not in CENTERINGS:
        raise ConfigurationError(f"Unknown centering {centering} (expected one of {CENTERINGS})")
    sigma = path.sigma
    if sigma <= 0.0:
        raise ProfileSolveError("Degenerate path of zero length")
    if centering == 'origin':
        start, end = float(path.start[0]), float(path.end[0])
        if path.dimension != 1 or not min(start, end) < 0.0 < max(start, end):
            raise ConfigurationError("Origin centering needs a scalar path through 0")
        w0 = (0.0 - start) / (end - start)
    else:
        w0 = 0.5

    clamped = {'flag': False}

    def rhs(_, w):
        s = w[0]
        if s <= 0.0 or s >= 1.0:
            return [0.0]
        F = float(potential.F(path.point_at(s)))
        if F < 0.0:
            clamped['flag'] = True
            F = 0.0
        return [math.sqrt(2.0 * F) / sigma]

    def hit_upper(_, w):
        return w[0] - (1.0 - tol_tail)

    def hit_lower(_, w):
        return w[0] - tol_tail

    hit_upper.terminal = True
    hit_lower.terminal = True

    bounds = spectral_bounds(potential)
    window = 2.0 * (math.log(1.0 / tol_tail) + 10.0) / math.sqrt(bounds.lam)
    opts = dict(method='DOP853', rtol=1e-12, atol=1e-14, dense_output=True)
    forward = integrate.solve_ivp(rhs, (0.0, window), [w0], events=hit_upper, **opts)
    backward = integrate.solve_ivp(rhs, (0.0, -window), [w0], events=hit_lower, **opts)
    if forward.status != 1 or backward.status != 1:
        raise ProfileSolveError(
            f"Profile did not approach the path endpoints within |x| <= {window:.3g} "
            f"(forward status {forward.status}, backward status {backward.status})")
    if clamped['flag']:
        logger.warning("Negative F met along the path; square-root argument clamped")

    samples_x = np.concatenate([backward.t[::-1], forward.t[1:]])
    samples_w = np.concatenate([backward.y[0][::-1], forward.y[0][1:]])
    curve = ProfileCurve(path=path, w0=w0, forward=forward.sol, backward=backward.sol,
                         x_forward_end=float(forward.t[-1]), x_backward_end=float(backward.t[-1]),
                         clamped=clamped['flag'], samples_x=samples_x, samples_w=samples_w)
    if not curve.monotone:
        logger.warning("Profile samples are not monotone")
    return curve


def profiles_for(v: StepFunction, potential: PotentialSpec, table: MetricTable,
                 centering: str = 'midpoint') -> List[ProfileCurve]:
    """One profile per jump of v, along the stored optimal paths"""
    v.check_values(potential)
    return [solve_profile_ode(potential, table.path(v.values[i], v.values[i + 1]), centering)
            for i in range(v.jump_count)]


def build_initial_datum(v: StepFunction, eps: float, profiles: Sequence[ProfileCurve], grid: Grid1D,
                        zeros: np.ndarray, construction: str = 'balls') -> np.ndarray:
    """
    Sample u0^eps at the cell centres.

    balls: v outside the balls B(gamma_i, r); inside, the scaled profile on
        [gamma_i - r + eps, gamma_i + r - eps] joined to the plateaus by linear segments of width eps.
    midpoint: the profile of jump i on [gamma_{i-1/2}, gamma_{i+1/2}], the cut points being the
        midpoints between jumps and the interval ends.

    Raises:
        ConfigurationError: eps >= r, dx > eps / 10 or a profile count mismatch
    """
    if construction not in CONSTRUCTIONS:
        raise ConfigurationError(f"Unknown construction {construction} (expected one of {CONSTRUCTIONS})")
    if not eps < v.r:
        raise ConfigurationError(f"eps={eps} must be smaller than the separation radius r={v.r}")
    if grid.dx > eps / 10.0 * (1.0 + 1e-9):
        raise ConfigurationError(f"Grid spacing {grid.dx:.3e} does not resolve eps={eps} (need dx <= eps/10)")
    if len(profiles) != v.jump_count:
        raise ConfigurationError(f"{v.jump_count} jumps but {len(profiles)} profiles")

    x = grid.x
    zeros = np.asarray(zeros, dtype=float)
    u = v.evaluate(x, zeros)

    if construction == 'midpoint':
        cuts = np.concatenate([[v.a], 0.5 * (v.jumps[1:] + v.jumps[:-1]), [v.b]]) if v.jump_count else []
        for i, (gamma, profile) in enumerate(zip(v.jumps, profiles)):
            inside = (x >= cuts[i]) & (x <= cuts[i + 1])
            u[inside] = profile.evaluate((x[inside] - gamma) / eps)
        return u

    r = v.r
    for i, (gamma, profile) in enumerate(zip(v.jumps, profiles)):
        left = zeros[v.values[i]]
        right = zeros[v.values[i + 1]]
        core = (x >= gamma - r + eps) & (x <= gamma + r - eps)
        u[core] = profile.evaluate((x[core] - gamma) / eps)

        edge_left = profile.evaluate(np.array([(-r + eps) / eps]))[0]
        edge_right = profile.evaluate(np.array([(r - eps) / eps]))[0]
        lo = (x >= gamma - r) & (x < gamma - r + eps)
        theta = (x[lo] - (gamma - r)) / eps
        u[lo] = left + theta[:, None] * (edge_left - left)
        hi = (x > gamma + r - eps) & (x < gamma + r)
        theta = (x[hi] - (gamma + r - eps)) / eps
        u[hi] = edge_right + theta[:, None] * (right - edge_right)
    return u


def rescale_velocity(u1: np.ndarray, target: float, tau: float, dx: float) -> np.ndarray:
    """Scale u1 so that tau sum |u1|^2 dx equals target"""
    norm = tau * float(np.sum(u1 * u1)) * dx
    if norm == 0.0:
        return u1
    return u1 * math.sqrt(target / norm)


def build_initial_velocity(kind: str, eps: float, tau: float, A_target: float, C_target: float,
                           grid: Grid1D, dimension: int, seed: int = DEFAULT_SEED) -> np.ndarray:
    """
    Initial velocity u1 with tau ||u1||^2 = C eps exp(-A / eps) (scaled_noise) or zero.

    The noise is a fixed-seed sum of Neumann cosine modes with 1/k^2 decay, so the same seed gives
    the same continuum field on every grid.
    """
    if kind not in VELOCITY_KINDS:
        raise ConfigurationError(f"Unknown velocity kind {kind} (expected one of {VELOCITY_KINDS})")
    if kind == 'zero':
        return np.zeros((grid.n, dimension))
    if not (A_target > 0.0 and C_target > 0.0):
        raise ConfigurationError("A_target and C_target must be positive")
    rng = np.random.default_rng(seed)
    k = np.arange(1, NOISE_MODES + 1)
    coefficients = rng.standard_normal((NOISE_MODES, dimension)) / (k * k)[:, None]
    modes = np.cos(np.pi * np.outer((grid.x - grid.a) / (grid.b - grid.a), k))
    u1 = modes @ coefficients
    target = C_target * eps * math.exp(-A_target / eps)
    return rescale_velocity(u1, target, tau, grid.dx)


@dataclass
class StructureReport:
    eps: float
    l1_distance: float
    energy: float
    P0: float
    excess: float
    is_transition_layer: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            'eps': self.eps,
            'l1_distance': self.l1_distance,
            'energy': self.energy,
            'P0': self.P0,
            'excess': self.excess,
            'is_transition_layer': self.is_transition_layer,
        }


def verify_transition_layer_structure(u0: np.ndarray, v: StepFunction, eps: float, P0: float,
                                      potential: PotentialSpec, grid: Grid1D,
                                      tol_energy: float = TOL_ENERGY,
                                      quadrature_slack: float = 0.0) -> StructureReport:
    """
    L1 distance to v and energy excess P_eps[u0] - P0[v].

    Raises:
        LayerConsistencyError: excess below -(tol_energy + quadrature_slack)
    """
    energy = energy_P(u0, eps, potential, grid)
    excess = energy - P0
    if excess < -(tol_energy + quadrature_slack):
        logger.error(f"Energy {energy:.10g} below P0 {P0:.10g} at eps={eps}")
        raise LayerConsistencyError(f"P_eps[u0] - P0 = {excess:.3e} is negative at eps={eps}")
    l1 = l1_distance(u0, v.evaluate(grid.x, potential.zeros), grid)
    layered = excess <= LAYER_EXCESS_FRACTION * P0 + tol_energy + quadrature_slack
    if not layered:
        logger.warning(f"Profile at eps={eps} carries excess {excess:.4g} over P0={P0:.4g}: not a transition layer")
    return StructureReport(eps=eps, l1_distance=l1, energy=energy, P0=P0, excess=excess,
                           is_transition_layer=bool(layered))


@dataclass
class ExcessFit:
    slope: float
    intercept: float
    r_squared: float
    n_used: int

    @property
    def decay_rate(self) -> float:
        """Estimate of A in excess ~ C exp(-A / eps)"""
        return -self.slope


def fit_excess_sweep(reports: Sequence[StructureReport]) -> ExcessFit:
    """Least squares of log(excess) against 1/eps over the positive excesses"""
    usable = [rep for rep in reports if rep.excess > 0.0]
    if len(usable) < 2:
        raise InsufficientDataError(f"Need two positive excesses, got {len(usable)}")
    inv_eps = np.array([1.0 / rep.eps for rep in usable])
    log_excess = np.log([rep.excess for rep in usable])
    fit = stats.linregress(inv_eps, log_excess)
    return ExcessFit(slope=float(fit.slope), intercept=float(fit.intercept),
                     r_squared=float(fit.rvalue ** 2), n_used=len(usable))


if __name__ == "__main__":
    from src.potential import quartic_potential
    from src.geodesic import build_metric_table, asymptotic_energy_P0

    quartic = quartic_potential()
    table = build_metric_table(quartic)
    v = StepFunction.parse("0.3:0>1,0.7:1>0", r=0.12)
    profiles = profiles_for(v, quartic, table)
    P0 = asymptotic_energy_P0(quartic, v, table)
    for eps in (0.1, 0.05, 0.025):
        grid = Grid1D.from_eps(0.0, 1.0, eps, 0.02)
        u0 = build_initial_datum(v, eps, profiles, grid, quartic.zeros)
        print(verify_transition_layer_structure(u0, v, eps, P0, quartic, grid).to_dict())
