"""
Time integration of tau u_tt + G(u) u_t = eps^2 u_xx + f(u) with homogeneous Neumann conditions.
Cell-centred finite differences with mirror ghosts, discrete energies and the dissipation ledger.
"""
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Any, List, Optional, Sequence, Tuple
import logging
import math
import time

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.sparse.linalg import splu

from src.exceptions import ConfigurationError, BlowUpError, SolverConvergenceError
from src.potential import PotentialSpec
from src.damping import DampingSpec

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

SCHEMES = ('discrete_gradient', 'verlet')
DEFAULT_CFL = 0.5
DEFAULT_DX_OVER_EPS = 0.05
TOL_NEWTON = 1e-10
MAX_NEWTON = 50
REFACTOR_EVERY = 10
TOL_MONO = 1e-10

Callback = Callable[[Dict[str, Any], 'State'], bool]


@dataclass(frozen=True)
class Grid1D:
    """Uniform cell-centred grid on [a, b]"""
    a: float
    b: float
    n: int

    def __post_init__(self):
        if self.n < 16:
            raise ConfigurationError(f"Grid needs at least 16 cells, got {self.n}")
        if not self.b > self.a:
            raise ConfigurationError(f"Empty interval [{self.a}, {self.b}]")

    @classmethod
    def from_eps(cls, a: float, b: float, eps: float, dx_over_eps: float = DEFAULT_DX_OVER_EPS) -> 'Grid1D':
        n = max(16, int(math.ceil((b - a) / (dx_over_eps * eps) - 1e-9)))
        return cls(a, b, n)

    @property
    def dx(self) -> float:
        return (self.b - self.a) / self.n

    @property
    def x(self) -> np.ndarray:
        return self.a + (np.arange(self.n) + 0.5) * self.dx

    @property
    def faces(self) -> np.ndarray:
        """Interior faces x_{i+1/2}, i = 0..n-2"""
        return self.a + np.arange(1, self.n) * self.dx

    def cell_index(self, c: float) -> int:
        """Index of the cell boundary at c; raises when c is not a cell boundary"""
        k = (c - self.a) / self.dx
        i = int(round(k))
        if abs(k - i) > 1e-9 or not 0 <= i <= self.n:
            raise ConfigurationError(f"{c} is not aligned to a cell boundary of the grid")
        return i


@dataclass
class State:
    t: float
    u: np.ndarray
    w: np.ndarray
    eps: float
    tau: float

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        if self.u.ndim == 1:
            self.u = self.u[:, None]
        if self.w.ndim == 1:
            self.w = self.w[:, None]
        if self.u.shape != self.w.shape:
            raise ConfigurationError(f"u and u_t shapes differ: {self.u.shape} vs {self.w.shape}")
        if not (self.eps > 0.0 and self.tau > 0.0):
            raise ConfigurationError(f"eps and tau must be positive (eps={self.eps}, tau={self.tau})")

    @property
    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.w)))


@dataclass
class Snapshot:
    t: float
    u: np.ndarray
    w: np.ndarray


# ---------------------------------------------------------------------------
# discrete operators and energies

def _as_field(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return u[:, None] if u.ndim == 1 else u


def laplacian_neumann(u, dx: float) -> np.ndarray:
    """Second differences with mirror ghosts u_{-1} = u_0, u_n = u_{n-1}"""
    field_ = _as_field(u)
    padded = np.pad(field_, ((1, 1), (0, 0)), mode='edge')
    out = (padded[:-2] - 2.0 * field_ + padded[2:]) / (dx * dx)
    return out if np.ndim(u) > 1 else out[:, 0]


def neumann_matrix(n: int, dx: float) -> sparse.csr_matrix:
    main = np.full(n, -2.0)
    main[0] = main[-1] = -1.0
    off = np.ones(n - 1)
    return sparse.diags([off, main, off], [-1, 0, 1], format='csr') / (dx * dx)


def forward_difference(u, dx: float) -> np.ndarray:
    """D+u on the interior faces, shape (n-1, m)"""
    return np.diff(_as_field(u), axis=0) / dx


def _cell_range(grid: Grid1D, subinterval: Optional[Tuple[float, float]]) -> Tuple[int, int]:
    if subinterval is None:
        return 0, grid.n
    i0 = grid.cell_index(subinterval[0])
    i1 = grid.cell_index(subinterval[1])
    if i1 <= i0:
        raise ConfigurationError(f"Empty subinterval {subinterval}")
    return i0, i1


def energy_P(u, eps: float, potential: PotentialSpec, grid: Grid1D,
             subinterval: Optional[Tuple[float, float]] = None) -> float:
    """
    Discrete P_eps = sum (eps/2)|D+u|^2 dx over faces + sum F(u)/eps dx over cells.

    Face i+1/2 belongs to cell i, so sums over adjacent aligned subintervals add up exactly.
    """
    field_ = _as_field(u)
    i0, i1 = _cell_range(grid, subinterval)
    dx = grid.dx
    grad = forward_difference(field_, dx)
    faces = grad[i0:min(i1, grid.n - 1)]
    gradient_term = 0.5 * eps * float(np.sum(faces * faces)) * dx
    potential_term = float(np.sum(potential.F(field_[i0:i1]))) * dx / eps
    return gradient_term + potential_term


def kinetic_energy(state: State, grid: Grid1D) -> float:
    return 0.5 * state.tau / state.eps * float(np.sum(state.w * state.w)) * grid.dx


def energy_E(state: State, potential: PotentialSpec, grid: Grid1D) -> float:
    return kinetic_energy(state, grid) + energy_P(state.u, state.eps, potential, grid)


def young_bound(u, eps: float, potential: PotentialSpec, grid: Grid1D) -> Tuple[float, int]:
    """
    sqrt(2) sum sqrt(F(u_i)) |D+u_{i+1/2}| dx and the number of faces where the pointwise square
    (eps/2) q^2 + F/eps - sqrt(2F) q comes out negative.
    """
    field_ = _as_field(u)
    q = np.linalg.norm(forward_difference(field_, grid.dx), axis=1)
    F = np.maximum(potential.F(field_[:-1]), 0.0)
    root = np.sqrt(2.0 * F)
    bound = float(np.sum(root * q)) * grid.dx
    a = 0.5 * eps * q * q
    b = F / eps
    gap = a + b - root * q
    violations = int(np.sum(gap < -1e-12 * (a + b)))
    return bound, violations


def l1_distance(u, v, grid: Grid1D) -> float:
    diff = _as_field(u) - _as_field(v)
    return float(np.sum(np.linalg.norm(diff, axis=1))) * grid.dx


# ---------------------------------------------------------------------------
# ledger

LEDGER_COLUMNS = ['t', 'E', 'P', 'kinetic', 'D_cum', 'l1_dist_to_v', 'ut_l1_cum', 'ut_l2sq_cum',
                  'young', 'young_violations', 'min_damping_eig']


@dataclass
class EnergyLedger:
    """Rows of energies and cumulative integrals; extra columns come from run callbacks"""
    rows: List[Dict[str, Any]] = field(default_factory=list)

    def append(self, row: Dict[str, Any]):
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([row.get(name, np.nan) for row in self.rows], dtype=float)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.rows)
        ordered = [c for c in LEDGER_COLUMNS if c in frame.columns]
        return frame[ordered + [c for c in frame.columns if c not in ordered]]

    def is_monotone(self, tol: float = TOL_MONO) -> bool:
        E = self.column('E')
        return bool(np.all(np.diff(E) <= tol * (1.0 + np.abs(E[:-1]))))


def dissipation_residual(ledger: EnergyLedger, t0: float, t1: float) -> float:
    """|D(t1) - D(t0) - (E(t0) - E(t1))|, values interpolated between ledger rows"""
    t = ledger.column('t')
    D = ledger.column('D_cum')
    E = ledger.column('E')
    D0, D1 = np.interp([t0, t1], t, D)
    E0, E1 = np.interp([t0, t1], t, E)
    return float(abs((D1 - D0) - (E0 - E1)))


# ---------------------------------------------------------------------------
# solver

@dataclass
class TrajectorySummary:
    ledger: EnergyLedger
    snapshots: List[Snapshot]
    final_state: State
    steps: int
    stop_reason: str
    monotone_violations: int = 0
    max_energy_increase: float = 0.0
    newton_iterations: int = 0

    @property
    def censored(self) -> bool:
        return self.stop_reason == 'wall_budget'

    def snapshot_frame(self, grid: Grid1D) -> pd.DataFrame:
        """Long-format snapshots: t, x, u_1..u_m, ut_1..ut_m"""
        frames = []
        for snap in self.snapshots:
            cols = {'t': np.full(grid.n, snap.t), 'x': grid.x}
            for k in range(snap.u.shape[1]):
                cols[f'u_{k + 1}'] = snap.u[:, k]
            for k in range(snap.w.shape[1]):
                cols[f'ut_{k + 1}'] = snap.w[:, k]
            frames.append(pd.DataFrame(cols))
        return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()


class HyperbolicAllenCahnSolver:
    """
    Integrator for the damped hyperbolic Allen-Cahn system on a Grid1D.

    Schemes:
        discrete_gradient: implicit midpoint in time with a discrete gradient of F; the discrete
            energy drops by exactly (dt/eps) sum G(u_mid) w_mid . w_mid dx each step.
        verlet: Stormer-Verlet kicks with Crank-Nicolson damping per cell.
    """

    def __init__(self, potential: PotentialSpec, damping: DampingSpec, grid: Grid1D,
                 scheme: str = 'discrete_gradient', cfl: float = DEFAULT_CFL,
                 reference: Optional[np.ndarray] = None, alpha: Optional[float] = None):
        """
        Args:
            potential: the potential F
            damping: the damping field G
            grid: spatial grid
            scheme: discrete_gradient or verlet
            cfl: Courant number for dt <= cfl dx sqrt(tau) / eps
            reference: step function v sampled on the grid for the L1 ledger
            alpha: certified positivity constant of G, used by the eigenvalue monitor
        """
        if scheme not in SCHEMES:
            raise ConfigurationError(f"Unknown scheme {scheme} (expected one of {SCHEMES})")
        if potential.dimension != damping.dimension:
            raise ConfigurationError("Potential and damping dimensions differ")
        self.potential = potential
        self.damping = damping
        self.grid = grid
        self.scheme = scheme
        self.cfl = cfl
        self.reference = None if reference is None else _as_field(reference)
        self.alpha = alpha
        self._L1 = neumann_matrix(grid.n, grid.dx)
        self._eig_warned = False
        self._newton_total = 0
        logger.info(f"HyperbolicAllenCahnSolver initialized: n={grid.n}, dx={grid.dx:.3e}, scheme={scheme}")

    # -- stepping ----------------------------------------------------------

    def max_dt(self, eps: float, tau: float) -> float:
        return self.cfl * self.grid.dx * math.sqrt(tau) / eps

    def step(self, state: State, dt: float) -> State:
        """
        Advance one step.

        Raises:
            ConfigurationError: dt violates the CFL bound
            BlowUpError: the new state is not finite (carries the previous state)
        """
        limit = self.max_dt(state.eps, state.tau)
        if dt <= 0.0 or dt > limit * (1.0 + 1e-12):
            raise ConfigurationError(f"dt={dt:.3e} violates the CFL bound {limit:.3e}")
        if self.scheme == 'discrete_gradient':
            u1, w1 = self._step_discrete_gradient(state, dt)
        else:
            u1, w1 = self._step_verlet(state, dt)
        new_state = replace(state, t=state.t + dt, u=u1, w=w1)
        if not new_state.is_finite:
            logger.error(f"Non-finite state after step at t={state.t:.6g}")
            raise BlowUpError(f"Blow-up at t={state.t + dt:.6g}", last_state=state)
        return new_state

    def _apply_G(self, U: np.ndarray, W: np.ndarray) -> np.ndarray:
        return np.einsum('nij,nj->ni', self.damping.G(U), W)

    def _step_discrete_gradient(self, state: State, dt: float) -> Tuple[np.ndarray, np.ndarray]:
        u0, w0 = state.u, state.w
        n, m = u0.shape
        eps2 = state.eps ** 2
        tau = state.tau
        dx = self.grid.dx

        def residual(delta):
            ubar = u0 + 0.5 * delta
            return (tau * (2.0 * delta / dt - 2.0 * w0) / dt
                    - eps2 * laplacian_neumann(ubar, dx)
                    + self.potential.dgrad(u0, u0 + delta)
                    + self._apply_G(ubar, delta / dt))

        stiffness = sparse.kron(self._L1, sparse.identity(m), format='csr')

        def factor(delta):
            ubar = u0 + 0.5 * delta
            blocks = (0.5 * self.potential.hess(ubar) + self.damping.G(ubar) / dt
                      + (2.0 * tau / dt ** 2) * np.eye(m))
            B = sparse.bsr_matrix((blocks, np.arange(n), np.arange(n + 1)), shape=(n * m, n * m))
            return splu((B - 0.5 * eps2 * stiffness).tocsc())

        scale = 1.0 + float(np.max(np.abs(eps2 * laplacian_neumann(u0, dx)))) \
            + float(np.max(np.abs(self.potential.grad(u0)))) + tau * float(np.max(np.abs(w0))) / dt
        delta = dt * w0
        lu = factor(delta)
        for it in range(1, MAX_NEWTON + 1):
            R = residual(delta)
            if not np.all(np.isfinite(R)):
                break
            if np.max(np.abs(R)) <= TOL_NEWTON * scale:
                self._newton_total += it
                return u0 + delta, 2.0 * delta / dt - w0
            if it % REFACTOR_EVERY == 0:
                lu = factor(delta)
            delta = delta - lu.solve(R.ravel()).reshape(n, m)
        logger.error(f"Implicit step did not converge at t={state.t:.6g} with dt={dt:.3e}")
        raise SolverConvergenceError(f"Newton iteration failed at t={state.t:.6g}")

    def _kick(self, u: np.ndarray, w: np.ndarray, h: float, eps: float, tau: float) -> np.ndarray:
        m = u.shape[1]
        G = self.damping.G(u)
        force = eps ** 2 * laplacian_neumann(u, self.grid.dx) - self.potential.grad(u)
        lhs = (tau / h) * np.eye(m) + 0.5 * G
        rhs = (tau / h) * w - 0.5 * np.einsum('nij,nj->ni', G, w) + force
        return np.linalg.solve(lhs, rhs[..., None])[..., 0]

    def _step_verlet(self, state: State, dt: float) -> Tuple[np.ndarray, np.ndarray]:
        h = 0.5 * dt
        w_half = self._kick(state.u, state.w, h, state.eps, state.tau)
        u1 = state.u + dt * w_half
        w1 = self._kick(u1, w_half, h, state.eps, state.tau)
        return u1, w1

    # -- ledger ------------------------------------------------------------

    def _damping_power(self, state: State) -> float:
        """sum G(u) w . w dx"""
        return float(np.sum(self._apply_G(state.u, state.w) * state.w)) * self.grid.dx

    def ledger_row(self, state: State, D_cum: float, ut_l1_cum: float, ut_l2sq_cum: float) -> Dict[str, Any]:
        P = energy_P(state.u, state.eps, self.potential, self.grid)
        kinetic = kinetic_energy(state, self.grid)
        young, violations = young_bound(state.u, state.eps, self.potential, self.grid)
        min_eig = float(np.min(self.damping.smallest_eigenvalue(state.u)))
        if self.alpha is not None and min_eig < self.alpha and not self._eig_warned:
            logger.warning(f"Damping eigenvalue {min_eig:.4g} below certificate {self.alpha:.4g} at t={state.t:.6g}")
            self._eig_warned = True
        return {
            't': state.t,
            'E': kinetic + P,
            'P': P,
            'kinetic': kinetic,
            'D_cum': D_cum,
            'l1_dist_to_v': l1_distance(state.u, self.reference, self.grid) if self.reference is not None else np.nan,
            'ut_l1_cum': ut_l1_cum,
            'ut_l2sq_cum': ut_l2sq_cum,
            'young': young,
            'young_violations': violations,
            'min_damping_eig': min_eig,
        }

    # -- driver ------------------------------------------------------------

    def run(self, initial: State, dt: float, t_end: float,
            callbacks: Sequence[Callback] = (),
            snapshot_stride: Optional[int] = None,
            ledger_stride: int = 1,
            max_wall_seconds: Optional[float] = None) -> TrajectorySummary:
        """
        Advance from the initial state to t_end.

        Args:
            initial: state at t = initial.t
            dt: time step (the last step is shortened to land on t_end)
            t_end: absolute final time
            callbacks: called as callback(row, state) on every recorded row; may add columns to
                the row and return True to stop the run
            snapshot_stride: steps between snapshots, default max(1, floor(t_end / (200 dt)))
            ledger_stride: steps between ledger rows
            max_wall_seconds: wall-clock budget; exceeding it stops the run as censored

        Returns:
            TrajectorySummary with the ledger, snapshots and final state

        Raises:
            BlowUpError: a step went non-finite; e.summary holds the run up to the last good state
        """
        if not initial.is_finite:
            raise ConfigurationError("Initial state is not finite")
        if snapshot_stride is None:
            snapshot_stride = max(1, int(math.floor((t_end - initial.t) / (200.0 * dt))))
        started = time.monotonic()
        ledger = EnergyLedger()
        snapshots = [Snapshot(initial.t, initial.u.copy(), initial.w.copy())]
        self._newton_total = 0

        state = initial
        D_cum = ut_l1_cum = ut_l2sq_cum = 0.0
        power = self._damping_power(state)
        w_l1 = float(np.sum(np.linalg.norm(state.w, axis=1))) * self.grid.dx
        w_l2 = float(np.sum(state.w * state.w)) * self.grid.dx
        E_prev = energy_E(state, self.potential, self.grid)
        violations = 0
        max_increase = 0.0

        def record(current) -> bool:
            row = self.ledger_row(current, D_cum, ut_l1_cum, ut_l2sq_cum)
            stop = False
            for callback in callbacks:
                stop = bool(callback(row, current)) or stop
            ledger.append(row)
            return stop

        if record(state):
            return TrajectorySummary(ledger, snapshots, state, 0, 'callback')

        steps = 0
        stop_reason = 't_end'
        t_final = t_end
        while state.t < t_final - 1e-12 * max(1.0, abs(t_final)):
            h = min(dt, t_final - state.t)
            try:
                state_next = self.step(state, h)
            except BlowUpError as e:
                if ledger.rows[-1]['t'] != state.t:
                    record(state)
                if snapshots[-1].t != state.t:
                    snapshots.append(Snapshot(state.t, state.u.copy(), state.w.copy()))
                e.summary = TrajectorySummary(ledger, snapshots, state, steps, 'blowup',
                                              monotone_violations=violations, max_energy_increase=max_increase,
                                              newton_iterations=self._newton_total)
                raise
            steps += 1

            power_next = self._damping_power(state_next)
            w_l1_next = float(np.sum(np.linalg.norm(state_next.w, axis=1))) * self.grid.dx
            w_l2_next = float(np.sum(state_next.w * state_next.w)) * self.grid.dx
            D_cum += 0.5 * h / state.eps * (power + power_next)
            ut_l1_cum += 0.5 * h * (w_l1 + w_l1_next)
            ut_l2sq_cum += 0.5 * h * (w_l2 + w_l2_next)
            power, w_l1, w_l2 = power_next, w_l1_next, w_l2_next

            E_next = energy_E(state_next, self.potential, self.grid)
            increase = E_next - E_prev
            if increase > TOL_MONO * (1.0 + abs(E_prev)):
                violations += 1
                max_increase = max(max_increase, increase)
            E_prev = E_next
            state = state_next

            if steps % snapshot_stride == 0:
                snapshots.append(Snapshot(state.t, state.u.copy(), state.w.copy()))
            last = state.t >= t_final - 1e-12 * max(1.0, abs(t_final))
            if steps % ledger_stride == 0 or last:
                if record(state):
                    stop_reason = 'callback'
                    break
            if max_wall_seconds is not None and time.monotonic() - started > max_wall_seconds:
                logger.warning(f"Wall budget of {max_wall_seconds}s exhausted at t={state.t:.6g}")
                if ledger.rows[-1]['t'] != state.t:
                    record(state)
                stop_reason = 'wall_budget'
                break

        if snapshots[-1].t != state.t:
            snapshots.append(Snapshot(state.t, state.u.copy(), state.w.copy()))
        if violations:
            logger.warning(f"Energy increased on {violations} steps (max {max_increase:.3e})")
        logger.info(f"Run finished at t={state.t:.6g} after {steps} steps ({stop_reason})")
        return TrajectorySummary(ledger, snapshots, state, steps, stop_reason,
                                 monotone_violations=violations, max_energy_increase=max_increase,
                                 newton_iterations=self._newton_total)


if __name__ == "__main__":
    from src.potential import quartic_potential
    from src.damping import identity_damping

    quartic = quartic_potential()
    grid = Grid1D(0.0, 1.0, 200)
    eps = 0.05
    u0 = np.tanh((grid.x - 0.5) / (np.sqrt(2.0) * eps))
    solver = HyperbolicAllenCahnSolver(quartic, identity_damping(1), grid)
    summary = solver.run(State(0.0, u0, np.zeros_like(u0), eps, 1.0), dt=0.01, t_end=1.0)
    print(summary.ledger.to_frame().tail())
