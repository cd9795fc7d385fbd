"""
Experiment orchestration: component assembly from a config, concurrent eps sweeps,
exit-time and drift measurements, log-linear rate fits and the robustness comparisons.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Any, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np
import pandas as pd
from scipy import stats

from src.config import ExperimentConfig
from src.damping import DampingSpec, PositivityCertificate, build_damping, certify_positivity, \
    default_certify_box, identity_damping
from src.exceptions import BlowUpError, InsufficientDataError, ConfigurationError
from src.geodesic import MetricTable, build_metric_table, asymptotic_energy_P0
from src.interface import DSetSpec, ExitTimeDetector, detect_exit_time, layer_positions
from src.layer_profile import StepFunction, ProfileCurve, profiles_for, \
    build_initial_datum, build_initial_velocity, verify_transition_layer_structure
from src.potential import PotentialSpec, PotentialValidationReport, build_potential, spectral_bounds, validate
from src.solver import Grid1D, State, HyperbolicAllenCahnSolver, TrajectorySummary, dissipation_residual
from src.storage import ResultStore

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

FIT_KINDS = ('exit_time', 'drift_speed', 'energy_excess', 'ut_budget')
MIN_FIT_ROWS = 3
L1_SLACK = 1e-12


@dataclass
class ExperimentComponents:
    """Everything an eps run needs that does not depend on eps"""
    potential: PotentialSpec
    validation: PotentialValidationReport
    damping: DampingSpec
    certificate: PositivityCertificate
    table: MetricTable
    v: StepFunction
    P0: float
    profiles: List[ProfileCurve]
    A_ref: float

    @property
    def checks(self) -> Dict[str, bool]:
        return {
            'potential_valid': self.validation.passed,
            'damping_certified': self.certificate.accepted,
            'metric_axioms': not self.table.check_axioms(),
        }


@dataclass
class FitReport:
    kind: str
    slope: float
    intercept: float
    r_squared: float
    n_used: int

    @property
    def A_hat(self) -> float:
        return abs(self.slope)

    @property
    def prefactor(self) -> float:
        return math.exp(self.intercept)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'kind': self.kind,
            'slope': self.slope,
            'intercept': self.intercept,
            'r_squared': self.r_squared,
            'A_hat': self.A_hat,
            'prefactor': self.prefactor,
            'n_used': self.n_used,
        }


@dataclass
class SweepOutcome:
    rows: List[Dict[str, Any]]
    summaries: Dict[float, TrajectorySummary] = field(default_factory=dict)
    grids: Dict[float, Grid1D] = field(default_factory=dict)
    initial_data: Dict[float, np.ndarray] = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all_checks_passed(self.rows)


def build_components(config: ExperimentConfig) -> ExperimentComponents:
    """
    Validate the potential, certify the damping, build the metric table and the layer profiles.

    Raises:
        ConfigurationError, HypothesisViolationError, PositivityCertificationError
    """
    pc = config.potential
    potential = build_potential(pc.kind, pc.zeros, pc.coefficients)
    report = validate(potential, pc.validation_samples)
    if report.bounds is None:
        # hypothesis violations are fatal for everything downstream
        spectral_bounds(potential)

    dc = config.damping
    damping = build_damping(dc.kind, potential, dc.tau_relaxation, dc.matrix, dc.coefficient)
    if dc.certify_lo is not None and dc.certify_hi is not None:
        box = (dc.certify_lo, dc.certify_hi)
    else:
        box = default_certify_box(potential)
    certificate = certify_positivity(damping, box, dc.certify_samples, extra_points=potential.zeros)

    table = build_metric_table(potential, max_workers=config.experiment.max_workers)
    lc = config.layer
    v = StepFunction.parse(lc.jumps, a=config.grid.a, b=config.grid.b, r=lc.r, constant=lc.constant)
    v.check_values(potential)
    P0 = asymptotic_energy_P0(potential, v, table)
    profiles = profiles_for(v, potential, table, lc.centering)
    A_ref = lc.r * math.sqrt(2.0 * report.bounds.lam)
    logger.info(f"Components ready: {potential.name}, {v.jump_count} jumps, P0={P0:.6g}, A_ref={A_ref:.4g}")
    return ExperimentComponents(potential=potential, validation=report, damping=damping,
                                certificate=certificate, table=table, v=v, P0=P0, profiles=profiles,
                                A_ref=A_ref)


def horizon(config: ExperimentConfig, A_ref: float, eps: float) -> float:
    """t_end = s exp(A_ref / eps), at least the budget window end, capped by solver.t_max"""
    if config.solver.t_end is not None:
        return config.solver.t_end
    t = config.experiment.horizon_multiplier * math.exp(min(A_ref / eps, 700.0))
    return min(max(t, config.experiment.budget_window[1]), config.solver.t_max)


def drift_speed(ledger_frame: pd.DataFrame, prefix: str = 'layer_pos_', t_settle: float = 0.0) -> float:
    """
    Mean layer displacement per unit time over the final half of the recorded rows, never
    starting before t_settle.

    Only rows carrying every layer column are used; nan when fewer than two remain.
    """
    cols = [c for c in ledger_frame.columns if c.startswith(prefix)]
    if not cols or ledger_frame.empty:
        return np.nan
    t = ledger_frame['t'].to_numpy()
    half = ledger_frame[t >= max(0.5 * (t[0] + t[-1]), t_settle)].dropna(subset=cols)
    if len(half) < 2:
        return np.nan
    span = half['t'].iloc[-1] - half['t'].iloc[0]
    if span <= 0.0:
        return np.nan
    displacement = np.abs(half[cols].iloc[-1].to_numpy() - half[cols].iloc[0].to_numpy())
    return float(displacement.mean() / span)


def window_increment(summary: TrajectorySummary, column: str, t0: float, t1: float) -> float:
    """Increase of a cumulative ledger column over [t0, t1]; nan when the run stopped earlier"""
    t = summary.ledger.column('t')
    if t[-1] < t1 - 1e-9 * max(1.0, t1):
        return np.nan
    values = summary.ledger.column(column)
    a, b = np.interp([t0, t1], t, values)
    return float(b - a)


def l1_excursion(summary: TrajectorySummary, t_window: Optional[float] = None) -> Tuple[float, bool]:
    """
    sup |u(t) - v|_L1 - |u0 - v|_L1 over the rows with t <= t_window, and whether every row
    stays below the cumulative int |u_t|_L1.

    Sweeps pass the budget window end so every eps is measured over the same times.
    """
    t = summary.ledger.column('t')
    l1 = summary.ledger.column('l1_dist_to_v')
    bound = summary.ledger.column('ut_l1_cum')
    excursion = l1 - l1[0]
    ok = bool(np.all(excursion <= bound + L1_SLACK * (1.0 + bound)))
    inside = excursion if t_window is None else excursion[t <= t_window * (1.0 + 1e-12)]
    return float(np.max(inside)), ok


def run_single(config: ExperimentConfig, components: ExperimentComponents, eps: float,
               tau: Optional[float] = None, damping: Optional[DampingSpec] = None,
               t_end: Optional[float] = None) -> Tuple[Dict[str, Any], TrajectorySummary, Grid1D, np.ndarray]:
    """
    Build the eps initial data, check its layer structure, simulate and measure.

    Returns:
        (row, summary, grid, u0)
    """
    tau = config.system.tau if tau is None else tau
    damping = components.damping if damping is None else damping
    potential = components.potential
    v = components.v
    grid = Grid1D.from_eps(config.grid.a, config.grid.b, eps, config.solver.dx_over_eps)

    u0 = build_initial_datum(v, eps, components.profiles, grid, potential.zeros, config.layer.construction)
    structure = verify_transition_layer_structure(
        u0, v, eps, components.P0, potential, grid,
        quadrature_slack=components.P0 * (grid.dx / eps) ** 2)
    vc = config.velocity
    u1 = build_initial_velocity(vc.kind, eps, tau, vc.A_target, vc.C_target, grid, potential.dimension, vc.seed)

    solver = HyperbolicAllenCahnSolver(potential, damping, grid, scheme=config.solver.scheme,
                                       cfl=config.solver.cfl, reference=v.evaluate(grid.x, potential.zeros),
                                       alpha=components.certificate.alpha)
    dt = min(config.solver.dt or math.inf, solver.max_dt(eps, tau))
    t_final = horizon(config, components.A_ref, eps) if t_end is None else t_end

    t0, t1 = config.experiment.budget_window
    callbacks = []
    detector = None
    D = DSetSpec(config.interface.rho_d, potential.zeros)
    if v.jump_count:
        # an early exit still runs through the u_t budget window
        detector = ExitTimeDetector(D, config.interface.delta1, u0, grid,
                                    stop_on_exit=config.experiment.stop_on_exit, stop_after=t1)
        callbacks.append(detector)

    logger.info(f"eps={eps}: n={grid.n}, dt={dt:.3e}, t_end={t_final:.6g}")
    error = ''
    try:
        summary = solver.run(State(0.0, u0, u1, eps, tau), dt, t_final, callbacks=callbacks,
                             snapshot_stride=config.solver.snapshot_stride,
                             ledger_stride=config.solver.ledger_stride,
                             max_wall_seconds=config.solver.wall_seconds)
    except BlowUpError as e:
        if e.summary is None:
            raise
        logger.error(f"eps={eps} blew up: {e}; keeping the run up to t={e.summary.final_state.t:.6g}")
        summary = e.summary
        error = f"BlowUpError: {e}"

    frame = summary.ledger.to_frame()
    t_reached = float(summary.final_state.t)
    exit_result = detector.result() if detector is not None else None
    excursion, l1_ok = l1_excursion(summary, t1)
    if summary.stop_reason == 'blowup':
        status = 'blowup'
    else:
        status = 'censored' if summary.censored else 'ok'
    row = {
        'eps': eps,
        'status': status,
        'error': error,
        'n_cells': grid.n,
        'dx': grid.dx,
        'dt': dt,
        'A_ref': components.A_ref,
        't_end': t_final,
        't_reached': t_reached,
        'censored': summary.censored,
        'exited': bool(exit_result and exit_result.exited),
        'exit_time': exit_result.exit_time if exit_result and exit_result.exited else np.nan,
        'exit_resolution': exit_result.resolution if exit_result else np.nan,
        'drift_speed': drift_speed(frame, 'layer_pos_', t0),
        'centroid_drift_speed': drift_speed(frame, 'layer_centroid_', t0),
        'energy_excess': structure.excess,
        'l1_initial': structure.l1_distance,
        'is_transition_layer': structure.is_transition_layer,
        'dissipation_residual': dissipation_residual(summary.ledger, 0.0, t_reached),
        'ut_budget': window_increment(summary, 'ut_l2sq_cum', t0, t1),
        'l1_excursion': excursion,
        'l1_ok': l1_ok,
        'energy_monotone': summary.monotone_violations == 0,
        'monotone_violations': summary.monotone_violations,
        'young_violations': int(frame['young_violations'].sum()),
        'min_damping_eig': float(frame['min_damping_eig'].min()),
    }
    return row, summary, grid, u0


def _failed_row(eps: float, error: Exception) -> Dict[str, Any]:
    return {'eps': eps, 'status': 'failed', 'error': f"{type(error).__name__}: {error}"}


def run_experiment(config: ExperimentConfig, components: Optional[ExperimentComponents] = None) -> SweepOutcome:
    """
    Run every eps of the config concurrently and merge the rows in eps order.

    A failing eps is logged and recorded with status failed; the other runs continue.
    """
    components = components or build_components(config)
    eps_list = list(config.layer.eps)

    def task(eps):
        try:
            return eps, run_single(config, components, eps)
        except Exception as e:
            logger.error(f"eps={eps} failed: {e}")
            return eps, e

    with ThreadPoolExecutor(max_workers=config.experiment.max_workers) as executor:
        results = dict(executor.map(task, eps_list))

    outcome = SweepOutcome(rows=[])
    for eps in eps_list:
        result = results[eps]
        if isinstance(result, Exception):
            outcome.rows.append(_failed_row(eps, result))
            continue
        row, summary, grid, u0 = result
        outcome.rows.append(row)
        outcome.summaries[eps] = summary
        outcome.grids[eps] = grid
        outcome.initial_data[eps] = u0
    logger.info(f"Sweep finished: {len(outcome.rows)} rows, "
                f"{sum(r['status'] == 'failed' for r in outcome.rows)} failed")
    return outcome


def fit_rate(rows: Sequence[Dict[str, Any]], kind: str) -> FitReport:
    """
    Least-squares line through (1/eps, log quantity).

    Rows with nonpositive or missing values are excluded with a warning; censored rows never
    enter an exit-time fit.

    Raises:
        InsufficientDataError: fewer than three usable rows
    """
    if kind not in FIT_KINDS:
        raise ConfigurationError(f"Unknown fit kind {kind} (expected one of {list(FIT_KINDS)})")
    x, y = [], []
    for row in rows:
        value = row.get(kind, np.nan)
        value = np.nan if value is None else float(value)
        if kind == 'exit_time' and bool(row.get('censored', False)):
            continue
        if row.get('status') in ('failed', 'blowup') or not np.isfinite(value) or value <= 0.0:
            logger.warning(f"Excluding eps={row.get('eps')} from the {kind} fit (value {value})")
            continue
        x.append(1.0 / float(row['eps']))
        y.append(math.log(value))
    if len(x) < MIN_FIT_ROWS:
        raise InsufficientDataError(f"{kind} fit needs {MIN_FIT_ROWS} usable rows, got {len(x)}")
    fit = stats.linregress(np.array(x), np.array(y))
    return FitReport(kind=kind, slope=float(fit.slope), intercept=float(fit.intercept),
                     r_squared=float(fit.rvalue ** 2), n_used=len(x))


def fit_all(rows: Sequence[Dict[str, Any]]) -> List[FitReport]:
    """Every fit kind that has enough data"""
    reports = []
    for kind in FIT_KINDS:
        try:
            reports.append(fit_rate(rows, kind))
        except InsufficientDataError as e:
            logger.warning(str(e))
    return reports


def rho_d_sensitivity(config: ExperimentConfig, components: ExperimentComponents,
                      outcome: SweepOutcome) -> List[Dict[str, Any]]:
    """
    Exit time and drift of the stored snapshots for each rho_d of the robustness sweep.

    Snapshot spacing limits the exit-time resolution; no sensitivity bound is asserted.
    """
    rows = []
    zeros = components.potential.zeros
    for eps, summary in outcome.summaries.items():
        grid = outcome.grids[eps]
        u0 = outcome.initial_data[eps]
        stream = [(s.t, s.u) for s in summary.snapshots]
        for rho_d in config.experiment.rho_d_sweep:
            try:
                D = DSetSpec(rho_d, zeros)
                result = detect_exit_time(stream, config.interface.delta1, D, u0, grid)
                positions = [layer_positions(u, grid, D) for _, u in stream]
                frame = pd.DataFrame([{'t': t, **{f'layer_pos_{k + 1}': p for k, p in enumerate(pos)}}
                                      for (t, _), pos in zip(stream, positions)])
                rows.append({
                    'eps': eps,
                    'rho_d': rho_d,
                    'exited': result.exited,
                    'exit_time': result.exit_time if result.exited else np.nan,
                    'resolution': result.resolution,
                    'drift_speed': drift_speed(frame),
                    'error': '',
                })
            except Exception as e:
                logger.error(f"rho_d={rho_d} at eps={eps} failed: {e}")
                rows.append({'eps': eps, 'rho_d': rho_d, 'exited': False, 'exit_time': np.nan,
                             'resolution': np.nan, 'drift_speed': np.nan, 'error': str(e)})
    return rows


def tau_limit_comparison(config: ExperimentConfig, components: ExperimentComponents,
                         eps: Optional[float] = None, taus: Optional[Sequence[float]] = None) -> List[Dict[str, Any]]:
    """
    Same data at decreasing tau with G = I over the budget window; layer positions are logged
    for comparison with the parabolic limit, nothing is asserted.
    """
    eps = config.layer.eps[-1] if eps is None else eps
    taus = list(config.experiment.tau_sweep if taus is None else taus)
    if not taus or components.v.jump_count == 0:
        return []
    identity = identity_damping(components.potential.dimension)
    t_end = config.experiment.budget_window[1]
    rows = []
    for tau in taus:
        try:
            row, summary, grid, _ = run_single(config, components, eps, tau=tau, damping=identity, t_end=t_end)
            D = DSetSpec(config.interface.rho_d, components.potential.zeros)
            final = layer_positions(summary.final_state.u, grid, D)
            rows.append({
                'eps': eps,
                'tau': tau,
                't_reached': row['t_reached'],
                'drift_speed': row['drift_speed'],
                'final_positions': ' '.join(f'{p:.10g}' for p in final),
                'error': '',
            })
            logger.info(f"tau={tau}: final layer positions {final.tolist()}")
        except Exception as e:
            logger.error(f"tau={tau} failed: {e}")
            rows.append({'eps': eps, 'tau': tau, 't_reached': np.nan, 'drift_speed': np.nan,
                         'final_positions': '', 'error': str(e)})
    return rows


def all_checks_passed(rows: Sequence[Dict[str, Any]], scheme: str = 'discrete_gradient') -> bool:
    """Every row ran and kept the Young, L1 and (for the dissipative scheme) energy invariants"""
    for row in rows:
        if row.get('status') in ('failed', 'blowup'):
            return False
        if row.get('young_violations', 0) != 0 or not row.get('l1_ok', False):
            return False
        if scheme == 'discrete_gradient' and not row.get('energy_monotone', False):
            return False
    return True


FIT_COLUMNS = ['kind', 'slope', 'intercept', 'r_squared', 'A_hat', 'prefactor', 'n_used']


def persist_sweep(store: ResultStore, components: ExperimentComponents, outcome: SweepOutcome,
                  fits: Sequence[FitReport], rho_rows: Sequence[Dict[str, Any]] = (),
                  tau_rows: Sequence[Dict[str, Any]] = ()):
    """Write config echo, rows, fits, metric table, ledgers and snapshots of a sweep"""
    store.write_config()
    store.write_rows(outcome.rows)
    store.write_frame(pd.DataFrame([f.to_dict() for f in fits], columns=FIT_COLUMNS), 'fits.csv')
    store.write_metric_table(components.table.values, components.table.paths)
    for eps, summary in outcome.summaries.items():
        store.write_ledger(eps, summary.ledger.to_frame())
        store.write_snapshots(eps, summary.snapshot_frame(outcome.grids[eps]))
    if rho_rows:
        store.write_frame(pd.DataFrame(list(rho_rows)), 'rho_d_sweep.csv')
    if tau_rows:
        store.write_frame(pd.DataFrame(list(tau_rows)), 'tau_limit.csv')
    logger.info(f"Sweep persisted to {store.directory}")
    return store.directory
