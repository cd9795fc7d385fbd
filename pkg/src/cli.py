"""
Command-line surface: validate, geodesic, initdata, simulate, sweep and fit.
Exit code 0 only when every invariant check of the command passed.
"""
from pathlib import Path
from typing import List, Optional
import argparse
import json
import logging
import sys

import numpy as np
import pandas as pd
from pydantic import ValidationError

from src.config import ExperimentConfig, load_config, config_hash
from src.damping import build_damping, certify_positivity, default_certify_box
from src.exceptions import AllenCahnError, ConfigurationError
from src.geodesic import build_metric_table, optimal_path, phi
from src.harness import build_components, run_single, run_experiment, fit_all, fit_rate, persist_sweep, \
    rho_d_sensitivity, all_checks_passed, FIT_KINDS
from src.layer_profile import StepFunction, profiles_for, build_initial_datum, build_initial_velocity
from src.potential import build_potential, validate
from src.solver import Grid1D
from src.storage import ResultStore, read_csv, write_csv

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


def _load(args) -> ExperimentConfig:
    config = load_config(args.config)
    updates = {}
    if getattr(args, 'delta1', None) is not None:
        updates['delta1'] = args.delta1
    if getattr(args, 'rho_d', None) is not None:
        updates['rho_d'] = args.rho_d
    if updates:
        # re-validate so cross-section rules still apply
        data = config.model_dump()
        data['interface'].update(updates)
        try:
            config = ExperimentConfig.model_validate(data)
        except ValidationError as e:
            raise ConfigurationError(f"Invalid override: {e}") from e
    return config


def _print(payload) -> None:
    print(json.dumps(payload, indent=2, default=float))


def run_validate(args) -> int:
    config = _load(args)
    potential = build_potential(config.potential.kind, config.potential.zeros, config.potential.coefficients)
    report = validate(potential, config.potential.validation_samples)
    dc = config.damping
    damping = build_damping(dc.kind, potential, dc.tau_relaxation, dc.matrix, dc.coefficient)
    box = (dc.certify_lo, dc.certify_hi) if dc.certify_lo is not None else default_certify_box(potential)
    try:
        certificate = certify_positivity(damping, box, dc.certify_samples, extra_points=potential.zeros)
        cert = certificate.to_dict()
    except AllenCahnError as e:
        cert = {'accepted': False, 'error': str(e)}
    _print({'potential': report.to_dict(), 'damping': cert})
    return 0 if report.passed and cert['accepted'] else 1


def run_geodesic(args) -> int:
    config = _load(args)
    potential = build_potential(config.potential.kind, config.potential.zeros, config.potential.coefficients)
    if args.action == 'phi':
        z = potential.zeros
        path = optimal_path(potential, z[args.source], z[args.target])
        value = phi(potential, z[args.source], z[args.target])
        _print({'from': args.source, 'to': args.target, 'phi': value, 'sigma': path.sigma,
                'converged': path.converged})
        if args.out:
            write_csv(pd.DataFrame(path.to_frame_columns()), args.out)
        return 0 if path.converged else 1
    table = build_metric_table(potential)
    issues = table.check_axioms()
    _print({'values': table.values.tolist(), 'sigma_max': table.sigma_max, 'axiom_issues': issues})
    if args.out:
        frame = pd.DataFrame(table.values, columns=[f'z_{j}' for j in range(table.well_count)])
        frame.insert(0, 'well', np.arange(table.well_count))
        write_csv(frame, args.out)
    return 0 if not issues else 1


def run_initdata(args) -> int:
    config = _load(args)
    potential = build_potential(config.potential.kind, config.potential.zeros, config.potential.coefficients)
    table = build_metric_table(potential)
    jumps = config.layer.jumps if args.jumps is None else args.jumps
    r = config.layer.r if args.r is None else args.r
    v = StepFunction.parse(jumps, a=config.grid.a, b=config.grid.b, r=r, constant=config.layer.constant)
    profiles = profiles_for(v, potential, table, config.layer.centering)
    grid = Grid1D.from_eps(config.grid.a, config.grid.b, args.eps, config.solver.dx_over_eps)
    u0 = build_initial_datum(v, args.eps, profiles, grid, potential.zeros, config.layer.construction)
    vc = config.velocity
    u1 = build_initial_velocity(vc.kind, args.eps, config.system.tau, vc.A_target, vc.C_target, grid,
                                potential.dimension, vc.seed)
    cols = {'x': grid.x}
    for k in range(potential.dimension):
        cols[f'u_{k + 1}'] = u0[:, k]
    for k in range(potential.dimension):
        cols[f'ut_{k + 1}'] = u1[:, k]
    path = write_csv(pd.DataFrame(cols), args.out)
    logger.info(f"Initial data written to {path}")
    return 0


def run_simulate(args) -> int:
    config = _load(args)
    components = build_components(config)
    row, summary, grid, _ = run_single(config, components, args.eps)
    _print(row)
    if args.out:
        out = Path(args.out)
        write_csv(summary.ledger.to_frame(), out / f"ledger_eps_{args.eps:g}.csv")
        write_csv(summary.snapshot_frame(grid), out / f"snapshots_eps_{args.eps:g}.csv")
    return 0 if all_checks_passed([row], config.solver.scheme) else 1


def run_sweep(args) -> int:
    config = _load(args)
    components = build_components(config)
    outcome = run_experiment(config, components)
    fits = fit_all(outcome.rows)
    rho_rows = rho_d_sensitivity(config, components, outcome)
    root = Path(args.out) if args.out else config.output_root
    text = Path(args.config).read_text() if args.delta1 is None and args.rho_d is None else None
    directory = persist_sweep(ResultStore(root, config, text), components, outcome, fits, rho_rows)
    passed = all_checks_passed(outcome.rows, config.solver.scheme) and all(components.checks.values())
    _print({'directory': str(directory), 'config_hash': config_hash(config), 'all_passed': passed,
            'fits': [f.to_dict() for f in fits]})
    return 0 if passed else 1


def run_fit(args) -> int:
    rows = read_csv(args.rows).to_dict('records')
    report = fit_rate(rows, args.kind)
    _print(report.to_dict())
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog='allen-cahn',
                                     description="Metastability experiments for hyperbolic Allen-Cahn systems")
    subparsers = parser.add_subparsers(dest="cmd", required=True)

    sp = subparsers.add_parser('validate', help="validate the potential and certify the damping")
    sp.add_argument('--config', required=True)
    sp.set_defaults(func=run_validate)

    sp = subparsers.add_parser('geodesic', help="phi between two wells or the full metric table")
    sp.add_argument('action', choices=['phi', 'table'])
    sp.add_argument('--config', required=True)
    sp.add_argument('--from', dest='source', type=int, default=0)
    sp.add_argument('--to', dest='target', type=int, default=1)
    sp.add_argument('--out', help="CSV for the path (phi) or the table")
    sp.set_defaults(func=run_geodesic)

    sp = subparsers.add_parser('initdata', help="build transition-layer initial data")
    sp.add_argument('action', choices=['build'])
    sp.add_argument('--config', required=True)
    sp.add_argument('--eps', type=float, required=True)
    sp.add_argument('--jumps', help='e.g. "0.3:0>1,0.7:1>0"')
    sp.add_argument('--r', type=float)
    sp.add_argument('--out', required=True)
    sp.set_defaults(func=run_initdata)

    for name, func, helptext in (('simulate', run_simulate, "run one eps"),
                                 ('sweep', run_sweep, "run the eps sweep and persist it")):
        sp = subparsers.add_parser(name, help=helptext)
        sp.add_argument('--config', required=True)
        if name == 'simulate':
            sp.add_argument('--eps', type=float, required=True)
        sp.add_argument('--delta1', type=float)
        sp.add_argument('--rho-d', dest='rho_d', type=float)
        sp.add_argument('--out')
        sp.set_defaults(func=func)

    sp = subparsers.add_parser('fit', help="log-linear rate fit of a rows CSV")
    sp.add_argument('--rows', required=True)
    sp.add_argument('--kind', choices=list(FIT_KINDS), default='drift_speed')
    sp.set_defaults(func=run_fit)

    args = parser.parse_args(argv)
    try:
        return int(args.func(args))
    except AllenCahnError as e:
        logger.error(f"{args.cmd} failed: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
