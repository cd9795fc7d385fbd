"""
Complete metastability experiment pipeline.
Run this with a config file to validate components, sweep eps, fit rates and persist everything.
"""
import logging
import sys
from pathlib import Path
from typing import Dict, Any, List, Optional

from src.config import ExperimentConfig, load_config, config_hash
from src.database import get_db_manager
from src.harness import ExperimentComponents, SweepOutcome, FitReport, build_components, run_experiment, \
    fit_all, rho_d_sensitivity, tau_limit_comparison, persist_sweep, all_checks_passed
from src.storage import ResultStore

Path('logs').mkdir(exist_ok=True)
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler('logs/pipeline.log'),
        logging.StreamHandler()
    ],
    force=True
)
logger = logging.getLogger(__name__)


class ExperimentPipeline:
    """Complete experiment pipeline for one config file"""

    def __init__(self, config_path: str, database_url: Optional[str] = None):
        """Load the config and connect the run registry"""
        logger.info(f"Initializing experiment pipeline for {config_path}...")
        self.config_path = Path(config_path)
        self.config: ExperimentConfig = load_config(self.config_path)
        self.db_manager = get_db_manager(database_url or self.config.database_url)
        self.db_manager.init_db()
        self.components: Optional[ExperimentComponents] = None
        logger.info("Pipeline initialized successfully")

    def prepare(self) -> ExperimentComponents:
        """Validate the potential, certify the damping, build the metric table and profiles"""
        self.components = build_components(self.config)
        return self.components

    def run(self) -> Dict[str, Any]:
        """
        Run the whole experiment.

        Returns:
            Result dictionary with rows, fits, output directory and the pass flag
        """
        result = {
            'name': self.config.experiment.name,
            'config_hash': config_hash(self.config),
            'success': False,
            'error': None,
        }
        try:
            components = self.components or self.prepare()
            outcome = run_experiment(self.config, components)
            fits = fit_all(outcome.rows)
            rho_rows = rho_d_sensitivity(self.config, components, outcome)
            tau_rows = tau_limit_comparison(self.config, components)

            store = ResultStore(self.config.output_root, self.config, self.config_path.read_text())
            directory = persist_sweep(store, components, outcome, fits, rho_rows, tau_rows)
            passed = all_checks_passed(outcome.rows, self.config.solver.scheme) and all(components.checks.values())
            self._store_results(outcome, directory, passed)

            result.update({
                'rows': outcome.rows,
                'fits': fits,
                'rho_d_rows': rho_rows,
                'tau_rows': tau_rows,
                'checks': components.checks,
                'directory': str(directory),
                'all_passed': passed,
                'success': True,
            })
            logger.info(f"Experiment {self.config.experiment.name} finished (all passed: {passed})")
        except Exception as e:
            logger.error(f"Experiment {self.config.experiment.name} failed: {str(e)}")
            result['error'] = str(e)
        return result

    def _store_results(self, outcome: SweepOutcome, directory: Path, passed: bool):
        """Record the sweep in the run registry"""
        session = next(self.db_manager.get_session())
        try:
            self.db_manager.record_run(session, {
                'name': self.config.experiment.name,
                'config_hash': config_hash(self.config),
                'output_dir': str(directory),
                'all_passed': passed,
            }, outcome.rows)
        except Exception as e:
            logger.error(f"Error storing results: {str(e)}")
            session.rollback()
        finally:
            session.close()

    @staticmethod
    def generate_summary(result: Dict[str, Any]) -> Dict[str, Any]:
        rows: List[Dict[str, Any]] = result.get('rows', [])
        fits: List[FitReport] = result.get('fits', [])
        return {
            'total_runs': len(rows),
            'ok': sum(1 for r in rows if r.get('status') == 'ok'),
            'censored': sum(1 for r in rows if r.get('status') == 'censored'),
            'failed': sum(1 for r in rows if r.get('status') == 'failed'),
            'exited': sum(1 for r in rows if r.get('exited')),
            'fits': {f.kind: f for f in fits},
        }


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point"""
    argv = sys.argv[1:] if argv is None else argv
    config_path = argv[0] if argv else 'data/configs/quartic_two_layer.cfg'

    logger.info("=" * 70)
    logger.info("Hyperbolic Allen-Cahn Metastability Pipeline")
    logger.info("=" * 70)

    pipeline = ExperimentPipeline(config_path)
    result = pipeline.run()
    if not result['success']:
        print(f"Experiment failed: {result['error']}")
        return 2

    summary = pipeline.generate_summary(result)
    print("\n" + "=" * 70)
    print("EXPERIMENT SUMMARY")
    print("=" * 70)
    print(f"Experiment:          {result['name']}")
    print(f"Config hash:         {result['config_hash'][:12]}")
    print(f"Runs:                {summary['total_runs']}")
    print(f"Completed:           {summary['ok']}")
    print(f"Censored:            {summary['censored']}")
    print(f"Failed:              {summary['failed']}")
    print(f"Exited:              {summary['exited']}")
    print("\nPer-eps results:")
    for row in result['rows']:
        print(f"  eps={row['eps']:<8g} {row['status']:10s} drift={row.get('drift_speed', float('nan')):.3e} "
              f"excess={row.get('energy_excess', float('nan')):.3e}")
    print("\nRate fits (log quantity vs 1/eps):")
    for kind, fit in summary['fits'].items():
        print(f"  {kind:20s}: slope={fit.slope:9.4f}  R^2={fit.r_squared:.4f}  n={fit.n_used}")
    print("\nChecks:")
    for name, ok in result['checks'].items():
        print(f"  {name:20s}: {'pass' if ok else 'FAIL'}")
    print(f"\nAll checks passed:   {result['all_passed']}")
    print(f"Output directory:    {result['directory']}")
    print("=" * 70)

    logger.info("Pipeline execution completed")
    return 0 if result['all_passed'] else 1


if __name__ == "__main__":
    sys.exit(main())
