"""
CSV persistence of sweep rows, ledgers, snapshots, paths and metric tables.
The config is echoed next to the results with its SHA-256 so loads can detect tampering.
"""
from pathlib import Path
from typing import Dict, Any, Optional, Sequence, Union
import hashlib
import json
import logging

import numpy as np
import pandas as pd

from src.config import ExperimentConfig, canonical_json, config_hash, to_flat_text
from src.exceptions import CorruptionError

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

ROW_COLUMNS = [
    'eps', 'status', 'error', 'n_cells', 'dx', 'dt', 'A_ref', 't_end', 't_reached', 'censored',
    'exited', 'exit_time', 'exit_resolution', 'drift_speed', 'centroid_drift_speed',
    'energy_excess', 'l1_initial', 'is_transition_layer', 'dissipation_residual', 'ut_budget',
    'l1_excursion', 'l1_ok', 'energy_monotone', 'monotone_violations', 'young_violations',
    'min_damping_eig',
]
NA_TOKEN = 'nan'


def rows_frame(rows: Sequence[Dict[str, Any]], columns: Sequence[str] = ROW_COLUMNS) -> pd.DataFrame:
    """Rows as a frame with the given leading columns (extra keys are appended)"""
    frame = pd.DataFrame(list(rows))
    if frame.empty:
        return pd.DataFrame(columns=list(columns))
    ordered = [c for c in columns if c in frame.columns]
    return frame[ordered + [c for c in frame.columns if c not in ordered]]


def write_csv(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, na_rep=NA_TOKEN)
    return path


def read_csv(path: Union[str, Path]) -> pd.DataFrame:
    """Read back a frame written by write_csv with exact floats"""
    return pd.read_csv(path, float_precision='round_trip', keep_default_na=False, na_values=[NA_TOKEN])


def _file_digest(text: str) -> str:
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


class ResultStore:
    """Output directory of one experiment"""

    def __init__(self, root: Union[str, Path], config: ExperimentConfig, config_text: Optional[str] = None):
        """
        Args:
            root: output root; results go to root/<name>-<hash prefix>
            config: validated config
            config_text: the original file text, echoed verbatim when given
        """
        self.config = config
        self.hash = config_hash(config)
        self.directory = Path(root) / f"{config.experiment.name}-{self.hash[:12]}"
        self.config_text = config_text if config_text is not None else to_flat_text(config)
        logger.info(f"ResultStore initialized: {self.directory}")

    def write_config(self) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        (self.directory / 'config.cfg').write_text(self.config_text)
        (self.directory / 'config.json').write_text(canonical_json(self.config))
        (self.directory / 'config.sha256').write_text(self.hash + '\n')
        return self.directory

    def write_rows(self, rows: Sequence[Dict[str, Any]], name: str = 'rows.csv') -> Path:
        return write_csv(rows_frame(rows), self.directory / name)

    def write_frame(self, frame: pd.DataFrame, name: str) -> Path:
        return write_csv(frame, self.directory / name)

    def write_ledger(self, eps: float, frame: pd.DataFrame) -> Path:
        return write_csv(frame, self.directory / 'ledgers' / f"ledger_eps_{eps:g}.csv")

    def write_snapshots(self, eps: float, frame: pd.DataFrame) -> Path:
        return write_csv(frame, self.directory / 'snapshots' / f"snapshots_eps_{eps:g}.csv")

    def write_metric_table(self, values: np.ndarray, paths: Dict = None) -> Path:
        K = values.shape[0]
        frame = pd.DataFrame(values, columns=[f'z_{j}' for j in range(K)])
        frame.insert(0, 'well', np.arange(K))
        out = write_csv(frame, self.directory / 'metric_table.csv')
        for (i, j), path in (paths or {}).items():
            write_csv(pd.DataFrame(path.to_frame_columns()), self.directory / 'paths' / f"path_{i}_{j}.csv")
        return out


def verify_directory(directory: Union[str, Path]) -> str:
    """
    Check that the stored config matches its stored hash.

    Returns:
        The verified hash

    Raises:
        CorruptionError: missing files or hash mismatch
    """
    directory = Path(directory)
    try:
        stored = (directory / 'config.sha256').read_text().strip()
        text = (directory / 'config.json').read_text()
    except OSError as e:
        raise CorruptionError(f"Incomplete result directory {directory}: {e}") from e
    actual = _file_digest(text)
    if actual != stored:
        logger.error(f"Config hash mismatch in {directory}")
        raise CorruptionError(f"Stored config hash {stored[:12]} does not match contents {actual[:12]}")
    return stored


def load_config_json(directory: Union[str, Path]) -> Dict[str, Any]:
    verify_directory(directory)
    return json.loads((Path(directory) / 'config.json').read_text())


def load_rows(directory: Union[str, Path], name: str = 'rows.csv') -> pd.DataFrame:
    """Rows of a verified result directory"""
    verify_directory(directory)
    return read_csv(Path(directory) / name)
