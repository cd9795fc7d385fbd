"""
Unit tests for storage module
"""
import numpy as np
import pandas as pd
import pytest

from src.config import config_from_mapping, config_hash
from src.exceptions import CorruptionError
from src.geodesic import PathPolyline
from src.storage import ROW_COLUMNS, ResultStore, load_config_json, load_rows, read_csv, rows_frame, \
    verify_directory, write_csv


@pytest.fixture
def config():
    """Small valid config"""
    return config_from_mapping({
        'experiment.name': 'store_test',
        'layer.jumps': '0.4:0>1',
        'layer.r': '0.2',
        'layer.eps': '[0.1]',
    })


@pytest.fixture
def store(tmp_path, config):
    """Result store with its config written"""
    store = ResultStore(tmp_path, config)
    store.write_config()
    return store


class TestFrames:
    """Test cases for row frames and CSV helpers"""

    def test_column_order(self):
        """Test known columns lead and extra keys follow"""
        frame = rows_frame([{'extra': 3, 'drift_speed': 1.0, 'eps': 0.1}])
        assert list(frame.columns) == ['eps', 'drift_speed', 'extra']

    def test_empty_rows(self):
        """Test an empty frame keeps the header"""
        assert list(rows_frame([]).columns) == ROW_COLUMNS

    def test_exact_float_round_trip(self, tmp_path):
        """Test floats and missing values survive write and read"""
        values = [0.1, 1.0 / 3.0, np.nan, 1e-300]
        path = write_csv(pd.DataFrame({'x': values}), tmp_path / 'sub' / 'x.csv')
        back = read_csv(path)['x'].to_numpy()
        assert np.array_equal(back[[0, 1, 3]], np.array(values)[[0, 1, 3]])
        assert np.isnan(back[2])


class TestResultStore:
    """Test cases for ResultStore"""

    def test_directory_name(self, tmp_path, config):
        """Test root/<name>-<hash prefix>"""
        store = ResultStore(tmp_path, config)
        assert store.directory == tmp_path / f"store_test-{config_hash(config)[:12]}"

    def test_config_files(self, store, config):
        """Test the config echo and its hash"""
        assert (store.directory / 'config.cfg').is_file()
        assert verify_directory(store.directory) == config_hash(config)
        assert load_config_json(store.directory)['layer']['r'] == 0.2

    def test_verbatim_config_text(self, tmp_path, config):
        """Test the original file text is echoed when given"""
        store = ResultStore(tmp_path, config, config_text="# original\nlayer.r=0.2\n")
        store.write_config()
        assert (store.directory / 'config.cfg').read_text().startswith("# original")

    def test_tampered_config(self, store):
        """Test CorruptionError after editing config.json"""
        path = store.directory / 'config.json'
        path.write_text(path.read_text().replace('0.2', '0.3'))
        with pytest.raises(CorruptionError):
            verify_directory(store.directory)

    def test_missing_hash(self, store):
        """Test CorruptionError for an incomplete directory"""
        (store.directory / 'config.sha256').unlink()
        with pytest.raises(CorruptionError):
            load_rows(store.directory)

    def test_rows_round_trip(self, store):
        """Test rows reload from a verified directory"""
        rows = [
            {'eps': 0.1, 'status': 'ok', 'exit_time': 12.5, 'censored': False},
            {'eps': 0.05, 'status': 'censored', 'exit_time': np.nan, 'censored': True},
        ]
        store.write_rows(rows)
        frame = load_rows(store.directory)
        assert list(frame['eps']) == [0.1, 0.05]
        assert frame['exit_time'].isna().tolist() == [False, True]
        assert list(frame['status']) == ['ok', 'censored']

    def test_ledger_and_snapshot_names(self, store):
        """Test per-eps file names"""
        frame = pd.DataFrame({'t': [0.0, 1.0], 'E': [2.0, 1.5]})
        assert store.write_ledger(0.05, frame).name == 'ledger_eps_0.05.csv'
        assert store.write_snapshots(0.05, frame).parent.name == 'snapshots'

    def test_metric_table_and_paths(self, store):
        """Test the table layout and one path file per pair"""
        values = np.array([[0.0, 0.9428], [0.9428, 0.0]])
        path = PathPolyline(np.array([[-1.0], [0.0], [1.0]]))
        out = store.write_metric_table(values, {(0, 1): path})
        table = read_csv(out)
        assert list(table.columns) == ['well', 'z_0', 'z_1']
        assert table['z_1'][0] == 0.9428
        written = read_csv(store.directory / 'paths' / 'path_0_1.csv')
        assert list(written.columns) == ['s', 'u_1']
        assert len(written) == 3
