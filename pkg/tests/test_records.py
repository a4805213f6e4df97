import json
import os

import numpy as np
import pytest

from amplab import __version__
from amplab.config import ExperimentSpec, NumericSettings
from amplab.records import (TableData, RunRecord, RecordStore, CSV_SCHEMAS, write_table, read_table,
                            load_record, emit_report)


def _record(kind='window_scan'):
    spec = ExperimentSpec(kind=kind, name='demo', family='rank_one', params={'n': 8})
    record = RunRecord(spec=spec.to_dict())
    record.steps.append({'lambda0': np.float64(0.0), 'widths': np.array([0.5, 0.25])})
    record.tables['window'] = TableData(['offset', 'lambda', 'verdict', 'margin', 'c_value'],
                                        [[0.25, -0.25, 'pass', np.float64(0.1), 1.0]])
    record.verdicts['window_nonempty'] = np.bool_(True)
    return spec, record


def test_table_cells_keep_their_types(tmp_path):
    table = TableData(['n', 'h', 'verdict', 'flag'], [[25, 1 / 24, 'robust', True], [50, 0.1, 'degenerate', False]])
    path = tmp_path / 'table.csv'
    write_table(str(path), table)
    loaded = read_table(str(path))
    assert loaded.columns == table.columns
    assert loaded.rows == table.rows
    assert isinstance(loaded.rows[0][0], int)


def test_write_table_creates_directories(tmp_path):
    path = tmp_path / 'nested' / 'deeper' / 'table.csv'
    write_table(str(path), TableData(['a'], [[1]]))
    assert path.exists()
    assert not [name for name in os.listdir(path.parent) if name.endswith('.tmp')]


def test_read_empty_table(tmp_path):
    path = tmp_path / 'empty.csv'
    path.write_text('')
    assert read_table(str(path)).columns == []


def test_record_serializes_numpy_values():
    _, record = _record()
    data = json.loads(json.dumps(record.to_dict()))
    assert data['version'] == __version__
    assert data['steps'][0]['widths'] == [0.5, 0.25]
    assert data['verdicts'] == {'window_nonempty': True}
    assert record.kind == 'window_scan'
    assert record.passed


def test_record_store_round_trip(tmp_path):
    spec, record = _record()
    store = RecordStore(str(tmp_path))
    assert store.load(spec) is None
    path = store.save(record, spec)
    assert path == os.path.join(str(tmp_path), spec.digest(), 'record.json')

    loaded = store.load(spec)
    assert loaded.spec == spec.to_dict()
    assert loaded.tables['window'].column('verdict') == ['pass']
    assert loaded.verdicts == {'window_nonempty': True}
    assert load_record(path).to_dict() == loaded.to_dict()


def test_failing_verdict_fails_record():
    _, record = _record()
    record.verdicts['extra'] = False
    assert not record.passed


def test_emit_csv_fills_missing_schema_tables(tmp_path):
    spec = ExperimentSpec(kind='threshold_study')
    record = RunRecord(spec=spec.to_dict())
    paths = emit_report(record, 'csv', str(tmp_path))
    assert [os.path.basename(path) for path in paths] == ['threshold.csv']
    assert read_table(paths[0]).columns == CSV_SCHEMAS['threshold_study']['threshold']


def test_emit_run_record(tmp_path):
    _, record = _record()
    paths = emit_report(record, 'run-record', str(tmp_path))
    assert paths == [os.path.join(str(tmp_path), 'record.json')]
    assert load_record(paths[0]).verdicts == {'window_nonempty': True}


def test_emit_rejects_unknown_format(tmp_path):
    _, record = _record()
    with pytest.raises(ValueError):
        emit_report(record, 'xlsx', str(tmp_path))


def test_record_store_refuses_other_settings(tmp_path):
    spec, record = _record()
    settings = NumericSettings(dense_cap=16)
    record.numerics = {'dense_cap': 16, 'tol_rel': 1e-9, 'tol_abs': 0.0, 'max_iter': 500}
    store = RecordStore(str(tmp_path))
    store.save(record, spec, settings)
    assert store.load(spec, settings).numerics == record.numerics
    assert store.load(spec, NumericSettings(dense_cap=32)) is None
    assert store.load(spec) is None

    # a record whose stored settings disagree with its key is not served
    record.numerics = dict(record.numerics, max_iter=7)
    store.save(record, spec, settings)
    assert store.load(spec, settings) is None
