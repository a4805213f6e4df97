"""
Records Module for Amplab
Run records, the content-addressed record store and CSV report emission
"""

import os
import re
import csv
import json
import logging
import tempfile
from dataclasses import dataclass, field, asdict
from typing import List, Dict, Any

import numpy as np

from . import __version__

# Get logger
logger = logging.getLogger('Amplab')

WINDOW_COLUMNS = ['offset', 'lambda', 'verdict', 'margin', 'c_value']
TRANSFER_COLUMNS = ['f', 'offset', 'n', 'h', 'c_lambda', 'growth', 'holds']

# One fixed table schema per experiment kind
CSV_SCHEMAS = {
    'window_scan': {'window': WINDOW_COLUMNS},
    'threshold_study': {'threshold': ['d', 'p', 'k', 'verdict', 'growth_exponent']},
    'concentration_study': {'concentration': ['j', 'width']},
    'equivalence_suite': {'suite': ['case', 'kind', 'side', 'passed']},
    'smoothing_study': {'smoothing': ['t', 'norm', 'prediction']},
    'covering_search': {'covering': ['trial', 'planted', 'found', 'agrees']},
    'expansion_check': {'expansion': ['case', 'm', 'residual']},
    'domination_index': {'domination': ['n', 'h', 'norm', 'prediction']},
    'transfer_check': {'transfer': TRANSFER_COLUMNS},
}

_INT_PATTERN = re.compile(r'^-?\d+$')


@dataclass
class TableData:
    columns: List[str]
    rows: List[List[Any]] = field(default_factory=list)

    def column(self, name):
        index = self.columns.index(name)
        return [row[index] for row in self.rows]

    def to_dict(self):
        return {'columns': list(self.columns), 'rows': [[_plain(v) for v in row] for row in self.rows]}

    @classmethod
    def from_dict(cls, data):
        return cls(list(data['columns']), [list(row) for row in data['rows']])


@dataclass
class RunRecord:
    """Snapshot of one experiment run"""
    spec: Dict[str, Any]
    version: str = __version__
    steps: List[Dict[str, Any]] = field(default_factory=list)
    tables: Dict[str, TableData] = field(default_factory=dict)
    verdicts: Dict[str, bool] = field(default_factory=dict)
    wall_clock: float = 0.0
    numerics: Dict[str, Any] = field(default_factory=dict)

    @property
    def kind(self):
        return self.spec.get('kind', '')

    @property
    def passed(self):
        return all(self.verdicts.values())

    def to_dict(self):
        return {
            'spec': self.spec,
            'version': self.version,
            'steps': _plain(self.steps),
            'tables': {name: table.to_dict() for name, table in self.tables.items()},
            'verdicts': {name: bool(value) for name, value in self.verdicts.items()},
            'wall_clock': float(self.wall_clock),
            'numerics': _plain(self.numerics),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            spec=data['spec'],
            version=data.get('version', __version__),
            steps=data.get('steps', []),
            tables={name: TableData.from_dict(table) for name, table in data.get('tables', {}).items()},
            verdicts=data.get('verdicts', {}),
            wall_clock=data.get('wall_clock', 0.0),
            numerics=data.get('numerics', {}),
        )


def _plain(value):
    """Numpy scalars and arrays to JSON/CSV friendly Python values"""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def _format_cell(value):
    value = _plain(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_cell(text):
    if text in ('True', 'False'):
        return text == 'True'
    if _INT_PATTERN.match(text):
        return int(text)
    try:
        return float(text)
    except ValueError:
        return text


def _atomic_write(path, writer):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    handle = tempfile.NamedTemporaryFile('w', dir=directory, delete=False, suffix='.tmp', newline='')
    try:
        with handle:
            writer(handle)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(handle.name, path)
    except BaseException:
        if os.path.exists(handle.name):
            os.remove(handle.name)
        raise


def write_table(path, table):
    """Write a table as CSV; floats keep their full repr"""
    def writer(handle):
        out = csv.writer(handle)
        out.writerow(table.columns)
        for row in table.rows:
            out.writerow([_format_cell(value) for value in row])
    _atomic_write(path, writer)
    logger.debug(f"Wrote {len(table.rows)} rows to {path}")


def read_table(path):
    """Parse a CSV written by write_table back into typed values"""
    with open(path, 'r', newline='') as f:
        reader = csv.reader(f)
        try:
            columns = next(reader)
        except StopIteration:
            return TableData([], [])
        rows = [[_parse_cell(cell) for cell in row] for row in reader]
    return TableData(columns, rows)


class RecordStore:
    """Run records at <root>/<digest of spec and settings>/record.json"""

    def __init__(self, root):
        self.root = root

    def path_for(self, spec, settings=None):
        return os.path.join(self.root, spec.digest(settings), 'record.json')

    def load(self, spec, settings=None):
        path = self.path_for(spec, settings)
        if not os.path.exists(path):
            return None
        with open(path, 'r') as f:
            record = RunRecord.from_dict(json.load(f))
        if settings is not None and record.numerics and record.numerics != _plain(asdict(settings)):
            logger.warning(f"Record {path} was computed under other numeric settings; recomputing")
            return None
        logger.info(f"Cache hit for {spec.name} at {path}")
        return record

    def save(self, record, spec, settings=None):
        path = self.path_for(spec, settings)
        _atomic_write(path, lambda handle: json.dump(record.to_dict(), handle, indent=2, sort_keys=True))
        logger.info(f"Saved run record {path}")
        return path


def load_record(path):
    with open(path, 'r') as f:
        return RunRecord.from_dict(json.load(f))


def emit_report(record, fmt, out_dir):
    """Write the record's tables as CSV, or the record itself as JSON"""
    if fmt == 'run-record':
        path = os.path.join(out_dir, 'record.json')
        _atomic_write(path, lambda handle: json.dump(record.to_dict(), handle, indent=2, sort_keys=True))
        return [path]
    if fmt != 'csv':
        raise ValueError(f"Unknown report format '{fmt}'")

    tables = {name: TableData(list(columns), [])
              for name, columns in CSV_SCHEMAS.get(record.kind, {}).items()}
    tables.update(record.tables)
    paths = []
    for name, table in sorted(tables.items()):
        path = os.path.join(out_dir, f"{name}.csv")
        write_table(path, table)
        paths.append(path)
    logger.info(f"Emitted {len(paths)} CSV file(s) for {record.kind} into {out_dir}")
    return paths
