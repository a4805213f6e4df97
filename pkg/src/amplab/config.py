"""
Configuration Module for Amplab
Loads the JSON configuration file and describes experiments
"""

import os
import json
import hashlib
import logging
from dataclasses import dataclass, field, asdict
from typing import Optional, Dict, Any, List

from .errors import ConfigError

# Get logger
logger = logging.getLogger('Amplab')

# --- Constants ---
PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
DEFAULT_CONFIG_PATH = os.path.join(PROJECT_ROOT, 'config', 'config.json')
DEFAULT_OUT_DIR = os.path.join(PROJECT_ROOT, 'runs')
OUT_DIR_ENV = 'AMPLAB_OUT_DIR'

DEFAULT_DENSE_CAP = 4096
DEFAULT_TOL_REL = 1e-9
DEFAULT_TOL_ABS = 0.0
DEFAULT_MAX_ITER = 500
DEFAULT_JOBS = 1
DEFAULT_SEED = 0
DEFAULT_LOG_LEVEL = 'INFO'

EXPERIMENT_KINDS = (
    'window_scan',
    'threshold_study',
    'concentration_study',
    'equivalence_suite',
    'smoothing_study',
    'covering_search',
    'expansion_check',
    'domination_index',
    'transfer_check',
)


@dataclass
class NumericSettings:
    """Numerical knobs shared by every experiment"""
    dense_cap: int = DEFAULT_DENSE_CAP
    tol_rel: float = DEFAULT_TOL_REL
    tol_abs: float = DEFAULT_TOL_ABS
    max_iter: int = DEFAULT_MAX_ITER

    def __post_init__(self):
        if self.dense_cap < 1:
            raise ConfigError(f"dense_cap must be positive, got {self.dense_cap}")
        if self.tol_rel < 0 or self.tol_abs < 0 or (self.tol_rel == 0 and self.tol_abs == 0):
            raise ConfigError(f"Invalid tolerances rel={self.tol_rel} abs={self.tol_abs}")

    @classmethod
    def from_config(cls, config):
        numerics = config.get('numerics', {})
        return cls(
            dense_cap=int(numerics.get('dense_cap', DEFAULT_DENSE_CAP)),
            tol_rel=float(numerics.get('tol_rel', DEFAULT_TOL_REL)),
            tol_abs=float(numerics.get('tol_abs', DEFAULT_TOL_ABS)),
            max_iter=int(numerics.get('max_iter', DEFAULT_MAX_ITER)),
        )


@dataclass
class ExperimentSpec:
    """One experiment: what to run, on which operator, with which ladders"""
    kind: str
    name: str = ''
    family: Optional[str] = None
    params: Dict[str, Any] = field(default_factory=dict)
    mesh: List[int] = field(default_factory=list)
    p: List[float] = field(default_factory=list)
    ladder: Dict[str, Any] = field(default_factory=dict)
    f_gen: Dict[str, Any] = field(default_factory=dict)
    tol_rel: float = DEFAULT_TOL_REL
    tol_abs: float = DEFAULT_TOL_ABS
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"Unknown experiment kind '{self.kind}'; expected one of {', '.join(EXPERIMENT_KINDS)}")
        if not self.name:
            self.name = self.kind

    @classmethod
    def from_dict(cls, data):
        if 'kind' not in data:
            raise ConfigError(f"Experiment entry without 'kind': {data}")
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown experiment fields: {', '.join(sorted(unknown))}")
        return cls(**data)

    def to_dict(self):
        return asdict(self)

    def canonical_json(self):
        """Key-sorted compact JSON used for hashing"""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))

    def digest(self, settings=None):
        """Record key: the experiment entry, plus the numeric settings it runs under when given"""
        payload = self.canonical_json()
        if settings is not None:
            payload += '|' + json.dumps(asdict(settings), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(payload.encode('utf-8')).hexdigest()[:16]


def load_config(path=None, required=False):
    """Load configuration from config file

    Without an explicit path the default config/config.json is used; a missing
    default file falls back to built-in defaults unless required is set.
    """
    config_path = path or DEFAULT_CONFIG_PATH
    try:
        with open(config_path, 'r') as f:
            config = json.load(f)
    except FileNotFoundError:
        if path is not None or required:
            raise ConfigError(f"Configuration file not found at {config_path}\n"
                              "Please copy config/config.example.json to config/config.json and update with your settings.")
        logger.warning(f"No configuration at {config_path}, using defaults")
        config = {}
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid JSON in configuration file: {e}")

    if not isinstance(config, dict):
        raise ConfigError(f"Configuration root must be an object, got {type(config).__name__}")
    return config


def output_directory(config, override=None):
    """Resolve the output directory: flag, then environment, then config"""
    if override:
        return override
    env_dir = os.environ.get(OUT_DIR_ENV)
    if env_dir:
        return env_dir
    return config.get('output', {}).get('directory', DEFAULT_OUT_DIR)


def experiments_from_config(config):
    entries = config.get('experiments', [])
    if not isinstance(entries, list):
        raise ConfigError("'experiments' must be a list")
    return [ExperimentSpec.from_dict(entry) for entry in entries]
