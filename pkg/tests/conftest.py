import json

import numpy as np
import pytest

from amplab.operators import build_laplacian, build_rank_one, BoundaryCondition


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def rank_one():
    return build_rank_one(64)


@pytest.fixture
def robin_1d():
    return build_laplacian(1, 60, BoundaryCondition.robin(1.0))


@pytest.fixture
def neumann_1d():
    return build_laplacian(1, 50, BoundaryCondition.neumann())


@pytest.fixture
def tmp_config(tmp_path, monkeypatch):
    """Config file that keeps outputs and logs inside tmp_path"""
    monkeypatch.delenv('AMPLAB_OUT_DIR', raising=False)
    path = tmp_path / 'config.json'
    path.write_text(json.dumps({
        'output': {'directory': str(tmp_path / 'runs')},
        'logging': {'level': 'WARNING', 'file': str(tmp_path / 'logs' / 'amplab.log')},
        'run': {'jobs': 1, 'seed': 0},
    }))
    return path
