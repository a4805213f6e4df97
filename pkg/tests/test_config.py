import json
import os
import re

import pytest

import amplab
from amplab import config as config_module
from amplab.config import (NumericSettings, ExperimentSpec, load_config, output_directory,
                           experiments_from_config, OUT_DIR_ENV, DEFAULT_DENSE_CAP)
from amplab.errors import ConfigError


def test_missing_default_config_falls_back(monkeypatch, tmp_path):
    monkeypatch.setattr(config_module, 'DEFAULT_CONFIG_PATH', str(tmp_path / 'absent.json'))
    assert load_config() == {}
    with pytest.raises(ConfigError, match="config.example.json"):
        load_config(required=True)


def test_explicit_missing_config_is_an_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / 'absent.json'))


def test_invalid_config_json(tmp_path):
    path = tmp_path / 'config.json'
    path.write_text('{"output": ')
    with pytest.raises(ConfigError, match="Invalid JSON"):
        load_config(str(path))
    path.write_text('[1, 2]')
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_output_directory_precedence(monkeypatch):
    config = {'output': {'directory': '/from/config'}}
    monkeypatch.delenv(OUT_DIR_ENV, raising=False)
    assert output_directory(config) == '/from/config'
    monkeypatch.setenv(OUT_DIR_ENV, '/from/env')
    assert output_directory(config) == '/from/env'
    assert output_directory(config, '/from/flag') == '/from/flag'


def test_numeric_settings_from_config():
    settings = NumericSettings.from_config({'numerics': {'tol_rel': 1e-6, 'dense_cap': 100}})
    assert settings.tol_rel == 1e-6
    assert settings.dense_cap == 100
    assert NumericSettings.from_config({}).dense_cap == DEFAULT_DENSE_CAP
    with pytest.raises(ConfigError):
        NumericSettings(dense_cap=0)
    with pytest.raises(ConfigError):
        NumericSettings(tol_rel=0.0, tol_abs=0.0)


def test_experiment_spec_validation():
    spec = ExperimentSpec.from_dict({'kind': 'window_scan', 'family': 'rank_one', 'params': {'n': 8}})
    assert spec.name == 'window_scan'
    with pytest.raises(ConfigError, match="Unknown experiment kind"):
        ExperimentSpec.from_dict({'kind': 'benchmark'})
    with pytest.raises(ConfigError, match="without 'kind'"):
        ExperimentSpec.from_dict({'family': 'rank_one'})
    with pytest.raises(ConfigError, match="bogus"):
        ExperimentSpec.from_dict({'kind': 'window_scan', 'bogus': 1})


def test_digest_ignores_key_order():
    first = ExperimentSpec.from_dict({'kind': 'window_scan', 'params': {'a': 1, 'b': 2}})
    second = ExperimentSpec.from_dict({'params': {'b': 2, 'a': 1}, 'kind': 'window_scan'})
    assert first.digest() == second.digest()
    assert json.loads(first.canonical_json())['params'] == {'a': 1, 'b': 2}
    third = ExperimentSpec.from_dict({'kind': 'window_scan', 'params': {'a': 1, 'b': 3}})
    assert third.digest() != first.digest()


def test_digest_covers_numeric_settings():
    spec = ExperimentSpec.from_dict({'kind': 'window_scan'})
    assert spec.digest(NumericSettings()) == spec.digest(NumericSettings())
    assert spec.digest(NumericSettings()) != spec.digest()
    assert spec.digest(NumericSettings(dense_cap=10)) != spec.digest(NumericSettings())
    assert spec.digest(NumericSettings(max_iter=10)) != spec.digest(NumericSettings())


def test_experiments_from_config():
    specs = experiments_from_config({'experiments': [{'kind': 'expansion_check', 'name': 'x'}]})
    assert [spec.name for spec in specs] == ['x']
    assert experiments_from_config({}) == []
    with pytest.raises(ConfigError):
        experiments_from_config({'experiments': {'kind': 'expansion_check'}})


def test_example_config_is_valid():
    config = load_config(os.path.join(config_module.PROJECT_ROOT, 'config', 'config.example.json'))
    assert experiments_from_config(config)
    NumericSettings.from_config(config)


def test_setup_metadata_matches_the_package():
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    with open(os.path.join(root, 'setup.py'), encoding='utf-8') as fh:
        setup_text = fh.read()
    with open(os.path.join(root, 'src', 'amplab', '__init__.py'), encoding='utf-8') as fh:
        metadata = dict(re.findall(r'^__(\w+)__ = "([^"]*)"', fh.read(), re.MULTILINE))
    assert metadata['version'] == amplab.__version__
    assert metadata['author'] == amplab.__author__
    versions = re.findall(r'Programming Language :: Python :: 3\.(\d+)', setup_text)
    minimum = int(re.search(r'python_requires=">=3\.(\d+)"', setup_text).group(1))
    assert min(int(v) for v in versions) == minimum
