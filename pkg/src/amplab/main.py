#!/usr/bin/env python3
"""
Amplab - A Numerical Laboratory for Individual Maximum Principles
Command line entry point
"""

import os
import sys
import json
import logging
import argparse

from . import __version__
from .config import (PROJECT_ROOT, DEFAULT_LOG_LEVEL, DEFAULT_JOBS, DEFAULT_SEED, NumericSettings,
                     ExperimentSpec, load_config, output_directory, experiments_from_config)
from .cone import ConeTolerance
from .errors import (AmplabError, ConfigError, DomainError, ValidationError, SolverError, FitError,
                     NumericalRankError)
from .jobs import run_specs
from .operators import FAMILIES, build_from_params, save_triplets
from .presets import PresetManager
from .records import RecordStore, emit_report, load_record
from .spectral import check_spectral_assumption, leading_eigenpair

# Get logger
logger = logging.getLogger('Amplab')

# --- Exit codes ---
EXIT_OK = 0
EXIT_VERDICT = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

DEFAULT_LOG_FILE = os.path.join(PROJECT_ROOT, 'logs', 'amplab.log')


def setup_logging(level=DEFAULT_LOG_LEVEL, log_file=None):
    """Log to logs/amplab.log and the console"""
    log_file = log_file or DEFAULT_LOG_FILE
    os.makedirs(os.path.dirname(os.path.abspath(log_file)), exist_ok=True)
    numeric_level = getattr(logging, str(level).upper(), None)
    if not isinstance(numeric_level, int):
        raise ConfigError(f"Unknown log level '{level}'")

    logging.basicConfig(
        level=numeric_level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler()
        ],
        force=True
    )


# --- Argument types ---

def int_list(text):
    try:
        return [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def float_list(text):
    try:
        return [float(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _params(args):
    try:
        params = json.loads(args.params) if args.params else {}
    except json.JSONDecodeError as e:
        raise ConfigError(f"--params is not valid JSON: {e}")
    if not isinstance(params, dict):
        raise ConfigError("--params must be a JSON object")
    if getattr(args, 'n', None) is not None:
        params['n'] = args.n
    return params


def _settings(args, config):
    settings = NumericSettings.from_config(config)
    if args.dense_cap is not None:
        settings.dense_cap = args.dense_cap
    if args.tol_rel is not None:
        settings.tol_rel = args.tol_rel
    settings.__post_init__()
    return settings


def _seed(args, config):
    return args.seed if args.seed is not None else int(config.get('run', {}).get('seed', DEFAULT_SEED))


def _spec(args, config, kind, **fields):
    settings = _settings(args, config)
    return ExperimentSpec(kind=kind, tol_rel=settings.tol_rel, tol_abs=settings.tol_abs,
                          seed=_seed(args, config), **fields)


def _run_and_emit(spec, args, config):
    """Run one spec through the record store and write its CSV tables next to the record"""
    settings = _settings(args, config)
    store = RecordStore(output_directory(config, args.out))
    record = run_specs([spec], settings, store, force=args.force)[0]
    paths = emit_report(record, 'csv', os.path.dirname(store.path_for(spec, settings)))
    for path in paths:
        print(path)
    for name, verdict in record.verdicts.items():
        logger.info(f"{spec.name}: {name} = {verdict}")
    return EXIT_OK if record.passed else EXIT_VERDICT


# --- Commands ---

def cmd_build_op(args, config):
    operator = build_from_params(args.family, _params(args))
    path = args.output or os.path.join(output_directory(config, args.out),
                                       f"{args.family}-{operator.side}.triplets")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    save_triplets(operator, path)
    print(path)
    return EXIT_OK


def cmd_spectral_check(args, config):
    settings = _settings(args, config)
    operator = build_from_params(args.family, _params(args))
    tol = ConeTolerance(rel=settings.tol_rel, abs=settings.tol_abs)
    report = leading_eigenpair(operator, dense_cap=settings.dense_cap, tol=tol, max_iter=settings.max_iter)
    verdict = check_spectral_assumption(operator, tol=tol, report=report)
    summary = dict(report.to_dict(), simple=verdict.simple, v_dominates_u=verdict.v_dominates_u.holds,
                   phi_strictly_positive=verdict.phi_strictly_positive.holds, overall=verdict.overall)
    print(json.dumps(summary, indent=2))
    return EXIT_OK if verdict.overall else EXIT_VERDICT


def cmd_scan_window(args, config):
    ladder = {'side': args.side, 'mode': args.mode, 'per_octave': args.per_octave}
    if args.count is not None:
        ladder['count'] = args.count
    spec = _spec(args, config, 'window_scan', family=args.family, params=_params(args), ladder=ladder,
                 f_gen={'kind': args.f})
    return _run_and_emit(spec, args, config)


def cmd_expansion_check(args, config):
    spec = _spec(args, config, 'expansion_check', params={'count': args.count, 'max_side': args.max_side})
    return _run_and_emit(spec, args, config)


def cmd_smoothing_fit(args, config):
    ladder = {'t_min': args.t_min, 't_max': args.t_max, 'count': args.count}
    spec = _spec(args, config, 'smoothing_study', family=args.family, params=_params(args),
                 p=args.p or [2.0], ladder=ladder)
    return _run_and_emit(spec, args, config)


def cmd_domination_index(args, config):
    if not args.mesh:
        raise ConfigError("domination-index needs --mesh")
    ladder = {'mode': args.mode, 'n_max': args.n_max}
    if args.sigma is not None:
        ladder['sigma'] = args.sigma
    if args.expect:
        ladder['expect'] = args.expect
    spec = _spec(args, config, 'domination_index', family=args.family, params=_params(args),
                 mesh=args.mesh, p=args.p or [2.0], ladder=ladder)
    return _run_and_emit(spec, args, config)


def cmd_run(args, config):
    specs = experiments_from_config(config)
    manager = PresetManager()
    specs.extend(manager.get_preset(name) for name in args.preset or [])
    if not specs:
        raise ConfigError("Nothing to run: no 'experiments' in the config and no --preset given")

    settings = _settings(args, config)
    jobs = args.jobs if args.jobs is not None else int(config.get('run', {}).get('jobs', DEFAULT_JOBS))
    store = RecordStore(output_directory(config, args.out))
    records = run_specs(specs, settings, store, force=args.force, max_workers=jobs)

    failed = []
    for spec, record in zip(specs, records):
        emit_report(record, 'csv', os.path.dirname(store.path_for(spec, settings)))
        status = 'passed' if record.passed else 'FAILED'
        print(f"{spec.name}: {status} ({store.path_for(spec, settings)})")
        if not record.passed:
            failed.append(spec.name)
    if failed:
        logger.warning(f"Verdict failures: {', '.join(failed)}")
        return EXIT_VERDICT
    return EXIT_OK


def cmd_report(args, config):
    try:
        record = load_record(args.record)
    except (OSError, ValueError, KeyError) as e:
        raise ConfigError(f"Cannot read run record {args.record}: {e}")
    out_dir = args.out or os.path.dirname(os.path.abspath(args.record))
    for path in emit_report(record, args.format, out_dir):
        print(path)
    return EXIT_OK


def cmd_presets(args, config):
    manager = PresetManager()
    for preset_id, name, description in manager.get_preset_list():
        print(f"{preset_id:28} {name}")
        if description:
            print(f"{'':28} {description}")
    return EXIT_OK


# --- Parser ---

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='configuration file (default: config/config.json)')
    common.add_argument('--out', help='output directory (overrides $AMPLAB_OUT_DIR and output.directory)')
    common.add_argument('--seed', type=int, help='random seed')
    common.add_argument('--tol-rel', type=float, help='relative cone tolerance')
    common.add_argument('--dense-cap', type=int, help='largest side solved with dense linear algebra')
    common.add_argument('--jobs', type=int, help='worker threads for independent experiments')
    common.add_argument('--log-level', help='DEBUG, INFO, WARNING or ERROR')
    common.add_argument('--log-file', help='log file (default: logs/amplab.log)')
    common.add_argument('--force', action='store_true', help='ignore cached run records')

    operator_args = argparse.ArgumentParser(add_help=False)
    operator_args.add_argument('--family', required=True, choices=FAMILIES)
    operator_args.add_argument('--params', help='builder parameters as a JSON object')
    operator_args.add_argument('--n', type=int, help='grid size (overrides params.n)')

    parser = argparse.ArgumentParser(prog='amplab', description='Individual maximum principle laboratory')
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest='command', required=True)

    build_op = commands.add_parser('build-op', parents=[common, operator_args], help='write an operator as triplets')
    build_op.add_argument('--output', help='triplet file path')
    build_op.set_defaults(handler=cmd_build_op)

    spectral = commands.add_parser('spectral-check', parents=[common, operator_args],
                                   help='leading eigenpair and the spectral assumption')
    spectral.set_defaults(handler=cmd_spectral_check)

    scan = commands.add_parser('scan-window', parents=[common, operator_args], help='one-sided window scan')
    scan.add_argument('--side', choices=('left', 'right'), default='right')
    scan.add_argument('--mode', choices=('plain', 'strong'), default='plain')
    scan.add_argument('--f', choices=('ones', 'gaussian', 'bump'), default='ones')
    scan.add_argument('--count', type=int, help='ladder points')
    scan.add_argument('--per-octave', type=int, default=1)
    scan.set_defaults(handler=cmd_scan_window)

    expansion = commands.add_parser('expansion-check', parents=[common], help='multi-point expansion residuals')
    expansion.add_argument('--count', type=int, default=20)
    expansion.add_argument('--max-side', type=int, default=50)
    expansion.set_defaults(handler=cmd_expansion_check)

    smoothing = commands.add_parser('smoothing-fit', parents=[common, operator_args],
                                    help='fit ||e^{tA}||_{p->inf} ~ c t^-q')
    smoothing.add_argument('--p', type=float_list)
    smoothing.add_argument('--t-min', type=float, default=1e-3)
    smoothing.add_argument('--t-max', type=float, default=1e-1)
    smoothing.add_argument('--count', type=int, default=9)
    smoothing.set_defaults(handler=cmd_smoothing_fit)

    domination = commands.add_parser('domination-index', parents=[common, operator_args],
                                     help='mesh-robust resolvent power norms')
    domination.add_argument('--mesh', type=int_list)
    domination.add_argument('--p', type=float_list)
    domination.add_argument('--mode', choices=('explicit', 'probe'), default='explicit')
    domination.add_argument('--sigma', type=float)
    domination.add_argument('--n-max', type=int, default=1)
    domination.add_argument('--expect', choices=('robust', 'degenerate'))
    domination.set_defaults(handler=cmd_domination_index)

    run = commands.add_parser('run', parents=[common], help='run the experiments in the config and presets')
    run.add_argument('--preset', action='append', help='add a named preset (repeatable)')
    run.set_defaults(handler=cmd_run)

    report = commands.add_parser('report', parents=[common], help='re-emit a stored run record')
    report.add_argument('record', help='path to record.json')
    report.add_argument('--format', choices=('csv', 'run-record'), default='csv')
    report.set_defaults(handler=cmd_report)

    presets = commands.add_parser('presets', parents=[common], help='list experiment presets')
    presets.set_defaults(handler=cmd_presets)
    return parser


def cli(argv=None):
    """Parse arguments, run one command and map errors to exit codes"""
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        logging_config = config.get('logging', {})
        setup_logging(args.log_level or logging_config.get('level', DEFAULT_LOG_LEVEL),
                      args.log_file or logging_config.get('file'))
        logger.debug(f"Amplab {__version__}: {args.command}")
        return args.handler(args, config)
    except (ConfigError, DomainError, ValidationError) as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_USAGE
    except (SolverError, FitError, NumericalRankError) as e:
        logger.error(f"{args.command}: numerical failure: {e}")
        return EXIT_NUMERICAL
    except AmplabError as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_NUMERICAL


def main():
    """Main application entry point"""
    sys.exit(cli())


if __name__ == '__main__':
    main()
