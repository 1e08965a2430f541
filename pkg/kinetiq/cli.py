"""Command-line interface.

Every command writes a run folder ``{data}/{date}/#{counter}_{command}_{time}``
holding ``invocation.json``, ``run.log`` and the command outputs. The folder
is staged with a ``.partial`` suffix and only renamed once the command
succeeded; failed commands remove it.

Exit codes: 0 on success, 2 for usage and input errors, 3 for runtime
failures.
"""
from typing import List, Sequence
import argparse
import csv
import json
import logging
import os
import platform
import sys

import numpy as np

import kinetiq
from kinetiq.analysis.gait_cycles import segment_gait_cycles
from kinetiq.analysis.metrics import (EvaluationConfig, MetricReport,
                                      aggregate_reports, compute_metrics)
from kinetiq.data.synthesis import MOTION_KINDS, MotionSpec, synth_trial
from kinetiq.data.trials import ingest, ingest_with_report, write_trial
from kinetiq.errors import (ConfigError, InvalidInputError, KinetiqError,
                            LayoutMismatchError, TrainingDivergedError,
                            TrialRejectedError)
from kinetiq.model.body import load_template, scale_body
from kinetiq.network import (Estimator, InputLayout, load_checkpoint,
                             measure_step_latency)
from kinetiq.tools.config import DictConfig, load_config_file, update_dict
from kinetiq.tools.data_tools import (create_run_folder, discard_run_folder,
                                      finalize_run_folder, file_sha256, write_manifest)
from kinetiq.tools.plot_tools import emit_cycle_plots, emit_stick_figure
from kinetiq.training.ablation import GRIDS, run_ablation
from kinetiq.training.inference import infer_trial, load_predictions, save_predictions
from kinetiq.training.placement import optimize_placement
from kinetiq.training.training import TrainConfig, finetune, train

__all__ = ['main', 'build_parser', 'load_run_config', 'EXIT_OK',
           'EXIT_INPUT_ERROR', 'EXIT_RUNTIME_ERROR']

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_RUNTIME_ERROR = 3

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


def load_run_config(filepath: str = None, overrides: Sequence[str] = ()) -> dict:
    """Packaged defaults, merged with a config file and ``key=value`` overrides.

    Override values are parsed as JSON when possible, so ``training.steps=10``
    sets an int and ``contact.two_point=true`` a bool. Dotted keys address
    nested entries.

    Raises:
        ConfigError: Malformed file or override.
        FileNotFoundError: Config file does not exist.
    """
    config = kinetiq.load_default_config()
    if filepath is not None:
        if not os.path.exists(filepath):
            raise FileNotFoundError(f'Config file {filepath} does not exist')
        loaded = load_config_file(filepath)
        if not isinstance(loaded, dict):
            raise ConfigError(f'Config file {filepath} must hold a JSON object')
        update_dict(config, loaded)
    DictConfig.signal.connect(_log_config_change)
    try:
        for override in overrides:
            if '=' not in override:
                raise ConfigError(f'Override {override} must have the form key=value')
            key, value = override.split('=', 1)
            try:
                value = json.loads(value)
            except json.JSONDecodeError:
                pass
            config[key.strip()] = value
    finally:
        DictConfig.signal.disconnect(_log_config_change)
    return config.to_dict()


def _log_config_change(sender, value=None):
    logger.info(f'Config override {sender} = {value!r}')


def _train_config(settings: dict) -> TrainConfig:
    return TrainConfig.from_config(settings)


def _cache_dir(args) -> str:
    return kinetiq.get_cache_folder(args.cache_dir, args.data_dir)


def _records(path: str):
    records = ingest(path)
    if not records:
        raise InvalidInputError(f'No valid trials in {path}')
    return records


def _cmd_synth(args, settings: dict, run_folder: str) -> dict:
    kwargs = {}
    if args.duration is not None:
        kwargs['duration'] = args.duration
    spec = MotionSpec.from_name(args.spec, **kwargs)
    if args.mirror:
        spec = spec.mirrored()
    if (args.height is None) != (args.mass is None):
        raise InvalidInputError('--height and --mass must be given together')
    template = load_template()
    body = template if args.height is None else scale_body(args.height, args.mass, template)
    config = _train_config(settings)
    folder = os.path.join(run_folder, 'trials')
    hashes = {}
    for seed in range(args.seed, args.seed + args.count):
        name = f'{spec.kind}{"_mirrored" if spec.mirror else ""}_{seed:03}'
        record = synth_trial(spec, body=body, noise=args.noise, seed=seed,
                             contact=config.contact, gravity=config.gravity, name=name)
        csv_path = write_trial(record, folder)
        hashes[name] = file_sha256(csv_path)
        logger.info(f'Synthesized trial {name} ({len(record)} samples)')
    return {'spec': spec.to_dict(), 'trials': hashes}


def _cmd_ingest(args, settings: dict, run_folder: str) -> dict:
    records, rejections = ingest_with_report(args.path, args.format)
    folder = os.path.join(run_folder, 'trials')
    for record in records:
        write_trial(record, folder)
    report = {'accepted': [record.name for record in records],
              'rejected': {e.trial: e.reasons for e in rejections}}
    with open(os.path.join(run_folder, 'ingest.json'), 'w') as f:
        json.dump(report, f, indent=4)
    return report


def _cmd_train(args, settings: dict, run_folder: str) -> dict:
    checkpoint = load_checkpoint(args.checkpoint) if args.checkpoint else None
    trainer = train(_train_config(settings), _records(args.data), run_folder=run_folder,
                    cache_dir=_cache_dir(args),
                    checkpoint=checkpoint, steps=args.steps)
    return {'steps': trainer.step_count}


def _cmd_finetune(args, settings: dict, run_folder: str) -> dict:
    trainer = finetune(_train_config(settings), _records(args.data),
                       load_checkpoint(args.checkpoint), multiplier=args.multiplier,
                       run_folder=run_folder,
                       cache_dir=_cache_dir(args),
                       steps=args.steps)
    return {'steps': trainer.step_count}


def _cmd_optimize_placement(args, settings: dict, run_folder: str) -> dict:
    placement_settings = dict(settings.get('placement', {}))
    if args.steps is not None:
        placement_settings['steps'] = args.steps
    result = optimize_placement(load_checkpoint(args.checkpoint), _records(args.data),
                                config=_train_config(settings), sensors=args.sensors,
                                run_folder=run_folder,
                                cache_dir=_cache_dir(args),
                                **placement_settings)
    summary = {'placement': result.placement.to_dict(),
               'initial': result.initial.to_dict(),
               'shift': result.shift(),
               'projected': result.projected}
    write_manifest(run_folder, summary, filename='placement.json')
    return {'projected': result.projected}


def _cmd_infer(args, settings: dict, run_folder: str) -> dict:
    checkpoint = load_checkpoint(args.checkpoint)
    config = _train_config(settings)
    estimates = [infer_trial(checkpoint, record, config, streaming=args.streaming)
                 for record in _records(args.data)]
    save_predictions(os.path.join(run_folder, 'predictions.h5'), estimates,
                     metadata={'checkpoint': os.path.abspath(args.checkpoint),
                               'streaming': args.streaming})
    return {'trials': [estimate.name for estimate in estimates]}


def _write_reports(run_folder: str, reports: List[MetricReport]):
    with open(os.path.join(run_folder, 'report.json'), 'w') as f:
        json.dump([report.to_dict() for report in reports], f, indent=4)
    with open(os.path.join(run_folder, 'metrics.csv'), 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=['trial'] + MetricReport.metric_names())
        writer.writeheader()
        for report in reports:
            writer.writerow({'trial': report.name, **report.metrics()})


def _cmd_eval(args, settings: dict, run_folder: str) -> dict:
    evaluation = EvaluationConfig.from_config(settings.get('evaluation', {}))
    references = {record.name: record for record in _records(args.ref)}
    reports = []
    for estimate in load_predictions(args.pred):
        record = references.get(estimate.name)
        if record is None:
            logger.warning(f'No reference trial for estimate {estimate.name}')
            continue
        body = estimate.body or scale_body(record.height, record.mass, load_template())
        report = compute_metrics(estimate.streams, record.references, body,
                                 estimate.dt, estimate.name, evaluation)
        reports.append(report)
        logger.info(str(report))
        if args.plots:
            _plot_trial(estimate, record, body, evaluation,
                        os.path.join(run_folder, 'figures', estimate.name))
    if not reports:
        raise InvalidInputError('No estimate matched a reference trial')
    aggregate = aggregate_reports(reports)
    logger.info(str(aggregate))
    _write_reports(run_folder, reports + [aggregate])
    return {'trials': len(reports)}


def _plot_trial(estimate, record, body, evaluation: EvaluationConfig, folder: str):
    emit_stick_figure(estimate['q'], body, os.path.join(folder, 'stick_figure.svg'),
                      dt=estimate.dt, grf=estimate['grf'], config=evaluation)
    streams = ['q', 'tau', 'grf']
    cycles = segment_gait_cycles({key: estimate[key] for key in streams},
                                 estimate['grf'][:, :, 1], estimate.dt,
                                 threshold=evaluation.foot_strike_threshold,
                                 hysteresis=evaluation.hysteresis,
                                 samples=evaluation.cycle_samples)
    ref_streams = {key: record.references[key] for key in streams
                   if key in record.references
                   and len(record.references[key]) == len(estimate)}
    reference = segment_gait_cycles(ref_streams, estimate['grf'][:, :, 1], estimate.dt,
                                    samples=evaluation.cycle_samples,
                                    boundaries=cycles.boundaries)
    emit_cycle_plots(cycles, folder, reference=reference)


def _cmd_ablate(args, settings: dict, run_folder: str) -> dict:
    evaluation_records = _records(args.eval_data) if args.eval_data else ()
    evaluation = EvaluationConfig.from_config(settings.get('evaluation', {}))
    runs = run_ablation(settings, args.grid, _records(args.data), evaluation_records,
                        run_folder=run_folder, steps=args.steps, variants=args.variants,
                        cache_dir=_cache_dir(args),
                        evaluation=evaluation)
    return {'variants': [run.name for run in runs]}


def _cmd_bench_latency(args, settings: dict, run_folder: str) -> dict:
    latency = dict(settings.get('latency', {}))
    if args.checkpoint:
        estimator = load_checkpoint(args.checkpoint).estimator
    else:
        estimator = Estimator(_train_config(settings).network, InputLayout().n_inputs)
    repeats = args.repeats or int(latency.get('repeats', 1000))
    summary = measure_step_latency(estimator, repeats=repeats,
                                   warmup=int(latency.get('warmup', 50)))
    target = float(latency.get('target_ms', 3.5))
    tolerance = float(latency.get('tolerance', 2.))
    summary.update(target_ms=target, tolerance=tolerance,
                   network=estimator.config.to_dict(),
                   machine=platform.machine(), processor=platform.processor(),
                   cpu_count=os.cpu_count(), python=platform.python_version(),
                   numpy=np.__version__)
    summary['within_target'] = summary['median_ms'] <= target
    summary['within_tolerance'] = summary['median_ms'] <= target * tolerance
    if not summary['within_target']:
        logger.warning(f'Median step latency {summary["median_ms"]:.3f} ms exceeds '
                       f'the {target} ms target on {platform.processor() or "unknown CPU"}')
    write_manifest(run_folder, summary, filename='latency.json')
    return summary


COMMANDS = {
    'synth': _cmd_synth,
    'ingest': _cmd_ingest,
    'train': _cmd_train,
    'finetune': _cmd_finetune,
    'optimize-placement': _cmd_optimize_placement,
    'infer': _cmd_infer,
    'eval': _cmd_eval,
    'ablate': _cmd_ablate,
    'bench-latency': _cmd_bench_latency,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='kinetiq',
        description='Self-supervised physics-informed estimation of sagittal-plane '
                    'dynamics from IMU signals.')
    parser.add_argument('--version', action='version',
                        version=f'%(prog)s {kinetiq.__version__}')
    parser.add_argument('--log-level', default='INFO',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
                        help='Console log level. run.log always receives DEBUG.')
    parser.add_argument('--config', help='JSON run config merged onto the defaults.')
    parser.add_argument('--set', dest='overrides', action='append', default=[],
                        metavar='KEY=VALUE',
                        help='Config override, e.g. losses.weights.kane=6. Repeatable.')
    parser.add_argument('--data-dir', help='Folder receiving run folders '
                                           f'(default ${kinetiq.data_env_var} or ./runs).')
    parser.add_argument('--cache-dir', help='Foot speed cache folder '
                                            f'(default ${kinetiq.cache_env_var}).')
    subparsers = parser.add_subparsers(dest='command', required=True)

    synth = subparsers.add_parser('synth', help='Generate synthetic trials.')
    synth.add_argument('--spec', default='gait', choices=MOTION_KINDS)
    synth.add_argument('--seed', type=int, default=0)
    synth.add_argument('--count', type=int, default=1, help='Trials, one per seed.')
    synth.add_argument('--noise', type=float, default=0.,
                       help='Relative IMU noise level.')
    synth.add_argument('--duration', type=float, help='Trial duration (s).')
    synth.add_argument('--mirror', action='store_true', help='Swap left and right.')
    synth.add_argument('--height', type=float, help='Subject height (m).')
    synth.add_argument('--mass', type=float, help='Subject mass (kg).')

    ingest_parser = subparsers.add_parser('ingest', help='Validate and resample trials.')
    ingest_parser.add_argument('path', help='Trial CSV file or folder.')
    ingest_parser.add_argument('--format', default='csv', choices=['csv'])

    for name, help_text in [('train', 'Train the estimator.'),
                            ('finetune', 'Fine-tune with emphasized physics losses.'),
                            ('optimize-placement', 'Calibrate sensor placement.'),
                            ('infer', 'Run a trained estimator on trials.')]:
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument('--data', required=True, help='Trial CSV file or folder.')
        sub.add_argument('--checkpoint', required=name != 'train',
                         help='Checkpoint file.')
        if name != 'infer':
            sub.add_argument('--steps', type=int, help='Overrides the configured steps.')
        if name == 'finetune':
            sub.add_argument('--multiplier', type=float,
                             help='Physics weight multiplier.')
        elif name == 'optimize-placement':
            sub.add_argument('--sensors', nargs='+', help='Sensors to calibrate.')
        elif name == 'infer':
            sub.add_argument('--streaming', action='store_true',
                             help='Feed one sample at a time.')

    eval_parser = subparsers.add_parser('eval', help='Compare estimates to references.')
    eval_parser.add_argument('--pred', required=True, help='predictions.h5 file.')
    eval_parser.add_argument('--ref', required=True, help='Reference trial folder.')
    eval_parser.add_argument('--plots', action='store_true',
                             help='Emit stick figures and gait cycle plots.')

    ablate = subparsers.add_parser('ablate', help='Train and evaluate a config grid.')
    ablate.add_argument('--grid', required=True, choices=list(GRIDS))
    ablate.add_argument('--data', required=True, help='Training trials.')
    ablate.add_argument('--eval-data', help='Held-out trials with references.')
    ablate.add_argument('--steps', type=int, help='Training steps per variant.')
    ablate.add_argument('--variants', nargs='+', help='Restrict to these variants.')

    bench = subparsers.add_parser('bench-latency',
                                  help='Measure single-step streaming latency.')
    bench.add_argument('--checkpoint', help='Checkpoint, a fresh network otherwise.')
    bench.add_argument('--repeats', type=int)
    return parser


def _configure_console(level: str):
    root = logging.getLogger()
    root.setLevel(logging.DEBUG)
    handler = logging.StreamHandler(sys.stderr)
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    return handler


def main(argv: Sequence[str] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_INPUT_ERROR

    console = _configure_console(args.log_level)
    root = logging.getLogger()
    run_folder = file_handler = None
    keep_folder = False
    try:
        settings = load_run_config(args.config, args.overrides)
        run_folder = create_run_folder(args.command.replace('-', '_'),
                                       kinetiq.get_data_folder(args.data_dir))
        file_handler = logging.FileHandler(os.path.join(run_folder, 'run.log'))
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(file_handler)
        write_manifest(run_folder, {'command': args.command,
                                    'argv': list(sys.argv[1:] if argv is None else argv),
                                    'code_version': kinetiq.__version__,
                                    'config': settings},
                       filename='invocation.json')

        summary = COMMANDS[args.command](args, settings, run_folder)
        write_manifest(run_folder, summary or {}, filename='summary.json')
        root.removeHandler(file_handler)
        file_handler.close()
        file_handler = None
        final = finalize_run_folder(run_folder)
        print(final)
        return EXIT_OK
    except (ConfigError, InvalidInputError, TrialRejectedError, LayoutMismatchError,
            FileNotFoundError) as e:
        logger.error(str(e))
        code = EXIT_INPUT_ERROR
    except TrainingDivergedError as e:
        # Staging folder holds the last finite checkpoint
        logger.error(str(e))
        keep_folder = e.checkpoint_path is not None
        code = EXIT_RUNTIME_ERROR
    except KinetiqError as e:
        logger.error(str(e))
        code = EXIT_RUNTIME_ERROR
    except Exception:
        logger.exception(f'Command {args.command} failed')
        code = EXIT_RUNTIME_ERROR
    finally:
        if file_handler is not None:
            root.removeHandler(file_handler)
            file_handler.close()
        root.removeHandler(console)
    if run_folder is not None and not keep_folder:
        discard_run_folder(run_folder)
    return code


if __name__ == '__main__':
    sys.exit(main())
