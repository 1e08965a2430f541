"""Ablation and loss weight sensitivity grids.

Every variant of a grid is a config override merged on top of a base run
config, so each variant can be reproduced by training with its merged config
alone. `run_ablation` trains every variant into its own subfolder, evaluates
it on held-out trials and writes a summary table.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence
import copy
import csv
import logging
import os

from kinetiq.analysis.metrics import (EvaluationConfig, MetricReport,
                                      aggregate_reports, compute_metrics)
from kinetiq.errors import ConfigError
from kinetiq.tools.config import update_dict
from kinetiq.tools.data_tools import write_manifest
from kinetiq.training.inference import infer_trial
from kinetiq.training.losses import LOSS_TERMS
from kinetiq.training.training import SPARSE_PRESETS, TrainConfig, train

__all__ = ['GRIDS', 'SENSITIVITY_FACTORS', 'AblationRun', 'grid_variants',
           'variant_config', 'run_ablation']

logger = logging.getLogger(__name__)

SENSITIVITY_FACTORS = {'high': 2., 'low': 0.5}


def _weights(**weights) -> dict:
    return {'losses': {'weights': weights}}


def _toggles(base: TrainConfig) -> Dict[str, dict]:
    return {
        'baseline': {},
        'no_noise': {'training': {'noise': 0.}},
        'no_bounds': _weights(bounds=0.),
        'no_torque': _weights(torque=0.),
        'no_slide': _weights(slide=0.),
        'no_footspeed': _weights(footspeed=0.),
        'two_contact_points': {'contact': {'two_point': True}},
        'no_grf_minimum': {'losses': {'foot_support': False}},
    }


def _sensitivity(base: TrainConfig) -> Dict[str, dict]:
    variants = {}
    weights = base.losses.weights.to_dict()
    for term in LOSS_TERMS:
        for label, factor in SENSITIVITY_FACTORS.items():
            variants[f'{term}_{label}'] = _weights(**{term: weights[term] * factor})
    return variants


def _sparse(base: TrainConfig) -> Dict[str, dict]:
    return {preset: {'training': {'sensors': preset}} for preset in SPARSE_PRESETS}


GRIDS: Dict[str, Callable[[TrainConfig], Dict[str, dict]]] = {
    'toggles': _toggles,
    'sensitivity': _sensitivity,
    'sparse': _sparse,
}


def grid_variants(grid: str, base_config: dict) -> Dict[str, dict]:
    """Config overrides of every variant of a grid.

    Args:
        grid: One of `GRIDS`.
        base_config: Run config the overrides apply to. Sensitivity variants
            scale its loss weights.

    Raises:
        ConfigError: Unknown grid.
    """
    if grid not in GRIDS:
        raise ConfigError(f'Unknown ablation grid {grid}, choose from {list(GRIDS)}')
    return GRIDS[grid](TrainConfig.from_config(base_config))


def variant_config(base_config: dict, overrides: dict) -> dict:
    """Base config with overrides merged in, leaving both untouched."""
    return update_dict(copy.deepcopy(dict(base_config)), copy.deepcopy(overrides))


@dataclass
class AblationRun:
    """Trained and evaluated grid variant."""
    name: str
    overrides: dict
    run_folder: str = None
    report: MetricReport = None
    losses: Dict[str, float] = field(default_factory=dict)

    def row(self) -> dict:
        row = {'variant': self.name}
        row.update({f'loss_{key}': value for key, value in self.losses.items()})
        if self.report is not None:
            row.update(self.report.metrics())
        return row


def _evaluate(trainer, records, config: TrainConfig,
              evaluation: EvaluationConfig, name: str) -> MetricReport:
    checkpoint = trainer.checkpoint()
    reports = []
    for record in records:
        estimate = infer_trial(checkpoint, record, config)
        reports.append(compute_metrics(estimate.streams, record.references,
                                       estimate.body, estimate.dt, record.name,
                                       evaluation))
    return aggregate_reports(reports, name=name)


def run_ablation(base_config: dict,
                 grid: str,
                 records: Sequence,
                 evaluation_records: Sequence = (),
                 run_folder: str = None,
                 steps: int = None,
                 variants: Sequence[str] = None,
                 cache_dir: str = None,
                 evaluation: EvaluationConfig = EvaluationConfig()) -> List[AblationRun]:
    """Train and evaluate every variant of a grid.

    Args:
        base_config: Run config dict with ``training``, ``losses`` etc.
        grid: Grid name, see `GRIDS`.
        records: Training trials.
        evaluation_records: Held-out trials with references. Without them
            only the final training losses are reported.
        run_folder: Folder receiving one subfolder per variant, a
            ``manifest.json`` and the summary ``ablation.csv``.
        steps: Training steps per variant, overriding the config.
        variants: Restrict the grid to these variants.
        cache_dir: Foot speed cache folder.
        evaluation: Metric settings.
    """
    overrides = grid_variants(grid, base_config)
    if variants is not None:
        unknown = [v for v in variants if v not in overrides]
        if unknown:
            raise ConfigError(f'Grid {grid} has no variants {unknown}')
        overrides = {name: overrides[name] for name in variants}
    if run_folder is not None:
        write_manifest(run_folder, {'phase': 'ablate', 'grid': grid, 'steps': steps,
                                    'base_config': base_config,
                                    'variants': overrides})

    runs = []
    for name, override in overrides.items():
        logger.info(f'Ablation {grid}: training variant {name}')
        config = TrainConfig.from_config(variant_config(base_config, override))
        variant_folder = None
        if run_folder is not None:
            variant_folder = os.path.join(run_folder, name)
            os.makedirs(variant_folder, exist_ok=True)
        trainer = train(config, records, run_folder=variant_folder,
                        cache_dir=cache_dir, steps=steps)
        run = AblationRun(name=name, overrides=override, run_folder=variant_folder,
                          losses=trainer.history[-1] if trainer.history else {})
        if evaluation_records:
            run.report = _evaluate(trainer, evaluation_records, config, evaluation, name)
            logger.info(str(run.report))
        runs.append(run)

    if run_folder is not None:
        rows = [run.row() for run in runs]
        columns = list(dict.fromkeys(key for row in rows for key in row))
        with open(os.path.join(run_folder, 'ablation.csv'), 'w', newline='') as f:
            writer = csv.DictWriter(f, fieldnames=columns)
            writer.writeheader()
            writer.writerows(rows)
    return runs
