"""Self-supervised training and fine-tuning of the estimator.

Every step draws windows from the filtered training corpus, runs the network
on noise-augmented inputs and backpropagates the physics loss bundle through
the network. Per-step loss bundles are published through the blinker signal
``training:step``; `MetricsLog` writes them to a JSON-lines file.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence
import json
import logging
import os

from blinker import signal
import numpy as np

from kinetiq.analysis.zupt import ZuptConfig, cached_foot_speed
from kinetiq.autodiff import Adam, Tensor, backward, clip_grad_norm
from kinetiq.data.filtering import FilterConfig, kept_segments
from kinetiq.data.sampling import WindowSampler, augment_noise
from kinetiq.data.trials import ImuSequence, TrainingView
from kinetiq.errors import ConfigError, InvalidInputError, TrainingDivergedError
from kinetiq.model.body import (BodyConstants, ImuPlacement, GRAVITY, SENSORS,
                                default_placement, load_template, scale_body)
from kinetiq.model.contact import ContactParams
from kinetiq.network.checkpoint import Checkpoint, save_checkpoint
from kinetiq.network.layout import (ConditioningStats, InputLayout,
                                    assemble_inputs, conditioning_vector,
                                    decode_outputs)
from kinetiq.network.lstm import Estimator, NetworkConfig
from kinetiq.tools.data_tools import corpus_hash, write_manifest
from kinetiq.tools.general_tools import spawn_generators
from kinetiq.training.losses import LOSS_TERMS, LossBundle, LossConfig, LossWeights
from kinetiq.training.pipeline import sequence_losses
from kinetiq.version import __version__

__all__ = ['SPARSE_PRESETS', 'TrainConfig', 'TrainingTrial', 'Trainer',
           'MetricsLog', 'prepare_corpus', 'train', 'finetune',
           'finetune_weights', 'training_step', 'mean_bundle',
           'trial_placement']

logger = logging.getLogger(__name__)

training_step = signal('training:step')

SPARSE_PRESETS = {
    'all': SENSORS,
    'feet_thighs': ('thigh_l', 'thigh_r', 'foot_l', 'foot_r'),
    'feet_shanks': ('shank_l', 'shank_r', 'foot_l', 'foot_r'),
    'shanks_pelvis': ('pelvis', 'shank_l', 'shank_r'),
    'shanks_thighs': ('thigh_l', 'thigh_r', 'shank_l', 'shank_r'),
}
FINETUNE_TERMS = ('kane', 'temporal', 'gc')

_SETTINGS = {'steps': int, 'batch_size': int, 'window': int,
             'learning_rate': float, 'grad_clip': float, 'noise': float,
             'seed': int, 'sensors': str, 'checkpoint_every': int,
             'log_every': int, 'finetune_factor': float, 'finetune_steps': int,
             'filter_segments': bool, 'gravity': float}


@dataclass(frozen=True)
class TrainConfig:
    """Training run settings.

    Args:
        steps: Optimizer steps.
        batch_size: Windows per step.
        window: Window length (samples).
        learning_rate: Adam learning rate.
        grad_clip: Maximum global gradient norm.
        noise: Relative input noise level during training.
        seed: Seed of initialization, sampling, noise and dropout.
        sensors: Sparse sensor preset, see `SPARSE_PRESETS`.
        checkpoint_every: Steps between checkpoints in the run folder.
        log_every: Steps between progress log messages.
        finetune_factor: Multiplier of the kane, temporal and gc weights
            during fine-tuning.
        finetune_steps: Fine-tuning steps.
        filter_segments: Drop standing and turning phases from the corpus.
        gravity: Gravitational acceleration.
    """
    steps: int = 20000
    batch_size: int = 32
    window: int = 256
    learning_rate: float = 1e-3
    grad_clip: float = 10.
    noise: float = 0.25
    seed: int = 0
    sensors: str = 'all'
    checkpoint_every: int = 1000
    log_every: int = 100
    finetune_factor: float = 10.
    finetune_steps: int = 5000
    filter_segments: bool = True
    gravity: float = GRAVITY
    network: NetworkConfig = field(default_factory=NetworkConfig)
    losses: LossConfig = field(default_factory=LossConfig)
    contact: ContactParams = field(default_factory=ContactParams)
    zupt: ZuptConfig = field(default_factory=ZuptConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)

    def __post_init__(self):
        if self.sensors not in SPARSE_PRESETS:
            raise ConfigError(f'Unknown sensor preset {self.sensors}, choose '
                              f'from {list(SPARSE_PRESETS)}')
        for name in ['batch_size', 'window', 'checkpoint_every', 'log_every']:
            if getattr(self, name) < 1:
                raise ConfigError(f'training.{name} must be positive')
        if self.steps < 0 or self.finetune_steps < 0:
            raise ConfigError('Step counts must be non-negative')
        if not self.learning_rate > 0 or not self.grad_clip > 0:
            raise ConfigError('Learning rate and gradient clip must be positive')
        if self.noise < 0:
            raise ConfigError('training.noise must be non-negative')

    @property
    def active_sensors(self):
        return SPARSE_PRESETS[self.sensors]

    @property
    def weights(self) -> LossWeights:
        """Loss weights with the IMU weight rescaled by 7 / active sensors."""
        return self.losses.weights.scaled(imu=len(SENSORS) / len(self.active_sensors))

    @classmethod
    def from_config(cls, config) -> 'TrainConfig':
        """Typed config from the ``training``, ``network``, ``losses``,
        ``contact``, ``zupt`` and ``filter`` sections of a config dict.

        Raises:
            ConfigError: Unknown keys or wrong types.
        """
        config = dict(config)
        kwargs = {}
        for key, val in dict(config.get('training', {})).items():
            if key not in _SETTINGS:
                raise ConfigError(f'Unknown training setting {key}')
            expected = _SETTINGS[key]
            if expected is bool or expected is str:
                if not isinstance(val, expected):
                    raise ConfigError(f'training.{key} must be {expected.__name__}, '
                                      f'got {val!r}')
            elif isinstance(val, bool) or not isinstance(val, (int, float)) \
                    or (expected is int and int(val) != val):
                raise ConfigError(f'training.{key} must be {expected.__name__}, '
                                  f'got {val!r}')
            kwargs[key] = expected(val)
        sections = {'network': NetworkConfig, 'losses': LossConfig,
                    'contact': ContactParams, 'zupt': ZuptConfig,
                    'filter': FilterConfig}
        for name, section_cls in sections.items():
            if name in config:
                kwargs[name] = section_cls.from_config(config[name])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        d = {key: getattr(self, key) for key in _SETTINGS}
        d.update(network=self.network.to_dict(), losses=self.losses.to_dict(),
                 contact=self.contact.to_dict(), zupt=self.zupt.to_dict(),
                 filter=self.filter.to_dict())
        return d


@dataclass
class TrainingTrial:
    """Training view of a trial segment with everything the losses need."""
    view: TrainingView
    body: BodyConstants
    placement: ImuPlacement
    conditioning: np.ndarray
    footspeed: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def imu(self) -> ImuSequence:
        return self.view.imu

    def __len__(self):
        return len(self.view.imu)


def trial_placement(view: TrainingView, body: BodyConstants):
    """Placement and IMU signals restricted to the same sensors and order."""
    placement = view.placement or default_placement(body, view.imu.sensors)
    sensors = [s for s in placement.sensors if s in view.imu.sensors]
    if not sensors:
        raise InvalidInputError(f'Trial {view.name} has no placed sensors')
    if tuple(sensors) != placement.sensors:
        placement = placement.subset(sensors)
    return placement, view.imu.subset(sensors)


def prepare_corpus(records: Sequence,
                   config: TrainConfig = TrainConfig(),
                   layout: InputLayout = InputLayout(),
                   cache_dir: str = None,
                   template: BodyConstants = None) -> List[TrainingTrial]:
    """Training segments of a set of trials.

    Only the training view of each trial is used. Standing and turning phases
    are dropped, and foot speed references are reconstructed for every
    segment holding foot sensors.
    """
    template = template or load_template()
    trials = []
    for record in records:
        view = record.training_view() if hasattr(record, 'training_view') else record
        body = scale_body(view.height, view.mass, template)
        placement, imu = trial_placement(view, body)
        missing = [s for s in config.active_sensors if s not in imu.sensors]
        if missing:
            raise InvalidInputError(f'Trial {view.name} lacks sensors {missing} '
                                    f'of preset {config.sensors}')
        if config.filter_segments:
            segments = kept_segments(imu, config.filter)
        else:
            segments = [(0, len(imu))]
        conditioning = np.asarray(conditioning_vector(body, placement, config.contact,
                                                      layout))
        for start, stop in segments:
            segment = imu.window(start, stop - start)
            footspeed = {}
            for side in ['l', 'r']:
                if f'foot_{side}' in segment.sensors:
                    footspeed[side] = cached_foot_speed(
                        segment.sensor(f'foot_{side}'), segment.dt, config.zupt,
                        cache_dir).speed
            trials.append(TrainingTrial(
                view=TrainingView(f'{view.name}[{start}:{stop}]', segment,
                                  view.height, view.mass, placement),
                body=body, placement=placement, conditioning=conditioning,
                footspeed=footspeed))
    logger.info(f'Training corpus: {len(trials)} segments from {len(records)} trials, '
                f'{sum(len(t) for t in trials)} samples')
    return trials


class MetricsLog:
    """Writes ``training:step`` signals as JSON lines.

    Args:
        filepath: Output file, appended to.
    """
    def __init__(self, filepath: str):
        self.filepath = filepath
        self._file = open(filepath, 'a')
        training_step.connect(self.record)

    def record(self, sender, **kwargs):
        self._file.write(json.dumps({'sender': sender, **kwargs}) + '\n')
        self._file.flush()

    def close(self):
        training_step.disconnect(self.record)
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()


def mean_bundle(bundles: List[LossBundle], weights: LossWeights) -> LossBundle:
    n = len(bundles)
    terms = {name: sum(bundle[name] for bundle in bundles) / n for name in LOSS_TERMS}
    total = sum(bundle.total for bundle in bundles) / n
    return LossBundle(terms, weights, total)


class Trainer:
    """Optimizer loop over a prepared corpus.

    Args:
        config: Training settings.
        trials: Prepared training segments.
        checkpoint: Checkpoint to continue from. A fresh network is
            initialized otherwise.
        layout: Input layout of a fresh network.
        weights: Loss weights, `TrainConfig.weights` by default.
        run_folder: Folder receiving checkpoints.
    """
    def __init__(self,
                 config: TrainConfig,
                 trials: List[TrainingTrial],
                 checkpoint: Checkpoint = None,
                 layout: InputLayout = InputLayout(),
                 weights: LossWeights = None,
                 run_folder: str = None):
        self.config = config
        self.trials = trials
        self.weights = config.weights if weights is None else weights
        self.run_folder = run_folder
        self.generators = spawn_generators(config.seed, ['sampler', 'noise', 'dropout'])
        self.sampler = WindowSampler(trials, config.window, self.generators['sampler'])

        if checkpoint is None:
            self.layout = layout
            self.estimator = Estimator(config.network, layout.n_inputs, seed=config.seed)
            self.stats = ConditioningStats.from_template(contact=config.contact,
                                                         layout=layout)
            self.optimizer = Adam(self.estimator.parameters, lr=config.learning_rate)
            self.metadata = {}
        else:
            self.layout = checkpoint.layout
            self.estimator = checkpoint.estimator
            self.stats = checkpoint.stats
            self.optimizer = Adam(self.estimator.parameters, lr=config.learning_rate)
            if checkpoint.optimizer_state is not None:
                self.optimizer.load_state_dict(checkpoint.optimizer_state)
            self.metadata = dict(checkpoint.metadata)
        self.step_count = int(self.metadata.get('steps', 0))
        self.last_checkpoint: Optional[str] = None
        self.history: List[Dict[str, float]] = []

    def inputs(self, trial: TrainingTrial, imu: np.ndarray, training: bool) -> np.ndarray:
        if training:
            imu = augment_noise(imu, self.config.noise, self.generators['noise'])
        return assemble_inputs(imu, trial.placement, trial.conditioning, self.stats,
                               active=self.config.active_sensors, layout=self.layout)

    def batch_losses(self, samples, training: bool = True) -> LossBundle:
        """Mean loss bundle of windows ``(trial index, start, window)``."""
        trials = [self.sampler.trials[index] for index, _, _ in samples]
        inputs = np.stack([self.inputs(trial, window.data, training)
                           for trial, (_, _, window) in zip(trials, samples)])
        outputs, _ = self.estimator.forward(inputs, training=training,
                                            rng=self.generators['dropout'],
                                            differentiable=training)
        bundles = []
        for b, (trial, (_, start, window)) in enumerate(zip(trials, samples)):
            output = decode_outputs(outputs[b], window.dt)
            footspeed = {side: speed[start:start + len(window)]
                         for side, speed in trial.footspeed.items()}
            bundles.append(sequence_losses(
                output, window.data, trial.body, trial.placement, window.dt,
                config=self.config.losses, contact=self.config.contact,
                active=self.config.active_sensors, footspeed=footspeed,
                gravity=self.config.gravity, weights=self.weights))
        return mean_bundle(bundles, self.weights)

    def step(self) -> LossBundle:
        """Single optimizer step.

        Raises:
            TrainingDivergedError: A loss term is not finite.
        """
        self.optimizer.zero_grad()
        bundle = self.batch_losses(self.sampler.batch(self.config.batch_size))
        term = bundle.first_nonfinite()
        if term is not None:
            raise TrainingDivergedError(self.step_count, term, self.last_checkpoint)
        grad_norm = 0.
        if isinstance(bundle.total, Tensor) and bundle.total.requires_grad:
            backward(bundle.total)
            grad_norm = clip_grad_norm(self.estimator.parameters, self.config.grad_clip)
            self.optimizer.step()
        self.step_count += 1
        values = bundle.values_dict()
        self.history.append(values)
        training_step.send('training', step=self.step_count, losses=values,
                           grad_norm=grad_norm, phase=self.metadata.get('phase', 'train'))
        return bundle

    def run(self, steps: int) -> List[Dict[str, float]]:
        for k in range(steps):
            bundle = self.step()
            if self.step_count % self.config.log_every == 0 or k == steps - 1:
                logger.info(f'Step {self.step_count}: {bundle}')
            if self.run_folder is not None \
                    and self.step_count % self.config.checkpoint_every == 0:
                self.save(os.path.join(self.run_folder, 'checkpoint.h5'))
        return self.history

    def evaluate(self, samples) -> LossBundle:
        """Loss bundle without noise, dropout or gradients."""
        return self.batch_losses(samples, training=False)

    def checkpoint(self) -> Checkpoint:
        unique = {json.dumps(trial.placement.to_dict(), sort_keys=True)
                  for trial in self.trials}
        placement = self.trials[0].placement if len(unique) == 1 else None
        return Checkpoint(estimator=self.estimator, layout=self.layout,
                          stats=self.stats, placement=placement,
                          optimizer_state=self.optimizer.state_dict(),
                          metadata={**self.metadata, 'steps': self.step_count,
                                    'weights': self.weights.to_dict(),
                                    'sensors': self.config.sensors})

    def save(self, filepath: str) -> str:
        save_checkpoint(filepath, self.checkpoint())
        self.last_checkpoint = filepath
        return filepath


def finetune_weights(weights: LossWeights, multiplier: float) -> LossWeights:
    """Weights with the kane, temporal and gc terms multiplied."""
    return weights.scaled(**{term: multiplier for term in FINETUNE_TERMS})


def _manifest(config: TrainConfig, trials: List[TrainingTrial], phase: str,
              weights: LossWeights, **extra) -> dict:
    return {'phase': phase,
            'code_version': __version__,
            'seed': config.seed,
            'config': config.to_dict(),
            'effective_weights': weights.to_dict(),
            'active_sensors': list(config.active_sensors),
            'corpus_hash': corpus_hash([trial.imu.data for trial in trials],
                                       [trial.view.name for trial in trials]),
            'corpus': [trial.view.name for trial in trials],
            **extra}


def _run(trainer: Trainer, steps: int, run_folder: str, manifest: dict) -> Trainer:
    if run_folder is None:
        trainer.run(steps)
        return trainer
    write_manifest(run_folder, manifest)
    filepath = os.path.join(run_folder, 'checkpoint.h5')
    try:
        with MetricsLog(os.path.join(run_folder, 'metrics.jsonl')):
            trainer.run(steps)
    except TrainingDivergedError as e:
        # Parameters are only updated after a finite loss
        raise TrainingDivergedError(e.step, e.term, trainer.save(filepath)) from e
    trainer.save(filepath)
    return trainer


def train(config: TrainConfig,
          records: Sequence,
          run_folder: str = None,
          cache_dir: str = None,
          checkpoint: Checkpoint = None,
          steps: int = None) -> Trainer:
    """Train the estimator on a set of trials.

    Args:
        config: Training settings.
        records: Trial records or training views.
        run_folder: Folder receiving ``manifest.json``, ``metrics.jsonl`` and
            ``checkpoint.h5``.
        cache_dir: Foot speed cache folder.
        checkpoint: Continue from this checkpoint.
        steps: Overrides ``config.steps``.

    Returns:
        Trainer holding the trained estimator.
    """
    steps = config.steps if steps is None else steps
    trials = prepare_corpus(records, config,
                            checkpoint.layout if checkpoint else InputLayout(), cache_dir)
    trainer = Trainer(config, trials, checkpoint=checkpoint, run_folder=run_folder)
    trainer.metadata['phase'] = 'train'
    return _run(trainer, steps, run_folder,
                _manifest(config, trials, 'train', trainer.weights, steps=steps))


def finetune(config: TrainConfig,
             records: Sequence,
             checkpoint: Checkpoint,
             multiplier: float = None,
             run_folder: str = None,
             cache_dir: str = None,
             steps: int = None) -> Trainer:
    """Continue training with the physics consistency terms emphasized.

    The kane, temporal and gc weights are multiplied by ``multiplier``
    (``config.finetune_factor`` by default). The effective weights are
    recorded in the run manifest.
    """
    multiplier = config.finetune_factor if multiplier is None else multiplier
    steps = config.finetune_steps if steps is None else steps
    weights = finetune_weights(config.weights, multiplier)
    trials = prepare_corpus(records, config, checkpoint.layout, cache_dir)
    trainer = Trainer(config, trials, checkpoint=checkpoint, weights=weights,
                      run_folder=run_folder)
    trainer.metadata['phase'] = 'finetune'
    return _run(trainer, steps, run_folder,
                _manifest(config, trials, 'finetune', weights, steps=steps,
                          multiplier=multiplier))
