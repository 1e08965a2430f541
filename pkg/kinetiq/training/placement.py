"""Sensor placement calibration through the frozen estimator.

The sensor offsets ``(d_x, d_y)`` and mounting angles enter both the
conditioning vector fed to the network and the forward kinematics of the
virtual IMU. With the network weights and body constants frozen, they are
fitted by Adam on the physics loss and projected onto a box around the
assumed placement after every step.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Sequence
import logging
import os

import numpy as np

from kinetiq.autodiff import Adam, Tensor, backward, clip_grad_norm
from kinetiq.data.sampling import WindowSampler
from kinetiq.errors import InvalidInputError
from kinetiq.model.body import ImuPlacement
from kinetiq.network.checkpoint import Checkpoint, save_checkpoint
from kinetiq.network.layout import assemble_inputs, conditioning_vector, decode_outputs
from kinetiq.tools.data_tools import write_manifest
from kinetiq.tools.general_tools import spawn_generators
from kinetiq.training.losses import LossBundle
from kinetiq.training.pipeline import sequence_losses
from kinetiq.training.training import (TrainConfig, TrainingTrial, MetricsLog,
                                       prepare_corpus, training_step, mean_bundle)

__all__ = ['TRUST_REGION', 'ANGLE_TRUST_REGION', 'PlacementResult',
           'PlacementObjective', 'optimize_placement']

logger = logging.getLogger(__name__)

TRUST_REGION = 0.3
ANGLE_TRUST_REGION = 0.5

_PARAMETERS = ('d_x', 'd_y', 'mounting_angle')


@dataclass
class PlacementResult:
    """Calibrated placement.

    Args:
        placement: Fitted placement.
        initial: Assumed placement the fit started from.
        history: Loss values per step.
        projected: Sensors whose parameters hit the trust region.
    """
    placement: ImuPlacement
    initial: ImuPlacement
    history: List[Dict[str, float]] = field(default_factory=list)
    projected: List[str] = field(default_factory=list)

    def shift(self) -> Dict[str, np.ndarray]:
        """Fitted minus assumed ``(Δd_x, Δd_y, Δangle)`` per sensor."""
        return {sensor: np.array([self.placement.d_x[k] - self.initial.d_x[k],
                                  self.placement.d_y[k] - self.initial.d_y[k],
                                  self.placement.mounting_angle[k]
                                  - self.initial.mounting_angle[k]])
                for k, sensor in enumerate(self.placement.sensors)}


class PlacementObjective:
    """Physics loss of a fixed set of windows as a function of the placement.

    Args:
        checkpoint: Trained estimator with its input conventions.
        trials: Prepared training segments sharing ``placement``'s sensors.
        placement: Assumed placement.
        config: Training settings, providing losses and contact parameters.
    """
    def __init__(self, checkpoint: Checkpoint, trials: List[TrainingTrial],
                 placement: ImuPlacement, config: TrainConfig):
        self.checkpoint = checkpoint
        self.trials = trials
        self.placement = placement
        self.config = config

    def __call__(self, d_x, d_y, samples, mounting_angle=None) -> LossBundle:
        """Mean loss bundle of windows ``(trial index, start, window)``.

        Tensor arguments give a differentiable loss.
        """
        placement = self.placement.with_offsets(d_x=d_x, d_y=d_y,
                                                mounting_angle=mounting_angle)
        bundles = []
        for index, start, window in samples:
            trial = self.trials[index]
            conditioning = conditioning_vector(trial.body, placement,
                                               self.config.contact,
                                               self.checkpoint.layout)
            inputs = assemble_inputs(window.data, placement, conditioning,
                                     self.checkpoint.stats,
                                     active=self.config.active_sensors,
                                     layout=self.checkpoint.layout)
            outputs, _ = self.checkpoint.estimator.forward(inputs, training=False)
            footspeed = {side: speed[start:start + len(window)]
                         for side, speed in trial.footspeed.items()}
            bundles.append(sequence_losses(
                decode_outputs(outputs, window.dt), window.data, trial.body,
                placement, window.dt, config=self.config.losses,
                contact=self.config.contact, active=self.config.active_sensors,
                footspeed=footspeed, gravity=self.config.gravity,
                weights=self.config.weights))
        return mean_bundle(bundles, self.config.weights)


def _shared_placement(trials: List[TrainingTrial], placement: ImuPlacement):
    """Re-order every trial's signals to the shared placement."""
    shared = []
    for trial in trials:
        missing = [s for s in placement.sensors if s not in trial.imu.sensors]
        if missing:
            raise InvalidInputError(f'Trial {trial.view.name} lacks sensors {missing}')
        view = trial.view
        imu = trial.imu.subset(placement.sensors)
        shared.append(TrainingTrial(
            view=type(view)(view.name, imu, view.height, view.mass, placement),
            body=trial.body, placement=placement, conditioning=trial.conditioning,
            footspeed=trial.footspeed))
    return shared


def optimize_placement(checkpoint: Checkpoint,
                       records: Sequence,
                       config: TrainConfig = TrainConfig(),
                       placement: ImuPlacement = None,
                       sensors: Sequence[str] = None,
                       steps: int = 500,
                       learning_rate: float = 1e-3,
                       trust_region: float = TRUST_REGION,
                       fit_angles: bool = True,
                       angle_trust_region: float = ANGLE_TRUST_REGION,
                       run_folder: str = None,
                       cache_dir: str = None) -> PlacementResult:
    """Fit sensor offsets and mounting angles with the network frozen.

    Network parameters are excluded from the gradient, and body constants
    never enter the optimizer, so segment masses and inertias stay fixed.

    Args:
        checkpoint: Trained estimator.
        records: Trials of one subject and sensor setup.
        config: Training settings.
        placement: Assumed placement. Defaults to the checkpoint placement,
            then to the first trial's placement.
        sensors: Sensors whose parameters are fitted, all placed sensors by
            default.
        steps: Adam steps.
        learning_rate: Adam learning rate.
        trust_region: Maximum offset change per axis (m).
        fit_angles: Also fit the mounting angles.
        angle_trust_region: Maximum mounting angle change (rad).
        run_folder: Folder receiving the manifest, metrics and a checkpoint
            with the fitted placement.
        cache_dir: Foot speed cache folder.

    Returns:
        Fitted placement. A warning is logged for every sensor that reached
        the trust region boundary.
    """
    trials = prepare_corpus(records, config, checkpoint.layout, cache_dir)
    if placement is None:
        placement = checkpoint.placement or trials[0].placement
    trials = _shared_placement(trials, placement)
    sensors = placement.sensors if sensors is None else tuple(sensors)
    unknown = [s for s in sensors if s not in placement.sensors]
    if unknown:
        raise InvalidInputError(f'Cannot fit unplaced sensors {unknown}')
    fitted = np.array([sensor in sensors for sensor in placement.sensors])

    objective = PlacementObjective(checkpoint, trials, placement, config)
    sampler = WindowSampler(trials, config.window,
                            spawn_generators(config.seed, ['placement'])['placement'])
    initial = {name: np.asarray(getattr(placement, name), dtype=float)
               for name in _PARAMETERS}
    bounds = {'d_x': trust_region, 'd_y': trust_region,
              'mounting_angle': angle_trust_region}
    names = list(_PARAMETERS if fit_angles else _PARAMETERS[:2])
    leaves = {name: Tensor(initial[name].copy(), requires_grad=True, name=name)
              for name in names}
    optimizer = Adam(list(leaves.values()), lr=learning_rate)
    result = PlacementResult(placement=placement, initial=placement)

    parameters = checkpoint.estimator.parameters
    for param in parameters:
        param.requires_grad = False
    metrics = None
    if run_folder is not None:
        write_manifest(run_folder, {'phase': 'optimize-placement', 'steps': steps,
                                    'learning_rate': learning_rate,
                                    'trust_region': trust_region,
                                    'fit_angles': fit_angles,
                                    'angle_trust_region': angle_trust_region,
                                    'sensors': list(sensors),
                                    'initial_placement': placement.to_dict(),
                                    'config': config.to_dict()})
        metrics = MetricsLog(os.path.join(run_folder, 'metrics.jsonl'))
    try:
        for step in range(1, steps + 1):
            optimizer.zero_grad()
            bundle = objective(leaves['d_x'], leaves['d_y'],
                               sampler.batch(config.batch_size),
                               mounting_angle=leaves.get('mounting_angle'))
            backward(bundle.total)
            for leaf in leaves.values():
                if leaf.grad is not None:
                    leaf.grad = np.where(fitted, leaf.grad, 0.)
            clip_grad_norm(list(leaves.values()), config.grad_clip)
            optimizer.step()
            for name, leaf in leaves.items():
                clipped = np.clip(leaf.data, initial[name] - bounds[name],
                                  initial[name] + bounds[name])
                for sensor, hit in zip(placement.sensors, clipped != leaf.data):
                    if hit and sensor not in result.projected:
                        logger.warning(f'{name} of sensor {sensor} projected onto '
                                       f'the ±{bounds[name]} trust region')
                        result.projected.append(sensor)
                leaf.data = clipped
            values = bundle.values_dict()
            result.history.append(values)
            training_step.send('placement', step=step, losses=values,
                               **{name: leaf.data.tolist()
                                  for name, leaf in leaves.items()})
            if step % config.log_every == 0:
                logger.info(f'Placement step {step}: {bundle}')
    finally:
        for param in parameters:
            param.requires_grad = True
        if metrics is not None:
            metrics.close()

    result.placement = placement.with_offsets(
        **{name: leaf.data.copy() for name, leaf in leaves.items()})
    if run_folder is not None:
        save_checkpoint(os.path.join(run_folder, 'checkpoint.h5'),
                        Checkpoint(estimator=checkpoint.estimator,
                                   layout=checkpoint.layout, stats=checkpoint.stats,
                                   placement=result.placement,
                                   metadata={**checkpoint.metadata,
                                             'placement_steps': steps}))
    return result
