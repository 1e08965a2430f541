"""Running a trained estimator on trials.

`infer_trial` turns the IMU signals of a trial into an `Estimate`: decoded
kinematics, torques, ground contact channels and the ground reaction forces
obtained by passing the decoded ankles through the contact model. Estimates
of many trials are stored together in a single HDF5 predictions file.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Sequence
import json
import logging
import os

import h5py
import numpy as np

from kinetiq.errors import InvalidInputError
from kinetiq.model.body import BodyConstants, ImuPlacement, load_template, scale_body
from kinetiq.network.checkpoint import Checkpoint
from kinetiq.network.layout import assemble_inputs, conditioning_vector, decode_outputs
from kinetiq.training.pipeline import evaluate_physics
from kinetiq.training.training import TrainConfig, trial_placement

__all__ = ['Estimate', 'infer_trial', 'save_predictions', 'load_predictions',
           'PREDICTION_STREAMS']

logger = logging.getLogger(__name__)

PREDICTION_STREAMS = ('q', 'qdot', 'qddot', 'tau', 'gc', 'grf', 'speed')
PREDICTIONS_FORMAT = 1


@dataclass
class Estimate:
    """Estimated dynamics of one trial.

    Args:
        name: Trial name.
        dt: Sample interval (s).
        streams: Arrays keyed by `PREDICTION_STREAMS`. ``q`` holds the
            integrated horizontal root position, ``speed`` the horizontal
            root velocity and ``grf`` the forces ``(T, 2, 2)`` as
            ``(F_x, F_y)`` per foot in body weights.
        body: Body constants of the subject.
        placement: Sensor placement used for the inputs.
    """
    name: str
    dt: float
    streams: Dict[str, np.ndarray]
    body: BodyConstants = None
    placement: ImuPlacement = None
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.streams['q'])

    def __getitem__(self, key) -> np.ndarray:
        return self.streams[key]


def _placement(record, body: BodyConstants, checkpoint: Checkpoint):
    view = record.training_view() if hasattr(record, 'training_view') else record
    if view.placement is None and checkpoint.placement is not None \
            and all(s in view.imu.sensors for s in checkpoint.placement.sensors):
        placement = checkpoint.placement
        return placement, view.imu.subset(placement.sensors)
    return trial_placement(view, body)


def infer_trial(checkpoint: Checkpoint,
                record,
                config: TrainConfig = TrainConfig(),
                template: BodyConstants = None,
                streaming: bool = False) -> Estimate:
    """Estimate the dynamics of a trial.

    Args:
        checkpoint: Trained estimator.
        record: Trial record or training view. References are never read.
        config: Settings providing the sensor preset and contact model.
        template: Anthropometric template, the packaged one by default.
        streaming: Feed the network one sample at a time through a
            `StreamingSession` instead of as a single sequence.

    Raises:
        InvalidInputError: The trial lacks sensors of the preset.
    """
    view = record.training_view() if hasattr(record, 'training_view') else record
    body = scale_body(view.height, view.mass, template or load_template())
    placement, imu = _placement(view, body, checkpoint)
    missing = [s for s in config.active_sensors if s not in imu.sensors]
    if missing:
        raise InvalidInputError(f'Trial {view.name} lacks sensors {missing}')

    conditioning = np.asarray(conditioning_vector(body, placement, config.contact,
                                                  checkpoint.layout))
    inputs = assemble_inputs(imu.data, placement, conditioning, checkpoint.stats,
                             active=config.active_sensors, layout=checkpoint.layout)
    if streaming:
        session = checkpoint.estimator.session()
        outputs = np.stack([session.step(x) for x in inputs])
    else:
        outputs, _ = checkpoint.estimator.forward(inputs, training=False,
                                                  differentiable=False)
    output = decode_outputs(outputs, imu.dt)
    physics = evaluate_physics(output, body, placement, config.contact,
                               config.losses.separate_ankle, config.gravity)
    state = output.state.numpy()
    streams = {'q': state.q, 'qdot': state.qdot, 'qddot': state.qddot,
               'tau': state.tau, 'gc': np.asarray(output.gc),
               'grf': physics.grf(), 'speed': state.qdot[:, 0]}
    logger.debug(f'Inferred {len(imu)} samples of trial {view.name}')
    return Estimate(name=view.name, dt=imu.dt, streams=streams, body=body,
                    placement=placement)


def save_predictions(filepath: str, estimates: Sequence[Estimate],
                     metadata: dict = None) -> str:
    """Write estimates to an HDF5 file, one group per trial."""
    with h5py.File(filepath, 'w') as file:
        file.attrs['format_version'] = PREDICTIONS_FORMAT
        file.attrs['metadata'] = json.dumps(metadata or {})
        for estimate in estimates:
            group = file.create_group(estimate.name)
            group.attrs['dt'] = estimate.dt
            if estimate.body is not None:
                group.attrs['body'] = json.dumps(estimate.body.to_dict())
            if estimate.placement is not None:
                group.attrs['placement'] = json.dumps(estimate.placement.to_dict())
            for key, values in estimate.streams.items():
                group.create_dataset(key, data=values)
    logger.info(f'Saved {len(estimates)} estimates to {filepath}')
    return filepath


def load_predictions(filepath: str) -> List[Estimate]:
    """Read a predictions file written by `save_predictions`.

    Raises:
        FileNotFoundError: No such file.
        InvalidInputError: Unknown format version.
    """
    if not os.path.exists(filepath):
        raise FileNotFoundError(f'Predictions file {filepath} does not exist')
    estimates = []
    with h5py.File(filepath, 'r') as file:
        version = int(file.attrs.get('format_version', -1))
        if version != PREDICTIONS_FORMAT:
            raise InvalidInputError(f'Predictions format {version} not supported')
        for name, group in file.items():
            body = placement = None
            if 'body' in group.attrs:
                body = BodyConstants.from_dict(json.loads(group.attrs['body']))
            if 'placement' in group.attrs:
                placement = ImuPlacement.from_dict(json.loads(group.attrs['placement']))
            estimates.append(Estimate(
                name=name, dt=float(group.attrs['dt']),
                streams={key: np.array(dataset) for key, dataset in group.items()},
                body=body, placement=placement))
    return estimates
