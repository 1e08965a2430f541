"""Input channel layout and output decoding of the estimator.

Each timestep feeds the network 21 IMU channels (3 per sensor slot, zeros for
inactive sensors), 7 sensor mask bits and a constant conditioning vector of
body constants (28), sensor placement (21) and contact parameters (5). The
conditioning vector is normalized with statistics of the template body.

The 46 outputs per timestep are q[1:9] (8), q̇ (9), q̈ (9), τ (6) and the 14
ground contact channels. The horizontal root coordinate is the trapezoidal
integral of the emitted horizontal root velocity.
"""
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple
import logging

import numpy as np

from kinetiq.autodiff import functional as F
from kinetiq.errors import InvalidInputError, LayoutMismatchError
from kinetiq.model.body import (BodyConstants, ImuPlacement, SENSORS,
                                SEGMENTS, GRAVITY, load_template,
                                default_placement)
from kinetiq.model.contact import ContactParams, N_CONTACT_CHANNELS
from kinetiq.model.kinematics import (GeneralizedState, N_DOFS, N_TORQUES,
                                      integrate_root_velocity)

__all__ = ['LAYOUT_VERSION', 'N_OUTPUTS', 'InputLayout', 'ConditioningStats',
           'NetworkOutput', 'conditioning_vector', 'assemble_inputs',
           'decode_outputs', 'encode_state', 'sensor_mask']

logger = logging.getLogger(__name__)

LAYOUT_VERSION = 1
N_OUTPUTS = (N_DOFS - 1) + N_DOFS + N_DOFS + N_TORQUES + N_CONTACT_CHANNELS

_CONDITIONING_BLOCKS = (('body', 4 * len(SEGMENTS)),
                        ('placement', 3 * len(SENSORS)),
                        ('contact', 5))


@dataclass(frozen=True)
class InputLayout:
    """Versioned description of the input channels.

    Args:
        version: Layout version.
        sensors: Sensor slot order.
        imu_scale: Divisors of the ``(a_x, a_y, ω)`` channels.
        conditioning: Name and width of every conditioning block.
    """
    version: int = LAYOUT_VERSION
    sensors: Tuple[str, ...] = SENSORS
    imu_scale: Tuple[float, float, float] = (GRAVITY, GRAVITY, 1.)
    conditioning: Tuple[Tuple[str, int], ...] = _CONDITIONING_BLOCKS

    @property
    def n_imu(self) -> int:
        return 3 * len(self.sensors)

    @property
    def n_conditioning(self) -> int:
        return sum(width for _, width in self.conditioning)

    @property
    def n_inputs(self) -> int:
        return self.n_imu + len(self.sensors) + self.n_conditioning

    def channel_names(self) -> List[str]:
        names = [f'{sensor}.{channel}' for sensor in self.sensors
                 for channel in ['a_x', 'a_y', 'omega']]
        names += [f'mask.{sensor}' for sensor in self.sensors]
        for block, width in self.conditioning:
            names += [f'{block}.{k}' for k in range(width)]
        return names

    def to_dict(self) -> dict:
        return {'version': self.version,
                'sensors': list(self.sensors),
                'imu_scale': list(self.imu_scale),
                'conditioning': [list(block) for block in self.conditioning]}

    @classmethod
    def from_dict(cls, d: dict) -> 'InputLayout':
        return cls(version=int(d['version']),
                   sensors=tuple(d['sensors']),
                   imu_scale=tuple(float(s) for s in d['imu_scale']),
                   conditioning=tuple((name, int(width))
                                      for name, width in d['conditioning']))

    def check_compatible(self, other: 'InputLayout'):
        """Raise `LayoutMismatchError` unless ``other`` is this layout."""
        if self.to_dict() != other.to_dict():
            raise LayoutMismatchError(f'Input layout mismatch: expected '
                                      f'{self.to_dict()}, got {other.to_dict()}')


def _placement_slots(placement: ImuPlacement, layout: InputLayout):
    """Placement offsets scattered into the fixed sensor slots."""
    columns = []
    for values in [placement.d_x, placement.d_y, placement.mounting_angle]:
        slots = []
        for sensor in layout.sensors:
            if sensor in placement.sensors:
                slots.append(values[placement.index(sensor)])
            else:
                slots.append(0. * F.value(values)[0])
        columns.append(F.stack(slots))
    return F.concat(columns)


def conditioning_vector(body: BodyConstants,
                        placement: ImuPlacement,
                        contact: ContactParams,
                        layout: InputLayout = InputLayout()):
    """Raw conditioning vector ``(θ_b, θ_IMU, θ_gc)``.

    The placement block may be a `Tensor` when placement is optimized.
    """
    return F.concat([body.as_vector(), _placement_slots(placement, layout),
                     contact.as_vector()])


@dataclass(frozen=True)
class ConditioningStats:
    """Centre and scale used to normalize the conditioning vector."""
    center: np.ndarray
    scale: np.ndarray

    @classmethod
    def from_template(cls, template: BodyConstants = None,
                      contact: ContactParams = ContactParams(),
                      layout: InputLayout = InputLayout()) -> 'ConditioningStats':
        if template is None:
            template = load_template()
        placement = default_placement(template, layout.sensors)
        center = np.asarray(conditioning_vector(template, placement, contact, layout))
        scale = np.maximum(0.1 * np.abs(center), 0.01)
        return cls(center=center, scale=scale)

    def normalize(self, vector):
        return (vector - self.center) / self.scale

    def to_dict(self) -> dict:
        return {'center': self.center.tolist(), 'scale': self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> 'ConditioningStats':
        return cls(center=np.array(d['center']), scale=np.array(d['scale']))


def sensor_mask(active: Sequence[str], layout: InputLayout = InputLayout()) -> np.ndarray:
    return np.array([sensor in active for sensor in layout.sensors])


def assemble_inputs(imu,
                    placement: ImuPlacement,
                    conditioning,
                    stats: ConditioningStats,
                    active: Sequence[str] = None,
                    layout: InputLayout = InputLayout()):
    """Network input sequence.

    Args:
        imu: IMU signals ``(..., T, n_sensors, 3)`` ordered as
            ``placement.sensors``.
        placement: Sensor placement, naming the sensors in ``imu``.
        conditioning: Raw conditioning vector from `conditioning_vector`.
        stats: Conditioning normalization.
        active: Sensors fed to the network; the others are zeroed and their
            mask bit cleared. Defaults to all placed sensors.
        layout: Input layout.

    Returns:
        Inputs ``(..., T, layout.n_inputs)``.

    Raises:
        InvalidInputError: IMU shape does not match the placement.
    """
    imu = np.asarray(F.value(imu), dtype=float)
    if imu.ndim < 3 or imu.shape[-2:] != (len(placement.sensors), 3):
        raise InvalidInputError(f'IMU signals of shape {imu.shape} do not '
                                f'match {len(placement.sensors)} sensors')
    if active is None:
        active = placement.sensors
    batch_shape = imu.shape[:-2]

    slots = np.zeros(batch_shape + (len(layout.sensors), 3))
    mask = np.zeros(len(layout.sensors))
    for k, sensor in enumerate(layout.sensors):
        if sensor in active and sensor in placement.sensors:
            slots[..., k, :] = imu[..., placement.index(sensor), :] / layout.imu_scale
            mask[k] = 1.
    imu_channels = slots.reshape(batch_shape + (layout.n_imu,))
    mask_channels = np.broadcast_to(mask, batch_shape + (len(mask),))

    normalized = stats.normalize(conditioning)
    ones = np.ones(batch_shape + (1,))
    if F.is_tensor(normalized):
        return F.concat([imu_channels, mask_channels,
                         ones * normalized.reshape(1, -1)], axis=-1)
    return np.concatenate([imu_channels, mask_channels,
                           np.broadcast_to(normalized, batch_shape + (len(normalized),))],
                          axis=-1)


@dataclass(frozen=True)
class NetworkOutput:
    """Decoded network outputs of a sequence."""
    state: GeneralizedState
    gc: np.ndarray
    raw: np.ndarray = field(repr=False, default=None)


def decode_outputs(outputs, dt: float) -> NetworkOutput:
    """Split ``(..., T, 46)`` outputs into state and ground contact channels.

    Raises:
        InvalidInputError: Wrong number of output features.
    """
    n = np.shape(F.value(outputs))[-1]
    if n != N_OUTPUTS:
        raise InvalidInputError(f'Expected {N_OUTPUTS} output features, got {n}')
    q_rest = outputs[..., 0:N_DOFS - 1]
    qdot = outputs[..., N_DOFS - 1:2 * N_DOFS - 1]
    qddot = outputs[..., 2 * N_DOFS - 1:3 * N_DOFS - 1]
    tau = outputs[..., 3 * N_DOFS - 1:3 * N_DOFS - 1 + N_TORQUES]
    gc = outputs[..., 3 * N_DOFS - 1 + N_TORQUES:]

    root_x = integrate_root_velocity(qdot[..., 0], dt, axis=-1)
    shape = np.shape(F.value(root_x)) + (1,)
    q = F.concat([root_x.reshape(shape) if F.is_tensor(root_x)
                  else np.reshape(root_x, shape), q_rest], axis=-1)
    return NetworkOutput(state=GeneralizedState(q=q, qdot=qdot, qddot=qddot, tau=tau),
                         gc=gc, raw=outputs)


def encode_state(state: GeneralizedState, gc) -> np.ndarray:
    """Inverse of `decode_outputs` for numpy states."""
    q, qdot, qddot, tau = (np.asarray(F.value(x)) for x in
                           [state.q, state.qdot, state.qddot, state.tau])
    return np.concatenate([q[..., 1:], qdot, qddot, tau, np.asarray(gc)], axis=-1)
