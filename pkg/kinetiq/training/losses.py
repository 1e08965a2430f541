"""Loss terms of the self-supervised objective.

Inputs are sequences with time on axis ``-2`` (``(..., T, C)``) or on the last
axis for single-channel sequences (``(..., T)``). Leading axes are batch
axes. Statistics (σ, maxima) are taken per sequence over the time axis.

Several terms are written as the square of a per-timestep mean,
``mean_t((1/n Σ_c r_c)²)``. With ``mean_of_squares`` they use
``mean_t(1/n Σ_c r_c²)`` instead.
"""
from dataclasses import dataclass, field, fields, asdict, replace
from typing import Dict, Mapping, Sequence
import logging

import numpy as np

from kinetiq.autodiff import functional as F
from kinetiq.errors import ConfigError, InvalidInputError

__all__ = ['LossWeights', 'LossConfig', 'LossBundle', 'LOSS_TERMS',
           'time_derivative', 'loss_kane', 'loss_temporal', 'loss_imu',
           'loss_gc', 'loss_bounds', 'loss_torque', 'loss_slide',
           'loss_footspeed', 'total_loss', 'JOINT_BOUNDS']

logger = logging.getLogger(__name__)

LOSS_TERMS = ('kane', 'temporal', 'imu', 'gc', 'bounds', 'torque', 'slide',
              'footspeed')

SIGMA_FLOOR = 1e-6

# (DOF index, lower, upper) on the generalized coordinates
JOINT_BOUNDS = [
    (1, 0., 2.),
    (3, -np.pi / 3, np.pi / 3), (4, -np.pi / 3, np.pi / 3),
    (5, -np.pi / 3, 0.1), (6, -np.pi / 3, 0.1),
    (7, -np.pi / 3, np.pi / 3), (8, -np.pi / 3, np.pi / 3)]
VELOCITY_BOUNDS = [(0, -10., 10.), (1, -10., 10.)]
FOOT_SUPPORT = 0.2
FOOTSPEED_DEADZONE = 0.3


@dataclass(frozen=True)
class LossWeights:
    kane: float = 3.
    temporal: float = 3.
    imu: float = 30.
    gc: float = 100.
    bounds: float = 10000.
    torque: float = 1.
    slide: float = 30.
    footspeed: float = 1.

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not np.isfinite(value) or value < 0:
                raise InvalidInputError(f'Loss weight {f.name} must be a finite '
                                        f'number >= 0, got {value}')

    def scaled(self, **factors) -> 'LossWeights':
        """Copy with the named weights multiplied by the given factors."""
        return replace(self, **{name: getattr(self, name) * factor
                                for name, factor in factors.items()})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_config(cls, config) -> 'LossWeights':
        kwargs = {}
        for key, val in dict(config).items():
            if key not in LOSS_TERMS:
                raise ConfigError(f'Unknown loss weight {key}')
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(f'weights.{key} must be a number, got {val!r}')
            kwargs[key] = float(val)
        try:
            return cls(**kwargs)
        except InvalidInputError as e:
            raise ConfigError(str(e)) from e


@dataclass(frozen=True)
class LossConfig:
    """Loss weights and switches.

    Args:
        weights: Term weights.
        mean_of_squares: Average squared residuals per timestep instead of
            squaring the averaged residual.
        foot_support: Penalize feet whose maximum vertical force stays below
            0.2 body weight.
        separate_ankle: Drive the contact model from the emitted ankle
            channels. If False, forward-kinematics ankles are used and the
            ground-contact consistency term vanishes.
    """
    weights: LossWeights = field(default_factory=LossWeights)
    mean_of_squares: bool = False
    foot_support: bool = True
    separate_ankle: bool = True

    @classmethod
    def from_config(cls, config) -> 'LossConfig':
        config = dict(config)
        kwargs = {}
        if 'weights' in config:
            kwargs['weights'] = LossWeights.from_config(config.pop('weights'))
        for key, val in config.items():
            if key not in cls.__dataclass_fields__:
                raise ConfigError(f'Unknown loss setting {key}')
            if not isinstance(val, bool):
                raise ConfigError(f'losses.{key} must be a bool, got {val!r}')
            kwargs[key] = val
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {'weights': self.weights.to_dict(),
                'mean_of_squares': self.mean_of_squares,
                'foot_support': self.foot_support,
                'separate_ankle': self.separate_ankle}


class LossBundle(Mapping):
    """Per-term loss values and their weighted total."""
    def __init__(self, terms: Dict[str, object], weights: LossWeights, total):
        self.terms = dict(terms)
        self.weights = weights
        self.total = total

    def __getitem__(self, key):
        if key == 'total':
            return self.total
        return self.terms[key]

    def __iter__(self):
        return iter(list(self.terms) + ['total'])

    def __len__(self):
        return len(self.terms) + 1

    def __repr__(self):
        values = ', '.join(f'{k}={v:.4g}' for k, v in self.values_dict().items())
        return f'LossBundle({values})'

    def values_dict(self) -> Dict[str, float]:
        """Plain float values of every term and the total."""
        return {key: float(F.value(self[key])) for key in self}

    def first_nonfinite(self):
        for key, val in self.values_dict().items():
            if not np.isfinite(val):
                return key
        return None


def _slice(x, index: slice, axis: int):
    full = [slice(None)] * np.ndim(F.value(x))
    full[axis] = index
    return x[tuple(full)]


def time_derivative(x, dt: float, axis: int = -2):
    """Central differences in the interior, one-sided at both ends."""
    n = np.shape(F.value(x))[axis]
    if n < 3:
        raise InvalidInputError(f'Need at least 3 samples for a time '
                                f'derivative, got {n}')
    start = (_slice(x, slice(1, 2), axis) - _slice(x, slice(0, 1), axis)) / dt
    interior = (_slice(x, slice(2, n), axis)
                - _slice(x, slice(0, n - 2), axis)) / (2 * dt)
    end = (_slice(x, slice(n - 1, n), axis)
           - _slice(x, slice(n - 2, n - 1), axis)) / dt
    return F.concat([start, interior, end], axis=axis)


def _sigma(x, axis: int = -2):
    """Per-channel standard deviation over time and its validity mask."""
    sigma = F.std(x, axis=axis, keepdims=True)
    valid = F.value(sigma) >= SIGMA_FLOOR
    return F.where(valid, sigma, 1.), valid


def _squared_mean(residual, valid, mean_of_squares: bool, axis: int = -1):
    """Per-timestep channel average, squared, then averaged over everything.

    Args:
        residual: Residuals ``(..., T, C)``.
        valid: Boolean mask broadcastable to ``residual``; invalid channels
            are excluded from the channel average.
        axis: Channel axis.
    """
    valid = np.broadcast_to(valid, np.shape(F.value(residual)))
    count = np.maximum(np.sum(valid, axis=axis), 1)
    if mean_of_squares:
        per_t = F.sum(F.where(valid, residual * residual, 0.), axis=axis) / count
    else:
        average = F.sum(F.where(valid, residual, 0.), axis=axis) / count
        per_t = average * average
    return F.mean(per_t)


def loss_kane(residual):
    """Mean squared generalized-force residual over DOFs, time and batch."""
    return F.mean(residual * residual)


def loss_temporal(q, qdot, qddot, dt: float, mean_of_squares: bool = False):
    """Consistency of coordinates, speeds and accelerations over time.

    Channels whose standard deviation over the sequence is below 1e-6 are
    excluded.
    """
    sigma_q, valid_q = _sigma(q)
    sigma_qdot, valid_qdot = _sigma(qdot)
    residual = F.concat([(time_derivative(q, dt) - qdot) / sigma_q,
                         (time_derivative(qdot, dt) - qddot) / sigma_qdot], axis=-1)
    valid = np.concatenate([valid_q, valid_qdot], axis=-1)
    return _squared_mean(residual, valid, mean_of_squares)


def loss_imu(measured, virtual, sensor_mask=None, mean_of_squares: bool = False):
    """Normalized IMU reconstruction error.

    Args:
        measured: Measured signals ``(..., T, n_sensors, 3)``.
        virtual: Virtual signals of the same shape.
        sensor_mask: Active sensors ``(n_sensors,)``; inactive sensors are
            left out of the sensor average.

    Raises:
        InvalidInputError: Shape mismatch.
    """
    measured_shape, virtual_shape = np.shape(F.value(measured)), np.shape(F.value(virtual))
    if measured_shape != virtual_shape or len(measured_shape) < 3:
        raise InvalidInputError(f'Measured IMU shape {measured_shape} does not '
                                f'match virtual IMU shape {virtual_shape}')
    measured = F.value(measured)
    sigma = np.std(measured, axis=-3, keepdims=True)
    valid = sigma >= SIGMA_FLOOR
    if sensor_mask is not None:
        valid = valid & np.asarray(sensor_mask, dtype=bool)[:, None]
    residual = (virtual - measured) / np.where(valid, sigma, 1.)
    # Average over sensors per channel type
    return _squared_mean(residual, valid, mean_of_squares, axis=-2)


def loss_gc(ankle_estimated: Mapping, ankle_fk: Mapping,
            mean_of_squares: bool = False):
    """Consistency of emitted ankle kinematics with forward kinematics.

    Args:
        ankle_estimated: `AnkleContactState` per side.
        ankle_fk: Forward-kinematics ankle `PointKinematics` per side.
    """
    estimated, reference = [], []
    for side in sorted(ankle_estimated):
        estimated += ankle_estimated[side].kinematic_channels()
        fk = ankle_fk[side]
        reference += [fk.x, fk.y, fk.alpha, fk.xdot, fk.ydot, fk.alphadot]
    estimated = F.stack(estimated, axis=-1)
    reference = F.stack(reference, axis=-1)
    sigma, valid = _sigma(reference)
    return _squared_mean((estimated - reference) / sigma, valid, mean_of_squares)


def _hinge_squared(x, lower, upper):
    over = F.maximum(x - upper, 0.)
    under = F.maximum(lower - x, 0.)
    return over * over + under * under


def loss_bounds(q, qdot, vertical_forces: Mapping = None,
                foot_support: bool = True):
    """Quadratic penalty outside joint, root height and root speed ranges.

    Args:
        q: Coordinates ``(..., T, 9)``.
        qdot: Speeds ``(..., T, 9)``.
        vertical_forces: Vertical force per foot ``(..., T)``, for the foot
            support term.
        foot_support: Penalize a foot whose maximum vertical force over the
            sequence stays below 0.2 body weight.
    """
    penalty = 0.
    for k, lower, upper in JOINT_BOUNDS:
        penalty = penalty + _hinge_squared(q[..., k], lower, upper)
    for k, lower, upper in VELOCITY_BOUNDS:
        penalty = penalty + _hinge_squared(qdot[..., k], lower, upper)
    loss = F.mean(penalty)
    if foot_support and vertical_forces:
        support = 0.
        for side in sorted(vertical_forces):
            shortfall = F.maximum(FOOT_SUPPORT - F.max(vertical_forces[side], axis=-1), 0.)
            support = support + shortfall * shortfall
        loss = loss + F.mean(support)
    return loss


def loss_torque(tau, root_velocity):
    """Squared summed joint torque, scaled by the sequence speed.

    The speed scale ``max(max_t |q̇_x|, 1)`` is treated as a constant.

    Args:
        tau: Joint torques ``(..., T, 6)``.
        root_velocity: Horizontal root velocity ``(..., T)``.
    """
    speed = np.max(np.abs(F.value(root_velocity)), axis=-1, keepdims=True)
    scale = np.maximum(speed, 1.)
    total = F.sum(tau, axis=-1) / scale
    return F.mean(total * total)


def loss_slide(contact_points: Mapping, vertical_forces: Mapping):
    """Squared product of contact point sliding speed and vertical force.

    Args:
        contact_points: List of `ContactPoint` per side.
        vertical_forces: List of matching vertical forces per side.
    """
    per_t = 0.
    for side in sorted(contact_points):
        points, forces = contact_points[side], vertical_forces[side]
        side_total = 0.
        for point, fy in zip(points, forces):
            side_total = side_total + F.abs(point.xdot) * fy
        per_t = per_t + side_total / len(points)
    return F.mean(per_t * per_t)


def loss_footspeed(estimated: Mapping, reference: Mapping):
    """Foot speed deviation from the zero-velocity-update reference.

    Deviations within 30% of the reference maximum speed are free.

    Args:
        estimated: Horizontal foot sensor speed per side ``(..., T)``.
        reference: Reference speed per side ``(..., T)``.
    """
    per_t = 0.
    sides = sorted(estimated)
    for side in sides:
        ref = np.asarray(F.value(reference[side]))
        deadzone = FOOTSPEED_DEADZONE * np.max(ref, axis=-1, keepdims=True)
        deviation = F.abs(F.abs(estimated[side]) - ref)
        per_t = per_t + F.maximum(deviation - deadzone, 0.)
    per_t = per_t / len(sides)
    return F.mean(per_t * per_t)


def total_loss(terms: Mapping, weights: LossWeights = LossWeights()) -> LossBundle:
    """Weighted sum of the loss terms.

    Terms with zero weight are reported but left out of the total.
    """
    total = 0.
    for name, value in terms.items():
        if name not in LOSS_TERMS:
            raise InvalidInputError(f'Unknown loss term {name}')
        weight = getattr(weights, name)
        if weight != 0:
            total = total + weight * value
    return LossBundle(terms, weights, total)
