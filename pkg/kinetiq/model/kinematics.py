"""Planar point kinematics along the kinematic chain of the body.

All functions operate on numpy arrays or `Tensor` objects of arbitrary
leading (batch, time) shape. Angles are counterclockwise positive in the
sagittal plane with x forward and y up.
"""
from dataclasses import dataclass, fields, replace
from typing import Dict, Tuple
import logging

import numpy as np

from kinetiq.autodiff import functional as F
from kinetiq.errors import InvalidInputError, InvalidPlacementError
from kinetiq.model.body import (BodyConstants, ImuPlacement, SEGMENTS,
                                GRAVITY, HEEL_FRACTION, TOE_FRACTION)

__all__ = ['DOFS', 'TORQUE_DOFS', 'N_DOFS', 'N_TORQUES', 'DOF_MIRROR', 'TORQUE_MIRROR',
           'PointKinematics',
           'GeneralizedState', 'propagate_point', 'forward_kinematics',
           'virtual_imu', 'integrate_root_velocity', 'mirror_points',
           'segment_proximal_point', 'SIDES']

logger = logging.getLogger(__name__)

DOFS = ('root_x', 'root_y', 'root_rot', 'hip_l', 'hip_r', 'knee_l',
        'knee_r', 'ankle_l', 'ankle_r')
TORQUE_DOFS = DOFS[3:]
N_DOFS = len(DOFS)
N_TORQUES = len(TORQUE_DOFS)
SIDES = ('l', 'r')

DOF_MIRROR = [0, 1, 2, 4, 3, 6, 5, 8, 7]
TORQUE_MIRROR = [1, 0, 3, 2, 5, 4]

# Proximal point of every segment, and the sensor or point propagated from it
_SEGMENT_ROOTS = {'trunk': 'root', 'thigh_l': 'hip_l', 'thigh_r': 'hip_r',
                  'shank_l': 'knee_l', 'shank_r': 'knee_r',
                  'foot_l': 'ankle_l', 'foot_r': 'ankle_r'}


@dataclass(frozen=True)
class PointKinematics:
    """Global kinematics of a point and the orientation of its segment."""
    x: np.ndarray
    xdot: np.ndarray
    xddot: np.ndarray
    y: np.ndarray
    ydot: np.ndarray
    yddot: np.ndarray
    alpha: np.ndarray
    alphadot: np.ndarray
    alphaddot: np.ndarray

    def channels(self) -> Tuple:
        return tuple(getattr(self, f.name) for f in fields(self))

    def numpy(self) -> 'PointKinematics':
        return PointKinematics(*(np.asarray(F.value(c)) for c in self.channels()))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(F.value(c))) for c in self.channels())


@dataclass(frozen=True)
class GeneralizedState:
    """Generalized coordinates, speeds, accelerations and joint torques.

    Args:
        q: Coordinates ``(..., 9)`` ordered as `DOFS`. The horizontal root
            channel holds the integrated horizontal root velocity.
        qdot: Generalized speeds ``(..., 9)``.
        qddot: Generalized accelerations ``(..., 9)``.
        tau: Joint torques ``(..., 6)`` ordered as `TORQUE_DOFS`, normalized
            by body weight times body height.
    """
    q: np.ndarray
    qdot: np.ndarray
    qddot: np.ndarray
    tau: np.ndarray = None

    def __post_init__(self):
        for name in ['q', 'qdot', 'qddot']:
            shape = np.shape(F.value(getattr(self, name)))
            if not shape or shape[-1] != N_DOFS:
                raise InvalidInputError(f'State {name} must end in {N_DOFS} '
                                        f'entries, got shape {shape}')
        if self.tau is None:
            object.__setattr__(self, 'tau',
                               np.zeros(np.shape(F.value(self.q))[:-1] + (N_TORQUES,)))
        elif np.shape(F.value(self.tau))[-1:] != (N_TORQUES,):
            raise InvalidInputError(f'Torques must end in {N_TORQUES} entries')

    @classmethod
    def zeros(cls, shape=()) -> 'GeneralizedState':
        shape = tuple(shape) if isinstance(shape, (tuple, list)) else (shape,)
        return cls(q=np.zeros(shape + (N_DOFS,)),
                   qdot=np.zeros(shape + (N_DOFS,)),
                   qddot=np.zeros(shape + (N_DOFS,)),
                   tau=np.zeros(shape + (N_TORQUES,)))

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        return np.shape(F.value(self.q))[:-1]

    def dof(self, name: str) -> Tuple:
        """Angle state ``(q, q̇, q̈)`` of a single DOF."""
        k = DOFS.index(name)
        return self.q[..., k], self.qdot[..., k], self.qddot[..., k]

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(F.value(x)))
                   for x in [self.q, self.qdot, self.qddot, self.tau])

    def mirrored(self) -> 'GeneralizedState':
        """Swap left and right joints."""
        return GeneralizedState(q=self.q[..., DOF_MIRROR],
                                qdot=self.qdot[..., DOF_MIRROR],
                                qddot=self.qddot[..., DOF_MIRROR],
                                tau=self.tau[..., TORQUE_MIRROR])

    def with_qddot(self, qddot) -> 'GeneralizedState':
        return replace(self, qddot=qddot)

    def numpy(self) -> 'GeneralizedState':
        return GeneralizedState(*(np.asarray(F.value(x)) for x in
                                  [self.q, self.qdot, self.qddot, self.tau]))


def propagate_point(parent: PointKinematics,
                    d_x,
                    d_y,
                    local_angle_state=(0., 0., 0.)) -> PointKinematics:
    """Kinematics of a point fixed in the parent segment frame.

    The point sits at ``(d_x, d_y)`` in the frame rotated by the parent angle
    α′. Its orientation is α′ plus the local angle, which describes the
    segment attached at this point.

    Args:
        parent: Kinematics of the parent point.
        d_x: Offset along the parent frame x-axis (m).
        d_y: Offset along the parent frame y-axis (m).
        local_angle_state: Local angle, rate and acceleration ``(θ, θ̇, θ̈)``.

    Returns:
        Point kinematics.
    """
    theta, theta_dot, theta_ddot = local_angle_state
    alpha = parent.alpha + theta
    alphadot = parent.alphadot + theta_dot
    alphaddot = parent.alphaddot + theta_ddot

    if not F.is_tensor(d_x, d_y) and np.all(d_x == 0) and np.all(d_y == 0):
        return PointKinematics(parent.x, parent.xdot, parent.xddot,
                               parent.y, parent.ydot, parent.yddot,
                               alpha, alphadot, alphaddot)

    c, s = F.cos(parent.alpha), F.sin(parent.alpha)
    u = c * d_x - s * d_y
    w = s * d_x + c * d_y
    omega, omega_dot = parent.alphadot, parent.alphaddot
    omega_sq = omega * omega
    return PointKinematics(
        x=parent.x + u,
        xdot=parent.xdot - omega * w,
        xddot=parent.xddot - omega_dot * w - omega_sq * u,
        y=parent.y + w,
        ydot=parent.ydot + omega * u,
        yddot=parent.yddot + omega_dot * u - omega_sq * w,
        alpha=alpha, alphadot=alphadot, alphaddot=alphaddot)


def _root_point(state: GeneralizedState) -> PointKinematics:
    q, qd, qdd = state.q, state.qdot, state.qddot
    return PointKinematics(x=q[..., 0], xdot=qd[..., 0], xddot=qdd[..., 0],
                           y=q[..., 1], ydot=qd[..., 1], yddot=qdd[..., 1],
                           alpha=q[..., 2], alphadot=qd[..., 2],
                           alphaddot=qdd[..., 2])


def segment_proximal_point(segment: str) -> str:
    return _SEGMENT_ROOTS[segment]


def forward_kinematics(state: GeneralizedState,
                       body: BodyConstants,
                       placement: ImuPlacement = None) -> Dict[str, PointKinematics]:
    """Global kinematics of joints, contact points, segment CoMs and IMUs.

    The root point is the hip centre. The chain runs root → hip → knee →
    ankle → heel, toe on each side. Thigh and shank axes point along −y of
    their frames, the trunk along +y and the foot along +x, so all segment
    angles vanish in the zero configuration.

    Returns:
        Point kinematics keyed by ``root``, ``hip_l``, ``knee_l``, ``ankle_l``,
        ``heel_l``, ``toe_l`` (and right side), ``com_<segment>`` and
        ``imu_<sensor>``.

    Raises:
        InvalidPlacementError: A sensor parent is not a segment.
    """
    length = dict(zip(SEGMENTS, _unstack(body.length)))
    com = dict(zip(SEGMENTS, _unstack(body.com_offset)))

    points = {'root': _root_point(state)}
    points['com_trunk'] = propagate_point(points['root'], 0., com['trunk'])
    for side in SIDES:
        hip = propagate_point(points['root'], 0., 0., state.dof(f'hip_{side}'))
        knee = propagate_point(hip, 0., -length[f'thigh_{side}'],
                               state.dof(f'knee_{side}'))
        ankle = propagate_point(knee, 0., -length[f'shank_{side}'],
                                state.dof(f'ankle_{side}'))
        foot_length = length[f'foot_{side}']
        points.update({
            f'hip_{side}': hip,
            f'knee_{side}': knee,
            f'ankle_{side}': ankle,
            f'heel_{side}': propagate_point(ankle, HEEL_FRACTION * foot_length, 0.),
            f'toe_{side}': propagate_point(ankle, TOE_FRACTION * foot_length, 0.),
            f'com_thigh_{side}': propagate_point(hip, 0., -com[f'thigh_{side}']),
            f'com_shank_{side}': propagate_point(knee, 0., -com[f'shank_{side}']),
            f'com_foot_{side}': propagate_point(ankle, com[f'foot_{side}'], 0.),
        })

    if placement is not None:
        for k, (sensor, parent) in enumerate(zip(placement.sensors,
                                                 placement.parents)):
            if parent not in _SEGMENT_ROOTS:
                raise InvalidPlacementError(f'Sensor {sensor} has unknown '
                                            f'parent segment {parent}')
            points[f'imu_{sensor}'] = propagate_point(
                points[_SEGMENT_ROOTS[parent]],
                placement.d_x[k], placement.d_y[k])
    return points


def _unstack(values):
    return [values[k] for k in range(len(SEGMENTS))]


def virtual_imu(points: Dict[str, PointKinematics],
                placement: ImuPlacement,
                gravity: float = GRAVITY):
    """Planar IMU readings of every placed sensor.

    The specific force ``(ẍ, ÿ + g)`` is rotated into the sensor frame at
    angle ``α + mounting_angle``, so a static level sensor reads ``(0, g)``.
    The gyro reads ``α̇``, counterclockwise positive.

    Returns:
        Readings of shape ``(..., n_sensors, 3)`` with channels
        ``(a_x, a_y, ω)``.

    Raises:
        InvalidInputError: A sensor point is missing from ``points``.
    """
    readings = []
    for k, sensor in enumerate(placement.sensors):
        try:
            point = points[f'imu_{sensor}']
        except KeyError:
            raise InvalidInputError(f'No kinematics for sensor {sensor}')
        phi = point.alpha + placement.mounting_angle[k]
        c, s = F.cos(phi), F.sin(phi)
        specific_y = point.yddot + gravity
        a_x = c * point.xddot + s * specific_y
        a_y = c * specific_y - s * point.xddot
        readings.append(F.stack([a_x, a_y, point.alphadot], axis=-1))
    return F.stack(readings, axis=-2)


def integrate_root_velocity(velocity, dt: float, axis: int = -1):
    """Cumulative trapezoidal integral of the horizontal root velocity.

    The first sample is zero.
    """
    n = np.shape(F.value(velocity))[axis]
    head = _take(velocity, slice(0, n - 1), axis)
    tail = _take(velocity, slice(1, n), axis)
    increments = (head + tail) * (dt / 2)
    shape = list(np.shape(F.value(velocity)))
    shape[axis] = 1
    return F.concat([np.zeros(shape), F.cumsum(increments, axis=axis)], axis=axis)


def _take(x, index: slice, axis: int):
    ndim = np.ndim(F.value(x))
    full = [slice(None)] * ndim
    full[axis] = index
    return x[tuple(full)]


def _mirror_name(name: str) -> str:
    if name.endswith('_l'):
        return name[:-2] + '_r'
    elif name.endswith('_r'):
        return name[:-2] + '_l'
    return name


def mirror_points(points: Dict[str, PointKinematics]) -> Dict[str, PointKinematics]:
    """Relabel left and right points."""
    return {_mirror_name(name): point for name, point in points.items()}
