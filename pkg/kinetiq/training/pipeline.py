"""From decoded network outputs to the loss bundle of one sequence.

The chain is: decoded state → forward kinematics → virtual IMU → ground
contact forces → generalized-force residual → loss terms. Everything works on
numpy arrays and on `Tensor` values alike.
"""
from typing import Dict, Sequence
import logging

import numpy as np

from kinetiq.autodiff import functional as F
from kinetiq.model.body import BodyConstants, ImuPlacement, GRAVITY
from kinetiq.model.contact import (AnkleContactState, ContactParams,
                                   ContactSolution, contact_forces)
from kinetiq.model.dynamics import kane_residual
from kinetiq.model.kinematics import SIDES, forward_kinematics, virtual_imu
from kinetiq.network.layout import NetworkOutput
from kinetiq.training.losses import (LossBundle, LossConfig, loss_bounds,
                                     loss_footspeed, loss_gc, loss_imu,
                                     loss_kane, loss_slide, loss_temporal,
                                     loss_torque, total_loss)

__all__ = ['PhysicsEvaluation', 'evaluate_physics', 'sequence_losses',
           'foot_sensor_speed']

logger = logging.getLogger(__name__)


class PhysicsEvaluation:
    """Intermediate quantities of the physics chain for one sequence."""
    def __init__(self, output: NetworkOutput, points: Dict, virtual,
                 ankles: Dict[str, AnkleContactState], contact: ContactSolution,
                 residual):
        self.output = output
        self.state = output.state
        self.points = points
        self.virtual = virtual
        self.ankles = ankles
        self.contact = contact
        self.residual = residual

    def grf(self) -> np.ndarray:
        """Ground reaction forces ``(..., T, 2, 2)`` as ``(F_x, F_y)`` per foot."""
        return np.stack([np.stack([np.asarray(F.value(self.contact.horizontal_force(side))),
                                   np.asarray(F.value(self.contact.vertical_force(side)))],
                                  axis=-1)
                         for side in SIDES], axis=-2)


def evaluate_physics(output: NetworkOutput,
                     body: BodyConstants,
                     placement: ImuPlacement,
                     contact: ContactParams = ContactParams(),
                     separate_ankle: bool = True,
                     gravity: float = GRAVITY) -> PhysicsEvaluation:
    """Run the physics chain on decoded outputs.

    Args:
        output: Decoded network outputs of a sequence ``(T, ...)``.
        body: Body constants of the subject.
        placement: Sensor placement, possibly with `Tensor` offsets.
        contact: Ground contact parameters.
        separate_ankle: Drive the contact model from the emitted ankle
            channels. Otherwise forward-kinematics ankles are used together
            with the emitted friction logits.
        gravity: Gravitational acceleration.
    """
    points = forward_kinematics(output.state, body, placement)
    virtual = virtual_imu(points, placement, gravity)
    ankles = {}
    for side in SIDES:
        emitted = AnkleContactState.decode(output.gc, side)
        if separate_ankle:
            ankles[side] = emitted
        else:
            ankles[side] = AnkleContactState.from_points(points[f'ankle_{side}'],
                                                         emitted.friction_logit)
    solution = contact_forces(ankles, body, contact)
    residual = kane_residual(output.state, body, solution.forces, gravity=gravity,
                             points=points)
    return PhysicsEvaluation(output, points, virtual, ankles, solution, residual)


def foot_sensor_speed(points: Dict, placement: ImuPlacement) -> Dict:
    """Horizontal velocity of each placed foot sensor, keyed by side."""
    return {side: points[f'imu_foot_{side}'].xdot for side in SIDES
            if f'foot_{side}' in placement.sensors}


def sequence_losses(output: NetworkOutput,
                    imu,
                    body: BodyConstants,
                    placement: ImuPlacement,
                    dt: float,
                    config: LossConfig = LossConfig(),
                    contact: ContactParams = ContactParams(),
                    active: Sequence[str] = None,
                    footspeed: Dict[str, np.ndarray] = None,
                    gravity: float = GRAVITY,
                    weights=None) -> LossBundle:
    """Loss bundle of a single sequence.

    Args:
        output: Decoded outputs ``(T, ...)``.
        imu: Measured IMU signals ``(T, n_sensors, 3)`` ordered as
            ``placement.sensors``.
        body: Body constants.
        placement: Sensor placement.
        dt: Sample interval (s).
        config: Loss switches and weights.
        contact: Ground contact parameters.
        active: Sensors seen by the network. Only these enter the IMU term.
        footspeed: Reference foot sensor speed per side ``(T,)``. Without it
            the foot speed term is zero.
        gravity: Gravitational acceleration.
        weights: Weights overriding ``config.weights``.
    """
    physics = evaluate_physics(output, body, placement, contact,
                               config.separate_ankle, gravity)
    state = physics.state
    mos = config.mean_of_squares
    if active is None:
        active = placement.sensors
    mask = np.array([sensor in active for sensor in placement.sensors])

    vertical = {side: physics.contact.vertical_force(side) for side in SIDES}
    point_forces = {side: [force.fy for force in physics.contact.forces
                           if force.foot == side] for side in SIDES}
    terms = {
        'kane': loss_kane(physics.residual),
        'temporal': loss_temporal(state.q, state.qdot, state.qddot, dt, mos),
        'imu': loss_imu(imu, physics.virtual, mask, mos),
        'gc': 0.,
        'bounds': loss_bounds(state.q, state.qdot, vertical, config.foot_support),
        'torque': loss_torque(state.tau, state.qdot[..., 0]),
        'slide': loss_slide(physics.contact.points, point_forces),
        'footspeed': 0.,
    }
    if config.separate_ankle:
        terms['gc'] = loss_gc(physics.ankles,
                              {side: physics.points[f'ankle_{side}'] for side in SIDES},
                              mos)
    if footspeed:
        estimated = foot_sensor_speed(physics.points, placement)
        sides = [side for side in estimated if side in footspeed]
        if sides:
            terms['footspeed'] = loss_footspeed({side: estimated[side] for side in sides},
                                                {side: footspeed[side] for side in sides})
    return total_loss(terms, config.weights if weights is None else weights)
