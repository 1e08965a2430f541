"""Synthetic trials with exact ground truth.

Dynamic motions are integrated with a fixed-step RK4 scheme on the full
body dynamics, including the ground contact model:

* ``gait``: joints track periodic gait-like profiles through prescribed
  accelerations with PD correction. The root is free. The trunk is kept
  upright by choosing the friction logit of both feet so the horizontal
  ground force produces the required pitch acceleration.
* ``stand``: ``gait`` with zero joint amplitudes.
* ``freefall``: zero torques, released above the ground.
* ``pendulum``: zero torques, released above the ground with initial hip
  and knee rates, so the legs swing while the body falls.
* ``gait_kinematic``: analytic gait kinematics at constant forward speed.
  Only IMU signals and kinematic references are produced.

References are sampled from the integrated states, so they satisfy the
dynamics residual to solver precision.
"""
from dataclasses import dataclass, asdict, replace
from typing import Dict
import logging

import numpy as np

from kinetiq.data.trials import ImuSequence, TrialRecord
from kinetiq.errors import InvalidInputError
from kinetiq.model.body import (BodyConstants, ImuPlacement, GRAVITY, SENSORS,
                                default_placement, load_template)
from kinetiq.model.contact import (AnkleContactState, ContactParams,
                                   contact_forces)
from kinetiq.model.dynamics import (ContactForce, forward_dynamics_oracle,
                                    linear_system)
from kinetiq.model.kinematics import (GeneralizedState, DOFS, N_DOFS,
                                      DOF_MIRROR, TORQUE_MIRROR,
                                      N_TORQUES, SIDES, TORQUE_DOFS,
                                      forward_kinematics, virtual_imu)

__all__ = ['MOTION_KINDS', 'MotionSpec', 'joint_profile', 'synth_trial',
           'mirror_references', 'standing_height']

logger = logging.getLogger(__name__)

MOTION_KINDS = ('gait', 'gait_kinematic', 'stand', 'freefall', 'pendulum')
_DYNAMIC_KINDS = ('gait', 'stand', 'freefall', 'pendulum')

# Tracking gains of the joints and of the trunk pitch
_JOINT_GAINS = (400., 40.)
_PITCH_GAINS = (100., 20.)
_MAX_FRICTION_USE = 0.99


@dataclass(frozen=True)
class MotionSpec:
    """Parameters of a synthetic motion.

    Args:
        kind: One of `MOTION_KINDS`.
        duration: Trial duration (s).
        period: Gait cycle period (s).
        hip_amplitude: Hip flexion amplitude (rad).
        knee_amplitude: Knee flexion amplitude; the knee spans
            ``[-2·knee_amplitude, 0]`` (rad).
        ankle_amplitude: Ankle amplitude (rad).
        speed: Forward speed of ``gait_kinematic`` (m/s).
        ramp: Duration over which dynamic gait profiles fade in (s).
        drop_height: Initial clearance of the lowest foot point for airborne
            motions (m).
        swing_rate: Initial hip rate of ``pendulum`` (rad/s).
        mirror: Swap the roles of the left and right legs.
    """
    kind: str = 'gait'
    duration: float = 4.
    period: float = 1.1
    hip_amplitude: float = 0.3
    knee_amplitude: float = 0.25
    ankle_amplitude: float = 0.15
    speed: float = 1.2
    ramp: float = 0.5
    drop_height: float = 8.
    swing_rate: float = 2.
    mirror: bool = False

    def __post_init__(self):
        if self.kind not in MOTION_KINDS:
            raise InvalidInputError(f'Unknown motion {self.kind}, '
                                    f'choose from {MOTION_KINDS}')
        if not self.duration > 0 or not self.period > 0:
            raise InvalidInputError('Duration and period must be positive')

    @classmethod
    def from_name(cls, name: str, **kwargs) -> 'MotionSpec':
        if name == 'stand':
            kwargs = {'hip_amplitude': 0., 'knee_amplitude': 0.,
                      'ankle_amplitude': 0., **kwargs}
        return cls(kind=name, **kwargs)

    def mirrored(self) -> 'MotionSpec':
        return replace(self, mirror=not self.mirror)

    def to_dict(self) -> dict:
        return asdict(self)


def _smoothstep(t, duration):
    """Quintic fade-in and its first two time derivatives."""
    if duration <= 0:
        return np.ones_like(t), np.zeros_like(t), np.zeros_like(t)
    u = np.clip(t / duration, 0, 1)
    inside = (t > 0) & (t < duration)
    s = u ** 3 * (10 - 15 * u + 6 * u ** 2)
    ds = np.where(inside, 30 * u ** 2 * (1 - u) ** 2 / duration, 0.)
    dds = np.where(inside, 60 * u * (1 - u) * (1 - 2 * u) / duration ** 2, 0.)
    return s, ds, dds


def joint_profile(spec: MotionSpec, t, ramp: bool = True):
    """Joint reference angles, rates and accelerations.

    Args:
        spec: Motion parameters.
        t: Times (s).
        ramp: Fade the profiles in over ``spec.ramp``.

    Returns:
        Tuple ``(q, q̇, q̈)`` each of shape ``t.shape + (6,)`` ordered as
        `TORQUE_DOFS`.
    """
    t = np.asarray(t, dtype=float)
    omega = 2 * np.pi / spec.period
    phases = {'l': 0., 'r': np.pi}
    if spec.mirror:
        phases = {'l': np.pi, 'r': 0.}
    # Knee flexion −A·(1 − cos(ωt + φ + 0.6)) stays within [−2A, 0]
    shapes = {'hip': (spec.hip_amplitude, 0.),
              'knee': (spec.knee_amplitude, 0.6),
              'ankle': (spec.ankle_amplitude, 1.)}

    if ramp:
        s, ds, dds = _smoothstep(t, spec.ramp)
    else:
        s, ds, dds = np.ones_like(t), np.zeros_like(t), np.zeros_like(t)
    q, qd, qdd = [], [], []
    for dof in TORQUE_DOFS:
        joint, side = dof.split('_')
        amplitude, lead = shapes[joint]
        angle = omega * t + phases[side] + lead
        if joint == 'knee':
            f = -amplitude * (1 - np.cos(angle))
            df = -amplitude * omega * np.sin(angle)
            ddf = -amplitude * omega ** 2 * np.cos(angle)
        else:
            f = amplitude * np.sin(angle)
            df = amplitude * omega * np.cos(angle)
            ddf = -amplitude * omega ** 2 * np.sin(angle)
        q.append(s * f)
        qd.append(ds * f + s * df)
        qdd.append(dds * f + 2 * ds * df + s * ddf)
    return tuple(np.stack(x, axis=-1) for x in (q, qd, qdd))


def _ankle_states(points, friction_logits: Dict[str, float]):
    return {side: AnkleContactState.from_points(points[f'ankle_{side}'],
                                                friction_logits[side])
            for side in SIDES}


def standing_height(body: BodyConstants, params: ContactParams = ContactParams(),
                    joints=None) -> float:
    """Root height at which both flat feet carry half the body weight."""
    q = np.zeros(N_DOFS)
    if joints is not None:
        q[3:] = joints
    points = forward_kinematics(
        GeneralizedState(q=q, qdot=np.zeros(N_DOFS), qddot=np.zeros(N_DOFS)), body)
    # k·softplus(−β p)/β = 1/2
    penetration = -np.log(np.expm1(0.5 * params.beta / params.stiffness)) / params.beta
    ankle_y = max(float(points['ankle_l'].y), float(points['ankle_r'].y))
    return penetration - ankle_y


class _Simulator:
    """Right-hand side of the body dynamics with the motion controller."""
    def __init__(self, spec: MotionSpec, body: BodyConstants,
                 params: ContactParams, gravity: float):
        self.spec = spec
        self.body = body
        self.params = params
        self.gravity = gravity
        self.prescribed = spec.kind in ('gait', 'stand')

    def contacts(self, q, qdot):
        state = GeneralizedState(q=q, qdot=qdot, qddot=np.zeros(N_DOFS))
        points = forward_kinematics(state, self.body)
        solution = contact_forces(_ankle_states(points, {'l': 0., 'r': 0.}),
                                  self.body, self.params)
        return solution.forces

    def evaluate(self, t, q, qdot):
        """Accelerations, torques, contact forces and friction logits."""
        forces = self.contacts(q, qdot)
        if not self.prescribed:
            tau = np.zeros(N_TORQUES)
            qddot = forward_dynamics_oracle(q, qdot, tau, forces, self.body,
                                            self.gravity)
            return qddot, tau, forces, {'l': 0., 'r': 0.}

        q_ref, qd_ref, qdd_ref = joint_profile(self.spec, t)
        kp, kd = _JOINT_GAINS
        prescribed = np.full(N_DOFS, np.nan)
        prescribed[3:] = qdd_ref + kp * (q_ref - q[3:]) + kd * (qd_ref - qdot[3:])
        free = np.isnan(prescribed)

        support = float(sum(float(force.fy) for force in forces))
        unit = [ContactForce(f.foot, float(f.fy) / support if support > 1e-9 else 0.,
                             f.fy, f.offset) for f in forces]
        r0, A = linear_system(q, qdot, np.zeros(N_TORQUES), [forces, unit],
                              self.body, self.gravity)

        def solve(offset):
            qddot = np.where(free, 0., prescribed)
            rhs = offset[free] - A[np.ix_(free, ~free)] @ qddot[~free]
            qddot[free] = np.linalg.solve(A[np.ix_(free, free)], rhs)
            return qddot

        passive = solve(r0[0])
        per_unit = solve(r0[1]) - passive
        pitch = DOFS.index('root_rot')
        force = 0.
        if support > 1e-9 and abs(per_unit[pitch]) > 1e-12:
            kp_rot, kd_rot = _PITCH_GAINS
            target = -kp_rot * q[pitch] - kd_rot * qdot[pitch]
            force = (target - passive[pitch]) / per_unit[pitch]
            limit = _MAX_FRICTION_USE * self.params.mu_max * support
            force = float(np.clip(force, -limit, limit))
        qddot = passive + force * per_unit
        offset = r0[0] + force * (r0[1] - r0[0])
        tau = -(offset - A @ qddot)[3:]

        usage = force / (self.params.mu_max * support) if support > 1e-9 else 0.
        logit = float(np.arctanh(usage))
        applied = [ContactForce(f.foot, self.params.mu_max * np.tanh(logit) * float(f.fy),
                                f.fy, f.offset) for f in forces]
        return qddot, tau, applied, {'l': logit, 'r': logit}

    def derivative(self, t, y):
        q, qdot = y[:N_DOFS], y[N_DOFS:]
        qddot = self.evaluate(t, q, qdot)[0]
        return np.concatenate([qdot, qddot])


def _initial_state(spec: MotionSpec, body: BodyConstants, params: ContactParams):
    q, qdot = np.zeros(N_DOFS), np.zeros(N_DOFS)
    if spec.kind in ('gait', 'stand'):
        q_ref, qd_ref, _ = joint_profile(spec, 0.)
        q[3:], qdot[3:] = q_ref, qd_ref
        q[1] = standing_height(body, params, q_ref)
        return q, qdot

    state = GeneralizedState(q=q, qdot=qdot, qddot=np.zeros(N_DOFS))
    points = forward_kinematics(state, body)
    lowest = min(float(points[f'{name}_{side}'].y) for name in ['ankle', 'heel', 'toe']
                 for side in SIDES)
    q[1] = spec.drop_height - lowest
    if spec.kind == 'pendulum':
        lead, trail = ('r', 'l') if spec.mirror else ('l', 'r')
        qdot[DOFS.index(f'hip_{lead}')] = spec.swing_rate
        qdot[DOFS.index(f'hip_{trail}')] = -spec.swing_rate
        qdot[DOFS.index(f'knee_{lead}')] = -0.5 * spec.swing_rate
    return q, qdot


def _simulate(spec: MotionSpec, body: BodyConstants, params: ContactParams,
              gravity: float, dt: float, sim_dt: float):
    substeps = int(round(dt / sim_dt))
    if substeps < 1 or abs(substeps * sim_dt - dt) > 1e-12:
        raise InvalidInputError(f'Sample interval {dt} must be a multiple of '
                                f'the integration step {sim_dt}')
    h = dt / substeps
    n_samples = int(round(spec.duration / dt))
    simulator = _Simulator(spec, body, params, gravity)
    q, qdot = _initial_state(spec, body, params)
    y = np.concatenate([q, qdot])

    samples = {name: [] for name in ['q', 'qdot', 'qddot', 'tau', 'fx', 'fy', 'logit']}
    for k in range(n_samples):
        t = k * dt
        qddot, tau, forces, logits = simulator.evaluate(t, y[:N_DOFS], y[N_DOFS:])
        samples['q'].append(y[:N_DOFS].copy())
        samples['qdot'].append(y[N_DOFS:].copy())
        samples['qddot'].append(qddot)
        samples['tau'].append(tau)
        samples['fx'].append([sum(float(f.fx) for f in forces if f.foot == side)
                              for side in SIDES])
        samples['fy'].append([sum(float(f.fy) for f in forces if f.foot == side)
                              for side in SIDES])
        samples['logit'].append([logits[side] for side in SIDES])
        if k == n_samples - 1:
            break
        for substep in range(substeps):
            s = t + substep * h
            k1 = simulator.derivative(s, y)
            k2 = simulator.derivative(s + h / 2, y + h / 2 * k1)
            k3 = simulator.derivative(s + h / 2, y + h / 2 * k2)
            k4 = simulator.derivative(s + h, y + h * k3)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise InvalidInputError(f'Simulation of {spec.kind} diverged at t = {t:.3f} s')
    return {name: np.array(values) for name, values in samples.items()}


def _kinematic_gait(spec: MotionSpec, body: BodyConstants, dt: float,
                    params: ContactParams):
    t = np.arange(int(round(spec.duration / dt))) * dt
    q_ref, qd_ref, qdd_ref = joint_profile(spec, t, ramp=False)
    n = len(t)
    q, qdot, qddot = np.zeros((n, N_DOFS)), np.zeros((n, N_DOFS)), np.zeros((n, N_DOFS))
    q[:, 0] = spec.speed * t
    qdot[:, 0] = spec.speed
    q[:, 1] = standing_height(body, params)
    q[:, 3:], qdot[:, 3:], qddot[:, 3:] = q_ref, qd_ref, qdd_ref
    return {'q': q, 'qdot': qdot, 'qddot': qddot}


def mirror_references(references: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """Swap left and right in every reference stream."""
    mirrored = {}
    for name, values in references.items():
        if name in ('q', 'qdot', 'qddot'):
            mirrored[name] = values[..., DOF_MIRROR]
        elif name == 'tau':
            mirrored[name] = values[..., TORQUE_MIRROR]
        elif name in ('grf', 'friction_logit'):
            mirrored[name] = values[:, ::-1]
        elif name == 'gc':
            mirrored[name] = np.concatenate([values[:, 6:12], values[:, 0:6],
                                             values[:, [13, 12]]], axis=-1)
        else:
            mirrored[name] = values
    return mirrored


def synth_trial(spec: MotionSpec,
                body: BodyConstants = None,
                placement: ImuPlacement = None,
                noise: float = 0.,
                dt: float = 0.01,
                seed: int = 0,
                contact: ContactParams = ContactParams(),
                gravity: float = GRAVITY,
                sim_dt: float = 1e-3,
                name: str = None) -> TrialRecord:
    """Synthetic trial with virtual IMU signals and exact references.

    Args:
        spec: Motion to generate.
        body: Body constants, the template body by default.
        placement: Sensor placement, the default placement of all seven
            sensors if not given.
        noise: Relative IMU noise level. Each channel receives Gaussian noise
            with ``noise`` times its standard deviation over the trial.
        dt: Sample interval (s).
        seed: Noise seed.
        contact: Ground contact parameters.
        gravity: Gravitational acceleration.
        sim_dt: Integration step of dynamic motions (s).
        name: Trial name.

    Returns:
        Trial with references ``q``, ``qdot``, ``qddot`` and ``speed``. Dynamic
        motions add ``tau``, ``grf`` ``(T, 2, 2)`` as ``(F_x, F_y)`` per foot
        in body weights, ``friction_logit`` ``(T, 2)`` and the 14 ground
        contact channels ``gc``.
    """
    if body is None:
        body = load_template()
    if placement is None:
        placement = default_placement(body, SENSORS)
    if name is None:
        name = f'synth_{spec.kind}{"_mirrored" if spec.mirror else ""}_{seed}'
    logger.debug(f'Synthesizing {name}: {spec}')

    if spec.kind in _DYNAMIC_KINDS:
        samples = _simulate(spec, body, contact, gravity, dt, sim_dt)
    else:
        samples = _kinematic_gait(spec, body, dt, contact)
    state = GeneralizedState(q=samples['q'], qdot=samples['qdot'],
                             qddot=samples['qddot'],
                             tau=samples.get('tau'))
    points = forward_kinematics(state, body, placement)
    imu = np.asarray(virtual_imu(points, placement, gravity))

    logits = samples.get('logit', np.zeros((len(imu), 2)))
    gc = []
    for k, side in enumerate(SIDES):
        ankle = AnkleContactState.from_points(points[f'ankle_{side}'], logits[:, k])
        gc += ankle.kinematic_channels()
    gc = np.stack(gc + [logits[:, 0], logits[:, 1]], axis=-1)

    references = {'q': state.q, 'qdot': state.qdot, 'qddot': state.qddot,
                  'speed': state.qdot[:, 0], 'gc': gc}
    if spec.kind in _DYNAMIC_KINDS:
        references['tau'] = state.tau
        references['grf'] = np.stack([samples['fx'], samples['fy']], axis=-1)
        references['friction_logit'] = logits

    if noise > 0:
        rng = np.random.default_rng(seed)
        sigma = np.std(imu, axis=0, keepdims=True)
        imu = imu + noise * sigma * rng.standard_normal(imu.shape)

    return TrialRecord(name=name,
                       imu=ImuSequence(imu, placement.sensors, 1 / dt),
                       height=float(body.total_height), mass=float(body.total_mass),
                       placement=placement,
                       references=references)
