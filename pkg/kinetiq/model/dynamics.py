"""Generalized-force balance of the planar body in Kane's form.

The residual is assembled from segment CoM kinematics projected onto the
partial velocities of every generalized speed. For a rotational DOF the
partial velocity of a point is ``ẑ × (p − O)``, with ``O`` the joint centre,
so each row is the moment balance about that joint of the subtree it moves.

Residuals are normalized by body weight for the translational rows and by
body weight times body height for the rotational rows. With segment masses as
fractions of body mass and inertias per unit body mass, row ``j`` reads

    r_j = τ_j + Σ_c F_c · J_cj / s_j
          − Σ_s [m_s (a_s + g ŷ) · J_sj + Ĩ_s α̈_s Jω_sj] / (g s_j)

where ``s_j`` is 1 for the root translations and the body height otherwise.
"""
from dataclasses import dataclass
from typing import Dict, List, Sequence
import logging

import numpy as np

from kinetiq.autodiff import functional as F
from kinetiq.errors import DegenerateConfigurationError, InvalidInputError
from kinetiq.model.body import BodyConstants, SEGMENTS, GRAVITY
from kinetiq.model.kinematics import (GeneralizedState, PointKinematics,
                                      forward_kinematics, propagate_point,
                                      DOFS, N_DOFS, SIDES)

__all__ = ['ContactForce', 'kane_residual', 'mass_matrix',
           'forward_dynamics_oracle', 'inverse_dynamics', 'mechanical_energy',
           'row_scales', 'linear_system', 'MAX_CONDITION']

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e12


@dataclass(frozen=True)
class ContactForce:
    """Ground reaction force on a foot, in body-weight units.

    Args:
        foot: ``'l'`` or ``'r'``.
        fx: Horizontal force.
        fy: Vertical force, positive upward.
        offset: Application point along the foot axis from the ankle (m).
    """
    foot: str
    fx: np.ndarray
    fy: np.ndarray
    offset: np.ndarray


# Joint centre and moved segments of every rotational DOF
def _rotational_dofs():
    dofs = {'root_rot': ('root', SEGMENTS)}
    for side in SIDES:
        dofs[f'hip_{side}'] = (f'hip_{side}', (f'thigh_{side}', f'shank_{side}',
                                              f'foot_{side}'))
        dofs[f'knee_{side}'] = (f'knee_{side}', (f'shank_{side}', f'foot_{side}'))
        dofs[f'ankle_{side}'] = (f'ankle_{side}', (f'foot_{side}',))
    return dofs


_ROTATIONAL_DOFS = _rotational_dofs()


def row_scales(body: BodyConstants) -> np.ndarray:
    """Normalization length ``s_j`` of every residual row."""
    height = float(body.total_height)
    return np.array([1., 1.] + [height] * (N_DOFS - 2))


def _moment(point: PointKinematics, centre: PointKinematics, fx, fy):
    """z-moment about ``centre`` of the force ``(fx, fy)`` acting at ``point``."""
    return (point.x - centre.x) * fy - (point.y - centre.y) * fx


def _check_finite(state: GeneralizedState, contacts: Sequence[ContactForce]):
    values = [state.q, state.qdot, state.qddot, state.tau]
    for contact in contacts:
        values += [contact.fx, contact.fy, contact.offset]
    for value in values:
        if not np.all(np.isfinite(F.value(value))):
            raise InvalidInputError('Non-finite input to the dynamics residual')


def kane_residual(state: GeneralizedState,
                  body: BodyConstants,
                  contacts: Sequence[ContactForce] = (),
                  gravity: float = GRAVITY,
                  points: Dict[str, PointKinematics] = None):
    """Generalized-force imbalance of every DOF.

    Args:
        state: Generalized state including joint torques.
        body: Body constants.
        contacts: Ground reaction forces with their application points.
        gravity: Gravitational acceleration (m/s²). The normalization by body
            weight always uses 9.81 m/s², so zero gravity is allowed.
        points: Forward kinematics of ``state``, if already computed.

    Returns:
        Residual of shape ``(..., 9)``.

    Raises:
        InvalidInputError: Non-finite inputs.
    """
    _check_finite(state, contacts)
    if points is None:
        points = forward_kinematics(state, body)
    masses = dict(zip(SEGMENTS, [body.mass[k] for k in range(len(SEGMENTS))]))
    inertia = body.normalized_inertia
    inertias = dict(zip(SEGMENTS, [inertia[k] for k in range(len(SEGMENTS))]))
    height = body.total_height
    g_norm = GRAVITY

    contact_points = []
    for contact in contacts:
        ankle = points[f'ankle_{contact.foot}']
        contact_points.append((contact, propagate_point(ankle, contact.offset, 0.)))

    # Effective force per segment: m (a + g ŷ), in body-weight units
    effective = {}
    for segment in SEGMENTS:
        com = points[f'com_{segment}']
        effective[segment] = (masses[segment] * com.xddot / g_norm,
                              masses[segment] * (com.yddot + gravity) / g_norm)

    rows = []
    fx_total = sum(contact.fx for contact, _ in contact_points)
    fy_total = sum(contact.fy for contact, _ in contact_points)
    rows.append(fx_total - sum(effective[s][0] for s in SEGMENTS))
    rows.append(fy_total - sum(effective[s][1] for s in SEGMENTS))

    for j, dof in enumerate(DOFS[2:], start=2):
        centre_name, segments = _ROTATIONAL_DOFS[dof]
        centre = points[centre_name]
        inertial = 0.
        for segment in segments:
            com = points[f'com_{segment}']
            fx, fy = effective[segment]
            inertial = inertial + _moment(com, centre, fx, fy) \
                + inertias[segment] * com.alphaddot / g_norm
        applied = 0.
        for contact, point in contact_points:
            if dof == 'root_rot' or dof.endswith(f'_{contact.foot}'):
                applied = applied + _moment(point, centre, contact.fx, contact.fy)
        row = (applied - inertial) / height
        if j >= 3:
            row = row + state.tau[..., j - 3]
        rows.append(_broadcast_row(row, state))
    rows[0] = _broadcast_row(rows[0], state)
    rows[1] = _broadcast_row(rows[1], state)
    return F.stack(rows, axis=-1)


def _broadcast_row(row, state: GeneralizedState):
    """Give constant rows the batch shape of the state."""
    shape = state.batch_shape
    if np.shape(F.value(row)) == shape:
        return row
    return row + np.zeros(shape)


def linear_system(q, qdot, tau, contact_sets: Sequence[Sequence[ContactForce]],
                  body: BodyConstants, gravity: float = GRAVITY):
    """Affine form ``r(q̈) = r0 − A q̈`` of the residual at a single state.

    The residual is evaluated at q̈ = 0 for every contact set and at each unit
    acceleration. All contact sets must list the same feet in the same order.

    Returns:
        Offsets ``r0`` of shape ``(n_sets, 9)`` and the matrix ``A`` (9, 9).
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (N_DOFS,):
        raise InvalidInputError(f'Oracle expects a single state, got {q.shape}')
    contact_sets = [list(contacts) for contacts in contact_sets] or [[]]
    n_sets = len(contact_sets)
    unit_accelerations = np.vstack([np.zeros((n_sets, N_DOFS)), np.eye(N_DOFS)])
    n = len(unit_accelerations)
    state = GeneralizedState(q=np.tile(q, (n, 1)),
                             qdot=np.tile(np.asarray(qdot, dtype=float), (n, 1)),
                             qddot=unit_accelerations,
                             tau=np.tile(np.asarray(tau, dtype=float), (n, 1)))
    contacts = []
    for i, reference in enumerate(contact_sets[0]):
        if any(len(other) != len(contact_sets[0]) or other[i].foot != reference.foot
               for other in contact_sets):
            raise InvalidInputError('Contact sets must share their feet')
        column = {}
        for name in ['fx', 'fy', 'offset']:
            values = [float(getattr(other[i], name)) for other in contact_sets]
            column[name] = np.array(values + [values[0]] * N_DOFS)
        contacts.append(ContactForce(reference.foot, **column))
    r = kane_residual(state, body, contacts, gravity=gravity)
    r0 = r[:n_sets]
    A = (r0[0][None, :] - r[n_sets:]).T
    return r0, A


def _sampled_residuals(q, qdot, tau, contacts, body, gravity):
    """Residual at q̈ = 0 and the acceleration matrix."""
    r0, A = linear_system(q, qdot, tau, [contacts], body, gravity)
    return r0[0], A


def mass_matrix(q, body: BodyConstants) -> np.ndarray:
    """Generalized mass matrix per unit body mass, sampled from the residual."""
    _, A = _sampled_residuals(q, np.zeros(N_DOFS), np.zeros(N_DOFS - 3), (), body,
                            GRAVITY)
    return A * (GRAVITY * row_scales(body))[:, None]


def forward_dynamics_oracle(q, qdot, tau, contacts: Sequence[ContactForce],
                            body: BodyConstants,
                            gravity: float = GRAVITY,
                            prescribed=None) -> np.ndarray:
    """Generalized accelerations that make the residual vanish.

    Args:
        q: Coordinates, shape ``(9,)``.
        qdot: Speeds, shape ``(9,)``.
        tau: Joint torques, shape ``(6,)``. Rows of prescribed DOFs are not
            balanced, so their torques are irrelevant.
        contacts: Ground reaction forces, fixed during the solve.
        body: Body constants.
        gravity: Gravitational acceleration.
        prescribed: Optional accelerations ``(9,)`` with NaN for free DOFs.
            Only the free rows are solved.

    Returns:
        Accelerations ``(9,)``.

    Raises:
        DegenerateConfigurationError: The free block of the mass matrix is
            singular or too badly conditioned.
    """
    r0, A = _sampled_residuals(q, qdot, tau, contacts, body, gravity)
    qddot = np.zeros(N_DOFS)
    if prescribed is None:
        free = np.ones(N_DOFS, dtype=bool)
    else:
        prescribed = np.asarray(prescribed, dtype=float)
        free = np.isnan(prescribed)
        qddot[~free] = prescribed[~free]
    if not np.any(free):
        return qddot

    block = A[np.ix_(free, free)]
    rhs = r0[free] - A[np.ix_(free, ~free)] @ qddot[~free]
    condition = np.linalg.cond(block)
    if not np.isfinite(condition) or condition > MAX_CONDITION:
        raise DegenerateConfigurationError(
            f'Mass matrix is singular (condition number {condition:.3g}) at '
            f'q = {np.round(q, 4).tolist()}')
    qddot[free] = np.linalg.solve(block, rhs)
    return qddot


def inverse_dynamics(state: GeneralizedState,
                     body: BodyConstants,
                     contacts: Sequence[ContactForce] = (),
                     gravity: float = GRAVITY):
    """Joint torques balancing the joint rows for the given motion.

    The torques in ``state`` are replaced. The root rows are not affected by
    joint torques; their residual is returned as well.

    Returns:
        Tuple of torques ``(..., 6)`` and root residual ``(..., 3)``.
    """
    zero_torque = GeneralizedState(state.q, state.qdot, state.qddot, None)
    r = kane_residual(zero_torque, body, contacts, gravity=gravity)
    return -r[..., 3:], r[..., :3]


def mechanical_energy(state: GeneralizedState,
                      body: BodyConstants,
                      gravity: float = GRAVITY):
    """Kinetic plus gravitational potential energy per unit body mass (J/kg)."""
    points = forward_kinematics(state, body)
    inertia = body.normalized_inertia
    energy = 0.
    for k, segment in enumerate(SEGMENTS):
        com = points[f'com_{segment}']
        energy = energy + body.mass[k] * (
            0.5 * (com.xdot ** 2 + com.ydot ** 2) + gravity * com.y) \
            + 0.5 * inertia[k] * com.alphadot ** 2
    return energy
