"""Sliding-point ground contact driven by global ankle kinematics.

A single contact point slides between heel and toe with the foot angle,
``λ = (tanh(gain·α) + 1) / 2`` with λ = 1 at the toe. The vertical force is a
smoothed spring-damper on the contact point height and the horizontal force a
fraction ``μ_max·tanh(μ̂)`` of it. Forces are in body-weight units with the
ground at ``y = 0`` and ``F_y`` positive upward.
"""
from dataclasses import dataclass, asdict
from typing import Dict, List, Tuple
import logging

import numpy as np

from kinetiq.autodiff import functional as F
from kinetiq.errors import ConfigError, InvalidInputError
from kinetiq.model.body import BodyConstants, HEEL_FRACTION, TOE_FRACTION, SEGMENTS
from kinetiq.model.dynamics import ContactForce
from kinetiq.model.kinematics import PointKinematics, SIDES

__all__ = ['ContactParams', 'FootGeometry', 'AnkleContactState',
           'ContactPoint', 'contact_point', 'grf', 'contact_forces',
           'ContactSolution', 'N_CONTACT_CHANNELS']

logger = logging.getLogger(__name__)

N_CONTACT_CHANNELS = 14
_KINEMATIC_CHANNELS = ('x', 'y', 'alpha', 'xdot', 'ydot', 'alphadot')


@dataclass(frozen=True)
class ContactParams:
    """Ground contact model parameters (θ_gc).

    Args:
        beta: Smoothing of the unilateral spring (1/m).
        stiffness: Spring stiffness (body weight per m).
        damping: Damping coefficient, applied as ``1 − damping·ṗ_y``.
        mu_max: Maximum friction coefficient, in (0, 1].
        blend_gain: Gain of the heel-to-toe blend (1/rad).
        two_point: Apply separate heel and toe forces instead of one sliding
            contact point.
    """
    beta: float = 300.
    stiffness: float = 100.
    damping: float = 0.75
    mu_max: float = 0.5
    blend_gain: float = 7.
    two_point: bool = False

    def __post_init__(self):
        for name in ['beta', 'stiffness', 'damping', 'mu_max', 'blend_gain']:
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise InvalidInputError(f'Contact parameter {name} must be '
                                        f'strictly positive, got {value}')
        if self.mu_max > 1:
            raise InvalidInputError(f'mu_max must lie in (0, 1], got {self.mu_max}')

    @classmethod
    def from_config(cls, config) -> 'ContactParams':
        kwargs = {}
        for key, val in dict(config).items():
            if key not in cls.__dataclass_fields__:
                raise ConfigError(f'Unknown contact parameter {key}')
            if key == 'two_point':
                if not isinstance(val, bool):
                    raise ConfigError(f'contact.two_point must be a bool, got {val!r}')
            elif isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(f'contact.{key} must be a number, got {val!r}')
            else:
                val = float(val)
            kwargs[key] = val
        try:
            return cls(**kwargs)
        except InvalidInputError as e:
            raise ConfigError(str(e)) from e

    def as_vector(self) -> np.ndarray:
        return np.array([self.beta, self.stiffness, self.damping, self.mu_max,
                         self.blend_gain])

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FootGeometry:
    """Heel and toe positions along the foot axis from the ankle (m)."""
    heel: float
    toe: float

    def __post_init__(self):
        if not self.heel < self.toe:
            raise InvalidInputError(f'Heel ({self.heel}) must lie behind the '
                                    f'toe ({self.toe})')

    @classmethod
    def from_body(cls, body: BodyConstants, side: str) -> 'FootGeometry':
        # Body constants are never trained, so contact geometry is a constant
        length = F.value(body.length)[SEGMENTS.index(f'foot_{side}')]
        return cls(heel=float(HEEL_FRACTION * length), toe=float(TOE_FRACTION * length))


@dataclass(frozen=True)
class AnkleContactState:
    """Global ankle kinematics and friction logit of one foot."""
    x: np.ndarray
    y: np.ndarray
    alpha: np.ndarray
    xdot: np.ndarray
    ydot: np.ndarray
    alphadot: np.ndarray
    friction_logit: np.ndarray

    @classmethod
    def decode(cls, gc, side: str) -> 'AnkleContactState':
        """Read one foot from the 14 ground-contact channels.

        Channels 0-5 hold the left ankle ``(x, y, α, ẋ, ẏ, α̇)``, 6-11 the
        right ankle and 12, 13 the left and right friction logits.
        """
        if np.shape(F.value(gc))[-1] != N_CONTACT_CHANNELS:
            raise InvalidInputError(f'Expected {N_CONTACT_CHANNELS} ground '
                                    f'contact channels, got '
                                    f'{np.shape(F.value(gc))[-1]}')
        k = SIDES.index(side)
        base = 6 * k
        return cls(*(gc[..., base + i] for i in range(6)),
                   friction_logit=gc[..., 12 + k])

    @classmethod
    def from_points(cls, ankle: PointKinematics, friction_logit) -> 'AnkleContactState':
        return cls(x=ankle.x, y=ankle.y, alpha=ankle.alpha, xdot=ankle.xdot,
                   ydot=ankle.ydot, alphadot=ankle.alphadot,
                   friction_logit=friction_logit)

    def kinematic_channels(self) -> List:
        return [getattr(self, name) for name in _KINEMATIC_CHANNELS]


@dataclass(frozen=True)
class ContactPoint:
    """Contact point position, velocity and offset along the foot axis."""
    x: np.ndarray
    y: np.ndarray
    xdot: np.ndarray
    ydot: np.ndarray
    offset: np.ndarray


def _foot_point(ankle: AnkleContactState, offset, offset_rate=0.) -> ContactPoint:
    c, s = F.cos(ankle.alpha), F.sin(ankle.alpha)
    return ContactPoint(
        x=ankle.x + c * offset,
        y=ankle.y + s * offset,
        xdot=ankle.xdot - ankle.alphadot * s * offset + offset_rate * c,
        ydot=ankle.ydot + ankle.alphadot * c * offset + offset_rate * s,
        offset=offset)


def contact_point(ankle: AnkleContactState,
                  geometry: FootGeometry,
                  blend_gain: float = 7.) -> ContactPoint:
    """Sliding contact point between heel and toe.

    The velocity includes the sliding term ``λ̇ (toe − heel)`` along the foot.
    """
    blend_tanh = F.tanh(ankle.alpha * blend_gain)
    blend = (blend_tanh + 1) / 2
    blend_rate = (blend_gain / 2) * (1 - blend_tanh * blend_tanh) * ankle.alphadot
    span = geometry.toe - geometry.heel
    return _foot_point(ankle, geometry.heel + blend * span, blend_rate * span)


def grf(point: ContactPoint, friction_logit, params: ContactParams = ContactParams()):
    """Planar ground reaction force at a contact point.

    Returns:
        ``(F_x, F_y)`` in body-weight units.
    """
    spring = params.stiffness * F.softplus(-params.beta * point.y) / params.beta
    damping = F.maximum(1 - params.damping * point.ydot, 0.)
    fy = spring * damping
    fx = params.mu_max * F.tanh(friction_logit) * fy
    return fx, fy


@dataclass(frozen=True)
class ContactSolution:
    """Forces and contact points of both feet."""
    forces: List[ContactForce]
    points: Dict[str, List[ContactPoint]]

    def vertical_force(self, side: str):
        """Total vertical force on one foot."""
        total = 0.
        for force in self.forces:
            if force.foot == side:
                total = total + force.fy
        return total

    def horizontal_force(self, side: str):
        total = 0.
        for force in self.forces:
            if force.foot == side:
                total = total + force.fx
        return total


def contact_forces(ankles: Dict[str, AnkleContactState],
                   body: BodyConstants,
                   params: ContactParams = ContactParams()) -> ContactSolution:
    """Ground reaction forces of both feet.

    Args:
        ankles: Ankle contact states keyed by side.
        body: Body constants, providing the foot geometry.
        params: Contact parameters. With ``two_point`` set, heel and toe each
            carry a force from their own height and velocity.
    """
    forces, points = [], {}
    for side in SIDES:
        ankle = ankles[side]
        geometry = FootGeometry.from_body(body, side)
        if params.two_point:
            side_points = [_foot_point(ankle, geometry.heel),
                           _foot_point(ankle, geometry.toe)]
        else:
            side_points = [contact_point(ankle, geometry, params.blend_gain)]
        for point in side_points:
            fx, fy = grf(point, ankle.friction_logit, params)
            forces.append(ContactForce(side, fx, fy, point.offset))
        points[side] = side_points
    return ContactSolution(forces=forces, points=points)
