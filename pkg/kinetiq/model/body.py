"""Seven-segment planar body: segment constants, scaling and IMU placement."""
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Sequence, Tuple
import io
import os
import logging

import numpy as np

from kinetiq.autodiff import functional as F
from kinetiq.errors import InvalidInputError, InvalidPlacementError

__all__ = ['SEGMENTS', 'SENSORS', 'SENSOR_PARENTS', 'GRAVITY',
           'BodyConstants', 'ImuPlacement', 'load_template', 'scale_body',
           'template_path', 'default_placement']

logger = logging.getLogger(__name__)

GRAVITY = 9.81

SEGMENTS = ('trunk', 'thigh_l', 'thigh_r', 'shank_l', 'shank_r',
            'foot_l', 'foot_r')

SENSORS = ('pelvis', 'thigh_l', 'thigh_r', 'shank_l', 'shank_r',
           'foot_l', 'foot_r')
SENSOR_PARENTS = {'pelvis': 'trunk', 'thigh_l': 'thigh_l',
                  'thigh_r': 'thigh_r', 'shank_l': 'shank_l',
                  'shank_r': 'shank_r', 'foot_l': 'foot_l',
                  'foot_r': 'foot_r'}

# Heel and toe along the foot axis, as fractions of foot length
HEEL_FRACTION = -0.25
TOE_FRACTION = 0.75

TEMPLATE_VERSION = 1


def template_path(version: int = TEMPLATE_VERSION) -> str:
    return os.path.join(os.path.dirname(__file__), 'templates',
                        f'winter_v{version}.txt')


@dataclass(frozen=True)
class BodyConstants:
    """Segment constants of the planar body (θ_b).

    Arrays are ordered as `SEGMENTS`. Entries may be numpy arrays or
    `Tensor` objects, the latter when body constants are optimized.

    Args:
        mass: Segment mass as fraction of body mass.
        length: Segment length (m).
        com_offset: Centre of mass along the segment axis from the proximal
            joint (m).
        inertia: Moment of inertia about the centre of mass (kg m²).
        total_height: Body height (m).
        total_mass: Body mass (kg).
    """
    mass: np.ndarray
    length: np.ndarray
    com_offset: np.ndarray
    inertia: np.ndarray
    total_height: float
    total_mass: float

    def __post_init__(self):
        for name in ['mass', 'length', 'inertia']:
            values = F.value(getattr(self, name))
            if values.shape != (len(SEGMENTS),):
                raise InvalidInputError(f'Body {name} must have {len(SEGMENTS)} '
                                        f'entries, not shape {values.shape}')
            if not np.all(np.isfinite(values)) or np.any(values <= 0):
                raise InvalidInputError(f'Body {name} must be strictly '
                                        f'positive, got {values}')
        if np.any(F.value(self.com_offset) < 0):
            raise InvalidInputError('Centre-of-mass offsets must be >= 0')
        if self.total_height <= 0 or self.total_mass <= 0:
            raise InvalidInputError('Total height and mass must be positive')

    @property
    def normalized_inertia(self):
        """Inertia per unit body mass (m²), the unit the dynamics work in."""
        return self.inertia / self.total_mass

    def segment(self, name: str) -> Dict[str, float]:
        k = SEGMENTS.index(name)
        return {'mass': self.mass[k], 'length': self.length[k],
                'com_offset': self.com_offset[k], 'inertia': self.inertia[k]}

    def foot_offsets(self, side: str) -> Tuple[float, float]:
        """Heel and toe positions along the foot axis from the ankle (m)."""
        length = self.length[SEGMENTS.index(f'foot_{side}')]
        return HEEL_FRACTION * length, TOE_FRACTION * length

    def as_vector(self) -> np.ndarray:
        """Flattened (mass, length, com_offset, normalized inertia) vector."""
        return F.concat([F.value(self.mass), F.value(self.length),
                         F.value(self.com_offset),
                         F.value(self.normalized_inertia)])

    def mirrored(self) -> 'BodyConstants':
        order = [SEGMENTS.index(_swap_side(name)) for name in SEGMENTS]
        return replace(self, mass=self.mass[order], length=self.length[order],
                       com_offset=self.com_offset[order],
                       inertia=self.inertia[order])

    def to_dict(self) -> dict:
        return {'mass': F.value(self.mass).tolist(),
                'length': F.value(self.length).tolist(),
                'com_offset': F.value(self.com_offset).tolist(),
                'inertia': F.value(self.inertia).tolist(),
                'total_height': float(self.total_height),
                'total_mass': float(self.total_mass)}

    @classmethod
    def from_dict(cls, d: dict) -> 'BodyConstants':
        return cls(mass=np.array(d['mass'], dtype=float),
                   length=np.array(d['length'], dtype=float),
                   com_offset=np.array(d['com_offset'], dtype=float),
                   inertia=np.array(d['inertia'], dtype=float),
                   total_height=float(d['total_height']),
                   total_mass=float(d['total_mass']))


def _swap_side(name: str) -> str:
    if name.endswith('_l'):
        return name[:-2] + '_r'
    elif name.endswith('_r'):
        return name[:-2] + '_l'
    return name


def _read_template_table(path: str):
    reference = {}
    rows = []
    with open(path, 'r') as f:
        for line in f:
            if not line.startswith('#'):
                rows.append(line)
            elif ':' in line:
                key, val = line.lstrip('#').split(':', 1)
                if key.strip() in ('reference_height', 'reference_mass'):
                    reference[key.strip()] = float(val)
    # Field names come from the first uncommented row
    table = np.genfromtxt(io.StringIO(''.join(rows)), names=True, dtype=None,
                          encoding='utf-8')
    segments = tuple(str(s) for s in table['segment'])
    if segments != SEGMENTS:
        raise InvalidInputError(f'Template {path} lists segments {segments}, '
                                f'expected {SEGMENTS}')
    return table, reference


def load_template(path: str = None) -> BodyConstants:
    """Load the anthropometric template at its reference height and mass.

    Args:
        path: Template table. Defaults to the packaged Winter table.

    Returns:
        Template body constants.
    """
    table, reference = _read_template_table(path or template_path())
    height = reference['reference_height']
    body_mass = reference['reference_mass']

    length = table['length_fraction'].astype(float) * height
    mass = table['mass_fraction'].astype(float)
    gyration = table['inertia_coefficient'].astype(float) * length
    return BodyConstants(mass=mass,
                         length=length,
                         com_offset=table['com_fraction'].astype(float) * length,
                         inertia=mass * body_mass * gyration ** 2,
                         total_height=height,
                         total_mass=body_mass)


def scale_body(height: float,
               mass: float,
               template: BodyConstants = None) -> BodyConstants:
    """Scale template body constants to a participant.

    Lengths scale linearly with height, mass fractions are kept, and inertias
    scale with mass times squared length ratio.

    Args:
        height: Body height in m, within (1.0, 2.5).
        mass: Body mass in kg, within (20, 200).
        template: Template constants, by default `load_template()`.

    Raises:
        InvalidInputError: Height or mass out of range.
    """
    if not 1.0 < height < 2.5:
        raise InvalidInputError(f'Height {height} m outside (1.0, 2.5) m')
    if not 20 < mass < 200:
        raise InvalidInputError(f'Mass {mass} kg outside (20, 200) kg')
    if template is None:
        template = load_template()

    length_ratio = height / template.total_height
    mass_ratio = mass / template.total_mass
    body = BodyConstants(mass=template.mass * 1.0,
                         length=template.length * length_ratio,
                         com_offset=template.com_offset * length_ratio,
                         inertia=template.inertia * (mass_ratio * length_ratio ** 2),
                         total_height=height,
                         total_mass=mass)
    total = float(np.sum(F.value(body.mass)))
    template_total = float(np.sum(F.value(template.mass)))
    assert abs(total - template_total) < 1e-9, \
        f'Mass fractions sum to {total}, template sums to {template_total}'
    return body


@dataclass(frozen=True)
class ImuPlacement:
    """Sensor placement relative to the parent segments (θ_IMU).

    Args:
        sensors: Sensor names, subset of `SENSORS`.
        parents: Parent segment of each sensor.
        d_x: Offset along the segment frame x-axis (m).
        d_y: Offset along the segment frame y-axis (m).
        mounting_angle: Sensor rotation relative to the segment (rad).
    """
    sensors: Tuple[str, ...]
    parents: Tuple[str, ...]
    d_x: np.ndarray
    d_y: np.ndarray
    mounting_angle: np.ndarray

    def __post_init__(self):
        if len(self.sensors) != len(self.parents):
            raise InvalidPlacementError('Each sensor needs one parent segment')
        for sensor, parent in zip(self.sensors, self.parents):
            if parent not in SEGMENTS:
                raise InvalidPlacementError(f'Sensor {sensor} has unknown parent '
                                            f'segment {parent}')
        if len(set(self.parents)) != len(self.parents):
            raise InvalidPlacementError(f'At most one sensor per segment, got '
                                        f'parents {self.parents}')
        if len(self.sensors) > len(SENSORS):
            raise InvalidPlacementError(f'At most {len(SENSORS)} sensors')
        for name in ['d_x', 'd_y', 'mounting_angle']:
            shape = F.value(getattr(self, name)).shape
            if shape != (len(self.sensors),):
                raise InvalidPlacementError(f'Placement {name} has shape {shape}, '
                                            f'expected ({len(self.sensors)},)')

    def index(self, sensor: str) -> int:
        return self.sensors.index(sensor)

    def with_offsets(self, d_x=None, d_y=None,
                     mounting_angle=None) -> 'ImuPlacement':
        return replace(self,
                       d_x=self.d_x if d_x is None else d_x,
                       d_y=self.d_y if d_y is None else d_y,
                       mounting_angle=self.mounting_angle
                       if mounting_angle is None else mounting_angle)

    def subset(self, sensors: Sequence[str]) -> 'ImuPlacement':
        idx = [self.index(sensor) for sensor in sensors]
        return ImuPlacement(sensors=tuple(sensors),
                            parents=tuple(self.parents[k] for k in idx),
                            d_x=F.value(self.d_x)[idx],
                            d_y=F.value(self.d_y)[idx],
                            mounting_angle=F.value(self.mounting_angle)[idx])

    def mirrored(self) -> 'ImuPlacement':
        return ImuPlacement(sensors=tuple(_swap_side(s) for s in self.sensors),
                            parents=tuple(_swap_side(p) for p in self.parents),
                            d_x=self.d_x, d_y=self.d_y,
                            mounting_angle=self.mounting_angle)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([F.value(self.d_x), F.value(self.d_y),
                               F.value(self.mounting_angle)])

    def to_dict(self) -> dict:
        return {'sensors': list(self.sensors),
                'parents': list(self.parents),
                'd_x': F.value(self.d_x).tolist(),
                'd_y': F.value(self.d_y).tolist(),
                'mounting_angle': F.value(self.mounting_angle).tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> 'ImuPlacement':
        return cls(sensors=tuple(d['sensors']),
                   parents=tuple(d['parents']),
                   d_x=np.array(d['d_x'], dtype=float),
                   d_y=np.array(d['d_y'], dtype=float),
                   mounting_angle=np.array(d['mounting_angle'], dtype=float))


def default_placement(body: BodyConstants,
                      sensors: Sequence[str] = SENSORS) -> ImuPlacement:
    """Template sensor placement, scaled to the body's segment lengths.

    The pelvis sensor sits on the sacrum behind and above the hip, thigh and
    shank sensors at mid-segment on the front, foot sensors on the instep.
    """
    length = dict(zip(SEGMENTS, F.value(body.length)))
    offsets = {}
    for sensor in SENSORS:
        parent = SENSOR_PARENTS[sensor]
        if sensor == 'pelvis':
            offsets[sensor] = (-0.08, 0.1 * length[parent])
        elif sensor.startswith('thigh'):
            offsets[sensor] = (0.07, -0.5 * length[parent])
        elif sensor.startswith('shank'):
            offsets[sensor] = (0.05, -0.45 * length[parent])
        else:
            offsets[sensor] = (0.25 * length[parent], 0.04)
    for sensor in sensors:
        if sensor not in SENSORS:
            raise InvalidPlacementError(f'Unknown sensor {sensor}')
    return ImuPlacement(sensors=tuple(sensors),
                        parents=tuple(SENSOR_PARENTS[s] for s in sensors),
                        d_x=np.array([offsets[s][0] for s in sensors]),
                        d_y=np.array([offsets[s][1] for s in sensors]),
                        mounting_angle=np.zeros(len(sensors)))
