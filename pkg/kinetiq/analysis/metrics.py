"""Accuracy metrics of estimated against reference dynamics.

Streams are time-aligned arrays keyed by name:

- ``q``: generalized coordinates ``(T, 9)`` in rad and m.
- ``tau``: joint torques ``(T, 6)`` in body weight times body height.
- ``grf``: ground reaction forces ``(T, 2, 2)`` as ``(F_x, F_y)`` per foot in
  body weights.
- ``speed``: horizontal root speed ``(T,)`` in m/s. Reference samples outside
  the reference coverage window are NaN.

A metric whose reference stream is absent is omitted from the report and
listed in `MetricReport.missing`.
"""
from dataclasses import dataclass, field, fields, asdict
from typing import List, Mapping, Optional, Sequence
import logging

import numpy as np

from kinetiq.analysis.gait_cycles import CYCLE_SAMPLES, FOOT_STRIKE_THRESHOLD, HYSTERESIS
from kinetiq.errors import ConfigError, InvalidInputError
from kinetiq.model.body import BodyConstants, SEGMENTS
from kinetiq.model.kinematics import GeneralizedState, SIDES, forward_kinematics

__all__ = ['MetricReport', 'EvaluationConfig', 'compute_metrics',
           'aggregate_reports', 'jitter', 'METRIC_UNITS']

logger = logging.getLogger(__name__)

METRIC_UNITS = {
    'jae': 'deg', 'jae_median': 'deg', 'jae_p95': 'deg',
    'jte': 'BWBH%', 'grfe': 'BW%',
    'speed_error': 'm/s', 'speed_relative': '%',
    'speed_relative_median': '%', 'speed_relative_p95': '%',
    'jitter': 'km/s^3', 'goe': 'deg', 'ja_mae': 'deg', 'jpe': 'cm'}

# Root orientation followed by the six joint angles
ANGLE_SLICE = slice(2, 9)
JOINT_SLICE = slice(3, 9)
JPE_POINTS = ('knee', 'ankle')
JITTER_POINTS = ('hip', 'knee', 'ankle', 'heel', 'toe')


@dataclass(frozen=True)
class EvaluationConfig:
    """Evaluation and figure settings.

    Args:
        foot_strike_threshold: Vertical force marking a foot strike (body
            weights).
        hysteresis: Minimum unloaded duration before a foot strike (s).
        cycle_samples: Samples per normalized gait cycle.
        speed_floor: Reference speeds below this are excluded from the
            relative speed error (m/s).
        pixels_per_meter: Stick figure scale.
        stick_interval: Time between stick figure poses (s).
        grf_interval: Time between force arrows (s).
        grf_scale: Arrow length per body weight (m).
    """
    foot_strike_threshold: float = FOOT_STRIKE_THRESHOLD
    hysteresis: float = HYSTERESIS
    cycle_samples: int = CYCLE_SAMPLES
    speed_floor: float = 0.1
    pixels_per_meter: float = 200.
    stick_interval: float = 0.1
    grf_interval: float = 0.02
    grf_scale: float = 0.5

    def __post_init__(self):
        if self.cycle_samples < 2:
            raise ConfigError('evaluation.cycle_samples must be at least 2')
        for name in ['pixels_per_meter', 'stick_interval', 'grf_interval', 'grf_scale']:
            if not getattr(self, name) > 0:
                raise ConfigError(f'evaluation.{name} must be positive')
        if self.hysteresis < 0 or self.speed_floor < 0:
            raise ConfigError('evaluation.hysteresis and speed_floor must be >= 0')

    @classmethod
    def from_config(cls, config) -> 'EvaluationConfig':
        kwargs = {}
        for key, val in dict(config).items():
            if key not in cls.__dataclass_fields__:
                raise ConfigError(f'Unknown evaluation setting {key}')
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(f'evaluation.{key} must be a number, got {val!r}')
            if key == 'cycle_samples':
                if int(val) != val:
                    raise ConfigError(f'evaluation.cycle_samples must be an int')
                val = int(val)
            kwargs[key] = val
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MetricReport:
    """Metrics of a single trial or an aggregate over trials.

    Omitted metrics are None and their names listed in ``missing``.
    """
    name: str
    jae: Optional[float] = None
    jae_median: Optional[float] = None
    jae_p95: Optional[float] = None
    jte: Optional[float] = None
    grfe: Optional[float] = None
    speed_error: Optional[float] = None
    speed_relative: Optional[float] = None
    speed_relative_median: Optional[float] = None
    speed_relative_p95: Optional[float] = None
    jitter: Optional[float] = None
    goe: Optional[float] = None
    ja_mae: Optional[float] = None
    jpe: Optional[float] = None
    missing: List[str] = field(default_factory=list)
    n_trials: int = 1

    @classmethod
    def metric_names(cls) -> List[str]:
        return [f.name for f in fields(cls) if f.name in METRIC_UNITS]

    def metrics(self) -> dict:
        return {name: getattr(self, name) for name in self.metric_names()
                if getattr(self, name) is not None}

    def to_dict(self) -> dict:
        return asdict(self)

    def __str__(self):
        values = ', '.join(f'{name} {value:.3g} {METRIC_UNITS[name]}'
                           for name, value in self.metrics().items())
        return f'{self.name}: {values}'


def _rms(x) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def _check_length(estimate: Mapping, reference: Mapping, key: str):
    if len(estimate[key]) != len(reference[key]):
        raise InvalidInputError(f'Stream {key} has {len(estimate[key])} estimated '
                                f'and {len(reference[key])} reference samples')


def _positions(q: np.ndarray, body: BodyConstants):
    """Forward-kinematics points of a coordinate stream."""
    zeros = np.zeros_like(q)
    return forward_kinematics(GeneralizedState(q=q, qdot=zeros, qddot=zeros), body)


def jitter(positions: np.ndarray, dt: float) -> float:
    """Mean magnitude of the third derivative of point trajectories.

    Args:
        positions: Trajectories ``(T, n_points, 2)`` in m.
        dt: Sample interval (s).

    Returns:
        Jitter in km/s³, from third-order central differences. NaN for fewer
        than five samples.
    """
    positions = np.asarray(positions, dtype=float)
    if len(positions) < 5:
        return float('nan')
    jerk = (positions[4:] - 2 * positions[3:-1] + 2 * positions[1:-3]
            - positions[:-4]) / (2 * dt ** 3)
    return float(np.mean(np.linalg.norm(jerk, axis=-1))) / 1000


def _point_stack(points, names: Sequence[str]) -> np.ndarray:
    return np.stack([np.stack([np.asarray(points[name].x), np.asarray(points[name].y)],
                              axis=-1) for name in names], axis=1)


def compute_metrics(estimate: Mapping[str, np.ndarray],
                    reference: Mapping[str, np.ndarray],
                    body: BodyConstants = None,
                    dt: float = 0.01,
                    name: str = 'trial',
                    config: EvaluationConfig = EvaluationConfig()) -> MetricReport:
    """Metrics of one trial.

    Args:
        estimate: Estimated streams.
        reference: Reference streams.
        body: Body constants, needed for the position-based metrics (jitter,
            segment orientations, joint positions).
        dt: Sample interval (s).
        name: Trial name of the report.
        config: Evaluation settings.

    Raises:
        InvalidInputError: Estimated and reference streams differ in length.
    """
    report = MetricReport(name=name)

    if 'q' in estimate and 'q' in reference:
        _check_length(estimate, reference, 'q')
        diff = np.rad2deg(np.asarray(estimate['q'])[:, ANGLE_SLICE]
                          - np.asarray(reference['q'])[:, ANGLE_SLICE])
        report.jae = _rms(diff)
        absolute = np.abs(diff)
        report.jae_median = float(np.median(absolute))
        report.jae_p95 = float(np.percentile(absolute, 95))
        # Root orientation is covered by goe
        report.ja_mae = float(np.mean(np.rad2deg(np.abs(
            np.asarray(estimate['q'])[:, JOINT_SLICE]
            - np.asarray(reference['q'])[:, JOINT_SLICE]))))
    else:
        report.missing += ['jae', 'jae_median', 'jae_p95', 'ja_mae']

    for key, metric in [('tau', 'jte'), ('grf', 'grfe')]:
        if key in estimate and key in reference:
            _check_length(estimate, reference, key)
            setattr(report, metric,
                    100 * _rms(np.asarray(estimate[key]) - np.asarray(reference[key])))
        else:
            report.missing.append(metric)

    if 'speed' in estimate and 'speed' in reference:
        _check_length(estimate, reference, 'speed')
        speed_ref = np.asarray(reference['speed'], dtype=float)
        covered = np.isfinite(speed_ref)
        if np.any(covered):
            mean_ref = float(np.mean(speed_ref[covered]))
            mean_est = float(np.mean(np.asarray(estimate['speed'])[covered]))
            report.speed_error = abs(mean_est - mean_ref)
            if abs(mean_ref) >= config.speed_floor:
                report.speed_relative = 100 * report.speed_error / abs(mean_ref)
            else:
                report.missing.append('speed_relative')
        else:
            logger.warning(f'Trial {name} has no reference speed coverage')
            report.missing += ['speed_error', 'speed_relative']
    else:
        report.missing += ['speed_error', 'speed_relative']

    if body is not None and 'q' in estimate:
        points = _positions(np.asarray(estimate['q'], dtype=float), body)
        report.jitter = jitter(_point_stack(points, [f'{point}_{side}' for side in SIDES
                                                     for point in JITTER_POINTS]), dt)
        if 'q' in reference:
            ref_points = _positions(np.asarray(reference['q'], dtype=float), body)
            segments = ['root'] + [f'com_{segment}' for segment in SEGMENTS
                                   if segment != 'trunk']
            orientation = np.stack([np.asarray(points[s].alpha) - np.asarray(ref_points[s].alpha)
                                    for s in segments], axis=-1)
            report.goe = float(np.mean(np.abs(np.rad2deg(orientation))))

            names = [f'{point}_{side}' for side in SIDES for point in JPE_POINTS]
            # Relative to the hip joint centre
            relative = _point_stack(points, names) - _point_stack(points, ['root'])
            ref_relative = _point_stack(ref_points, names) - _point_stack(ref_points, ['root'])
            report.jpe = 100 * float(np.mean(np.linalg.norm(relative - ref_relative,
                                                             axis=-1)))
        else:
            report.missing += ['goe', 'jpe']
    else:
        report.missing += ['jitter', 'goe', 'jpe']

    if report.missing:
        logger.info(f'Trial {name}: omitted metrics {report.missing}')
    return report


def aggregate_reports(reports: Sequence[MetricReport],
                      name: str = 'aggregate') -> MetricReport:
    """Aggregate per-trial reports.

    Root-mean-square metrics (JAE, JTE, GRFE, speed error) are combined as
    the root mean square over trials, the other metrics as the mean. The
    relative speed error additionally gets its median and 95th percentile
    over trials.
    """
    aggregate = MetricReport(name=name, n_trials=len(reports))
    for metric in MetricReport.metric_names():
        values = [getattr(r, metric) for r in reports if getattr(r, metric) is not None]
        if metric in ('speed_relative_median', 'speed_relative_p95'):
            continue
        if not values:
            aggregate.missing.append(metric)
        elif metric in ('jae', 'jte', 'grfe', 'speed_error'):
            setattr(aggregate, metric, _rms(values))
        else:
            setattr(aggregate, metric, float(np.mean(values)))
    relative = [r.speed_relative for r in reports if r.speed_relative is not None]
    if relative:
        aggregate.speed_relative_median = float(np.median(relative))
        aggregate.speed_relative_p95 = float(np.percentile(relative, 95))
    else:
        aggregate.missing += ['speed_relative_median', 'speed_relative_p95']
    return aggregate
