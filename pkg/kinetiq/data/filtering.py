"""Removal of standing and turning phases before training."""
from dataclasses import dataclass, asdict
from typing import List, Tuple
import logging

import numpy as np

from kinetiq.data.trials import ImuSequence, TrialRecord
from kinetiq.errors import ConfigError, InvalidInputError

__all__ = ['FilterConfig', 'kept_segments', 'heuristic_segment_filter']

logger = logging.getLogger(__name__)

_FOOT_SENSORS = ('foot_l', 'foot_r')


@dataclass(frozen=True)
class FilterConfig:
    """Thresholds of the standing and turning heuristic.

    Args:
        window: Decision window (samples).
        standing_threshold: Windows where every foot gyro RMS stays below
            this value are standing (rad/s).
        turning_threshold: Windows with a pelvis gyro RMS above this value are
            turning (rad/s).
        min_length: Kept segments shorter than this are dropped (samples).
    """
    window: int = 100
    standing_threshold: float = 0.5
    turning_threshold: float = 1.5
    min_length: int = 0

    def __post_init__(self):
        if self.window < 1:
            raise InvalidInputError('filter.window must be at least 1')
        if self.standing_threshold < 0 or self.turning_threshold < 0:
            raise InvalidInputError('Filter thresholds must be non-negative')

    @classmethod
    def from_config(cls, config) -> 'FilterConfig':
        kwargs = {}
        for key, val in dict(config).items():
            if key not in cls.__dataclass_fields__:
                raise ConfigError(f'Unknown filter setting {key}')
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(f'filter.{key} must be a number, got {val!r}')
            if key in ('window', 'min_length'):
                if int(val) != val:
                    raise ConfigError(f'filter.{key} must be an int, got {val!r}')
                val = int(val)
            kwargs[key] = val
        try:
            return cls(**kwargs)
        except InvalidInputError as e:
            raise ConfigError(str(e)) from e

    def to_dict(self) -> dict:
        return asdict(self)


def _gyro_rms(signal: np.ndarray) -> float:
    return float(np.sqrt(np.mean(signal ** 2)))


def kept_segments(imu: ImuSequence, config: FilterConfig = FilterConfig()
                  ) -> List[Tuple[int, int]]:
    """Sample ranges ``[start, stop)`` that are neither standing nor turning.

    The sequence is cut into consecutive windows; a trailing partial window
    joins the previous one. Without foot sensors, all lower-limb sensors
    decide on standing. Without a pelvis sensor, no window is turning.
    """
    feet = [s for s in _FOOT_SENSORS if s in imu.sensors] \
        or [s for s in imu.sensors if s != 'pelvis']
    if not feet:
        raise InvalidInputError('Standing detection needs a lower-limb sensor')
    has_pelvis = 'pelvis' in imu.sensors

    T = len(imu)
    bounds = list(range(0, T, config.window)) + [T]
    if len(bounds) > 2 and bounds[-1] - bounds[-2] < config.window:
        del bounds[-2]

    segments = []
    for start, stop in zip(bounds[:-1], bounds[1:]):
        foot_rms = max(_gyro_rms(imu.sensor(s)[start:stop, 2]) for s in feet)
        standing = foot_rms < config.standing_threshold
        turning = has_pelvis and \
            _gyro_rms(imu.sensor('pelvis')[start:stop, 2]) > config.turning_threshold
        if standing or turning:
            continue
        if segments and segments[-1][1] == start:
            segments[-1] = (segments[-1][0], stop)
        else:
            segments.append((start, stop))
    return [(start, stop) for start, stop in segments
            if stop - start >= max(config.min_length, 1)]


def heuristic_segment_filter(record: TrialRecord,
                             config: FilterConfig = FilterConfig()) -> List[TrialRecord]:
    """Split a trial into the sub-trials kept for training."""
    segments = kept_segments(record.imu, config)
    dropped = len(record) - sum(stop - start for start, stop in segments)
    if dropped:
        logger.debug(f'Filter dropped {dropped} of {len(record)} samples of {record.name}')
    return [record.window(start, stop - start) for start, stop in segments]
