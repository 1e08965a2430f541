"""Gait cycle segmentation and time normalization.

Cycles run from one foot strike to the next foot strike of the same foot. A
foot strike is a rising crossing of the vertical ground reaction force over
a threshold, preceded by at least the hysteresis duration below it. Every
cycle is resampled to a fixed number of samples so cycles of different
duration can be averaged.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple
import logging

import numpy as np
from scipy.interpolate import interp1d

from kinetiq.errors import InvalidInputError

__all__ = ['GaitCycles', 'detect_foot_strikes', 'segment_gait_cycles',
           'FOOT_STRIKE_THRESHOLD', 'HYSTERESIS', 'CYCLE_SAMPLES']

logger = logging.getLogger(__name__)

FOOT_STRIKE_THRESHOLD = 0.05
HYSTERESIS = 0.05
CYCLE_SAMPLES = 100


@dataclass
class GaitCycles:
    """Time-normalized gait cycles.

    Args:
        boundaries: ``(start, stop)`` sample indices of every cycle.
        cycles: Normalized cycles ``(n_cycles, samples, ...)`` per stream.
        labels: ``walking`` or ``running`` per cycle.
    """
    boundaries: List[Tuple[int, int]] = field(default_factory=list)
    cycles: Dict[str, np.ndarray] = field(default_factory=dict)
    labels: List[str] = field(default_factory=list)

    def __len__(self):
        return len(self.boundaries)

    def mean(self, key: str) -> np.ndarray:
        return np.mean(self.cycles[key], axis=0)

    def std(self, key: str) -> np.ndarray:
        """Per-sample standard deviation across cycles, zero for one cycle."""
        return np.std(self.cycles[key], axis=0)

    def select(self, label: str) -> 'GaitCycles':
        """Cycles carrying a label."""
        idx = [k for k, l in enumerate(self.labels) if l == label]
        return GaitCycles(boundaries=[self.boundaries[k] for k in idx],
                          cycles={key: values[idx] for key, values in self.cycles.items()},
                          labels=[label] * len(idx))


def _contact_runs(contact: np.ndarray) -> List[Tuple[int, int]]:
    """``(start, stop)`` of every run of True samples."""
    padded = np.concatenate([[False], contact, [False]]).astype(int)
    edges = np.diff(padded)
    return list(zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)))


def detect_foot_strikes(vertical_grf: np.ndarray,
                        dt: float,
                        threshold: float = FOOT_STRIKE_THRESHOLD,
                        hysteresis: float = HYSTERESIS) -> np.ndarray:
    """Sample indices of foot strikes.

    Args:
        vertical_grf: Vertical force of one foot ``(T,)`` in body weights.
        dt: Sample interval (s).
        threshold: Force above which the foot is loaded (body weights).
        hysteresis: Minimum unloaded duration before a strike (s). Shorter
            unloaded gaps are bridged.

    Returns:
        Indices of the first loaded sample of every strike. A foot loaded
        from the first sample has no strike there.
    """
    vertical_grf = np.asarray(vertical_grf, dtype=float)
    min_gap = max(int(round(hysteresis / dt)), 1)
    strikes = []
    previous_stop = None
    for start, stop in _contact_runs(vertical_grf > threshold):
        if start == 0:
            previous_stop = stop
            continue
        gap = start if previous_stop is None else start - previous_stop
        if gap >= min_gap:
            strikes.append(start)
        previous_stop = stop
    return np.array(strikes, dtype=int)


def _normalize(values: np.ndarray, start: int, stop: int, samples: int) -> np.ndarray:
    """Linear resampling of ``values[start:stop + 1]`` to ``samples`` points."""
    stop = min(stop, len(values) - 1)
    interpolator = interp1d(np.arange(start, stop + 1), values[start:stop + 1], axis=0)
    return interpolator(np.linspace(start, stop, samples))


def segment_gait_cycles(streams: Mapping[str, np.ndarray],
                        vertical_grf: np.ndarray,
                        dt: float,
                        side: str = 'r',
                        threshold: float = FOOT_STRIKE_THRESHOLD,
                        hysteresis: float = HYSTERESIS,
                        samples: int = CYCLE_SAMPLES,
                        boundaries: Sequence[Tuple[int, int]] = None) -> GaitCycles:
    """Cut streams into time-normalized gait cycles.

    Args:
        streams: Time series ``(T, ...)`` to segment.
        vertical_grf: Vertical forces ``(T, 2)`` of the left and right foot in
            body weights.
        dt: Sample interval (s).
        side: Foot whose strikes delimit the cycles.
        threshold: Foot strike threshold (body weights).
        hysteresis: Minimum unloaded duration before a strike (s).
        samples: Samples per normalized cycle.
        boundaries: Use these cycle boundaries instead of detecting strikes,
            e.g. to cut reference streams at estimated strikes.

    Returns:
        Cycles, labelled ``running`` if both feet are unloaded at any sample
        of the cycle and ``walking`` otherwise.
    """
    vertical_grf = np.asarray(vertical_grf, dtype=float)
    if vertical_grf.ndim != 2 or vertical_grf.shape[1] != 2:
        raise InvalidInputError(f'Vertical forces must have shape (T, 2), '
                                f'got {vertical_grf.shape}')
    if side not in ('l', 'r'):
        raise InvalidInputError(f'Unknown side {side}')
    for key, values in streams.items():
        if len(values) != len(vertical_grf):
            raise InvalidInputError(f'Stream {key} has {len(values)} samples, '
                                    f'forces have {len(vertical_grf)}')

    if boundaries is None:
        strikes = detect_foot_strikes(vertical_grf[:, 'lr'.index(side)], dt,
                                      threshold, hysteresis)
        boundaries = list(zip(strikes[:-1], strikes[1:]))
    boundaries = [(int(start), int(stop)) for start, stop in boundaries]

    flight = np.all(vertical_grf <= threshold, axis=1)
    result = GaitCycles(boundaries=boundaries)
    result.labels = ['running' if np.any(flight[start:stop]) else 'walking'
                     for start, stop in boundaries]
    for key, values in streams.items():
        values = np.asarray(values, dtype=float)
        if boundaries:
            result.cycles[key] = np.stack([_normalize(values, start, stop, samples)
                                           for start, stop in boundaries])
        else:
            result.cycles[key] = np.zeros((0, samples) + values.shape[1:])
    logger.debug(f'Segmented {len(boundaries)} gait cycles '
                 f'({result.labels.count("running")} running)')
    return result
