"""Training window sampling and noise augmentation."""
from typing import List, Sequence, Tuple, Union
import logging

import numpy as np

from kinetiq.data.trials import ImuSequence, TrialRecord, TrainingView
from kinetiq.errors import InvalidInputError

__all__ = ['WINDOW_LENGTH', 'NOISE_LEVEL', 'sample_training_window',
           'augment_noise', 'WindowSampler']

logger = logging.getLogger(__name__)

WINDOW_LENGTH = 256
NOISE_LEVEL = 0.25


def _imu(trial) -> ImuSequence:
    if isinstance(trial, ImuSequence):
        return trial
    return trial.imu


def sample_training_window(trial: Union[TrialRecord, TrainingView, ImuSequence],
                           length: int = WINDOW_LENGTH,
                           rng: np.random.Generator = None) -> Tuple[int, ImuSequence]:
    """Uniformly drawn contiguous window of a trial.

    Returns:
        Start sample and the windowed IMU signals.

    Raises:
        InvalidInputError: The trial is shorter than ``length``.
    """
    imu = _imu(trial)
    if len(imu) < length:
        raise InvalidInputError(f'Trial of {len(imu)} samples is shorter than '
                                f'the window length {length}')
    if rng is None:
        rng = np.random.default_rng()
    start = int(rng.integers(0, len(imu) - length + 1))
    return start, imu.window(start, length)


def augment_noise(window: Union[ImuSequence, np.ndarray],
                  eta: float = NOISE_LEVEL,
                  rng: np.random.Generator = None,
                  training: bool = True):
    """Add Gaussian noise scaled to the spread of every channel.

    Each channel receives noise with standard deviation ``eta`` times its own
    standard deviation over the window. Outside training the window is
    returned unchanged.

    Args:
        window: Signals ``(..., T, n_sensors, 3)`` or an `ImuSequence`.
        eta: Relative noise level.
        rng: Random generator.
        training: Only augment in training mode.
    """
    if not training or eta == 0:
        return window
    if eta < 0:
        raise InvalidInputError(f'Noise level must be non-negative, got {eta}')
    if rng is None:
        rng = np.random.default_rng()
    data = window.data if isinstance(window, ImuSequence) else np.asarray(window, dtype=float)
    sigma = np.std(data, axis=-3, keepdims=True)
    noisy = data + eta * sigma * rng.standard_normal(data.shape)
    if isinstance(window, ImuSequence):
        return ImuSequence(noisy, window.sensors, window.sample_rate)
    return noisy


class WindowSampler:
    """Draws training windows from a corpus of trial segments.

    Trials are picked with probability proportional to the number of windows
    they hold, so every window position is equally likely.

    Args:
        trials: Training views or IMU sequences. Trials shorter than
            ``length`` are skipped.
        length: Window length (samples).
        rng: Random generator.
    """
    def __init__(self, trials: Sequence, length: int = WINDOW_LENGTH,
                 rng: np.random.Generator = None):
        self.length = length
        self.rng = np.random.default_rng() if rng is None else rng
        self.trials = [trial for trial in trials if len(_imu(trial)) >= length]
        skipped = len(trials) - len(self.trials)
        if skipped:
            logger.info(f'Skipping {skipped} trials shorter than {length} samples')
        if not self.trials:
            raise InvalidInputError(f'No trial holds a window of {length} samples')
        counts = np.array([len(_imu(trial)) - length + 1 for trial in self.trials],
                          dtype=float)
        self.probabilities = counts / counts.sum()

    def __len__(self):
        return len(self.trials)

    def sample(self) -> Tuple[int, int, ImuSequence]:
        """Trial index, start sample and window."""
        index = int(self.rng.choice(len(self.trials), p=self.probabilities))
        start, window = sample_training_window(self.trials[index], self.length, self.rng)
        return index, start, window

    def batch(self, size: int) -> List[Tuple[int, int, ImuSequence]]:
        return [self.sample() for _ in range(size)]
