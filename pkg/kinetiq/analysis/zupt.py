"""Foot sensor speed from planar strapdown integration with zero-velocity updates.

The filter state is the global sensor velocity ``(v_x, v_y)`` and the sensor
angle θ. Gyro rates propagate θ, the specific force rotated by θ minus gravity
propagates the velocity, and detected stance samples are fused as
zero-velocity pseudo-measurements. An optional Rauch-Tung-Striebel pass
smooths the filtered velocities backwards.
"""
from dataclasses import dataclass, asdict
from typing import Optional
import hashlib
import json
import logging
import os

import h5py
import numpy as np
from scipy.ndimage import uniform_filter1d

from kinetiq.errors import ConfigError, InvalidInputError
from kinetiq.model.body import GRAVITY

__all__ = ['ZuptConfig', 'FootSpeed', 'detect_stance',
           'reconstruct_foot_speed', 'cached_foot_speed', 'signal_hash']

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ZuptConfig:
    """Stance detection and filter settings.

    Args:
        gyro_threshold: Windowed gyro RMS below which a sample may be stance
            (rad/s).
        accel_threshold: Windowed mean deviation of the specific force norm
            from 1 g below which a sample may be stance (m/s²).
        window: Detector window (samples).
        hysteresis: Stance ends only once the detector statistic exceeds
            this multiple of the thresholds.
        accel_noise: Accelerometer noise density used as process noise (m/s²).
        gyro_noise: Gyro noise used as process noise (rad/s).
        zupt_noise: Standard deviation of the zero-velocity measurement (m/s).
        smoother: Apply the backward smoothing pass.
    """
    gyro_threshold: float = 1.0
    accel_threshold: float = 2.0
    window: int = 5
    hysteresis: float = 1.5
    accel_noise: float = 0.5
    gyro_noise: float = 0.05
    zupt_noise: float = 0.01
    smoother: bool = True

    def __post_init__(self):
        for name in ['gyro_threshold', 'accel_threshold', 'accel_noise',
                     'gyro_noise', 'zupt_noise']:
            if not getattr(self, name) > 0:
                raise InvalidInputError(f'zupt.{name} must be positive')
        if self.window < 1:
            raise InvalidInputError('zupt.window must be at least 1')
        if self.hysteresis < 1:
            raise InvalidInputError('zupt.hysteresis must be at least 1')

    @classmethod
    def from_config(cls, config) -> 'ZuptConfig':
        kwargs = {}
        for key, val in dict(config).items():
            if key not in cls.__dataclass_fields__:
                raise ConfigError(f'Unknown ZUPT setting {key}')
            if key == 'smoother':
                if not isinstance(val, bool):
                    raise ConfigError(f'zupt.smoother must be a bool, got {val!r}')
            elif key == 'window':
                if isinstance(val, bool) or not isinstance(val, int):
                    raise ConfigError(f'zupt.window must be an int, got {val!r}')
            elif isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(f'zupt.{key} must be a number, got {val!r}')
            else:
                val = float(val)
            kwargs[key] = val
        try:
            return cls(**kwargs)
        except InvalidInputError as e:
            raise ConfigError(str(e)) from e

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FootSpeed:
    """Reconstructed foot sensor motion.

    Args:
        speed: Horizontal speed ``|v_x|`` (m/s).
        velocity: Global velocity ``(T, 2)``.
        angle: Sensor angle (rad).
        stance: Samples fused as zero velocity.
        low_confidence: No stance was available, so the velocity drifts
            freely.
    """
    speed: np.ndarray
    velocity: np.ndarray
    angle: np.ndarray
    stance: np.ndarray
    low_confidence: bool = False


def detect_stance(imu: np.ndarray, config: ZuptConfig = ZuptConfig(),
                  gravity: float = GRAVITY) -> np.ndarray:
    """Stance samples from a windowed gyro-energy and accel-magnitude test.

    Args:
        imu: Foot sensor signals ``(T, 3)`` as ``(a_x, a_y, ω)``.

    Returns:
        Boolean stance mask ``(T,)``.
    """
    imu = np.asarray(imu, dtype=float)
    gyro_rms = np.sqrt(uniform_filter1d(imu[:, 2] ** 2, config.window, mode='nearest'))
    accel_deviation = uniform_filter1d(
        np.abs(np.hypot(imu[:, 0], imu[:, 1]) - gravity), config.window, mode='nearest')
    statistic = np.maximum(gyro_rms / config.gyro_threshold,
                           accel_deviation / config.accel_threshold)

    stance = np.zeros(len(imu), dtype=bool)
    in_stance = False
    for k, value in enumerate(statistic):
        if in_stance:
            in_stance = value <= config.hysteresis
        else:
            in_stance = value < 1
        stance[k] = in_stance
    return stance


def _rotate(angle, a_x, a_y):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([c * a_x - s * a_y, s * a_x + c * a_y])


def reconstruct_foot_speed(imu: np.ndarray,
                           dt: float,
                           config: ZuptConfig = ZuptConfig(),
                           stance: np.ndarray = None,
                           gravity: float = GRAVITY) -> FootSpeed:
    """Horizontal speed of a foot-worn sensor.

    Args:
        imu: Foot sensor signals ``(T, 3)`` as ``(a_x, a_y, ω)``.
        dt: Sample interval (s).
        config: Detector and filter settings.
        stance: Known stance mask. Detected from ``imu`` if not given.
        gravity: Gravitational acceleration.

    Returns:
        Reconstructed speed. Flagged low-confidence if there is no stance.

    Raises:
        InvalidInputError: Malformed signals.
    """
    imu = np.asarray(imu, dtype=float)
    if imu.ndim != 2 or imu.shape[1] != 3 or len(imu) < 2:
        raise InvalidInputError(f'Foot IMU must have shape (T, 3), got {imu.shape}')
    if not np.all(np.isfinite(imu)):
        raise InvalidInputError('Foot IMU contains non-finite samples')
    if stance is None:
        stance = detect_stance(imu, config, gravity)
    stance = np.asarray(stance, dtype=bool)
    T = len(imu)
    low_confidence = not np.any(stance)
    if low_confidence:
        logger.warning('No stance detected, foot speed is unconstrained')

    # Initial angle from the gravity direction of the first stance sample
    first = int(np.argmax(stance)) if not low_confidence else 0
    x = np.zeros(3)
    x[2] = np.arctan2(imu[first, 0], imu[first, 1]) - dt * np.sum(imu[:first, 2])

    P = np.diag([1e-4, 1e-4, 1e-4])
    Q = np.diag([(config.accel_noise * dt) ** 2] * 2 + [(config.gyro_noise * dt) ** 2])
    H = np.array([[1., 0, 0], [0, 1, 0]])
    R = np.eye(2) * config.zupt_noise ** 2
    gravity_vector = np.array([0., gravity])

    filtered, filtered_cov = np.zeros((T, 3)), np.zeros((T, 3, 3))
    predicted, predicted_cov = np.zeros((T, 3)), np.zeros((T, 3, 3))
    jacobians = np.zeros((T, 3, 3))
    for k in range(T):
        if k > 0:
            omega = 0.5 * (imu[k - 1, 2] + imu[k, 2])
            angle = x[2] + omega * dt
            force_prev = _rotate(x[2], imu[k - 1, 0], imu[k - 1, 1])
            force = _rotate(angle, imu[k, 0], imu[k, 1])
            F = np.eye(3)
            F[0:2, 2] = 0.5 * dt * (np.array([-force_prev[1], force_prev[0]])
                                    + np.array([-force[1], force[0]]))
            x = np.concatenate([x[:2] + dt * (0.5 * (force_prev + force) - gravity_vector),
                                [angle]])
            P = F @ P @ F.T + Q
            jacobians[k] = F
        predicted[k], predicted_cov[k] = x, P

        if stance[k]:
            S = H @ P @ H.T + R
            K = P @ H.T @ np.linalg.inv(S)
            x = x - K @ (H @ x)
            P = (np.eye(3) - K @ H) @ P
            P = 0.5 * (P + P.T)
        filtered[k], filtered_cov[k] = x, P

    states = filtered
    if config.smoother and T > 1:
        states = filtered.copy()
        for k in range(T - 2, -1, -1):
            C = filtered_cov[k] @ jacobians[k + 1].T @ np.linalg.pinv(predicted_cov[k + 1])
            states[k] = filtered[k] + C @ (states[k + 1] - predicted[k + 1])

    velocity = states[:, :2]
    return FootSpeed(speed=np.abs(velocity[:, 0]), velocity=velocity,
                     angle=states[:, 2], stance=stance,
                     low_confidence=low_confidence)


def signal_hash(imu: np.ndarray, dt: float, config: ZuptConfig) -> str:
    """SHA-256 of the signal bytes, sample interval and settings."""
    sha = hashlib.sha256()
    sha.update(np.ascontiguousarray(imu, dtype='<f8').tobytes())
    sha.update(json.dumps({'dt': dt, **config.to_dict()}, sort_keys=True).encode())
    return sha.hexdigest()


def cached_foot_speed(imu: np.ndarray,
                      dt: float,
                      config: ZuptConfig = ZuptConfig(),
                      cache_dir: Optional[str] = None) -> FootSpeed:
    """`reconstruct_foot_speed` with results cached as HDF5 files.

    Args:
        cache_dir: Cache folder. Without a folder, nothing is cached.
    """
    if cache_dir is None:
        return reconstruct_foot_speed(imu, dt, config)
    key = signal_hash(imu, dt, config)
    filepath = os.path.join(cache_dir, f'zupt_{key}.h5')
    if os.path.exists(filepath):
        logger.debug(f'Foot speed cache hit {key[:12]}')
        with h5py.File(filepath, 'r') as file:
            return FootSpeed(speed=np.array(file['speed']),
                             velocity=np.array(file['velocity']),
                             angle=np.array(file['angle']),
                             stance=np.array(file['stance'], dtype=bool),
                             low_confidence=bool(file.attrs['low_confidence']))

    result = reconstruct_foot_speed(imu, dt, config)
    os.makedirs(cache_dir, exist_ok=True)
    tmp_filepath = filepath + '.tmp'
    with h5py.File(tmp_filepath, 'w') as file:
        file.attrs['low_confidence'] = result.low_confidence
        file.attrs['config'] = json.dumps(config.to_dict())
        for name in ['speed', 'velocity', 'angle', 'stance']:
            file.create_dataset(name, data=getattr(result, name))
    os.replace(tmp_filepath, filepath)
    return result
