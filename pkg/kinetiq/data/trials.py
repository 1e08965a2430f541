"""Trial records and the canonical delimited-text trial format.

A trial is stored as two files sharing a name:

* ``<name>.csv``: comma-separated samples with a header row. The ``time``
  column holds timestamps in s. Sensor channels are named
  ``<sensor>.a_x``, ``<sensor>.a_y`` (m/s²) and ``<sensor>.omega`` (rad/s).
  Reference streams are flattened into ``ref.<stream>.<k>`` columns.
* ``<name>.json``: sidecar metadata with ``sample_rate`` (Hz), ``sensors``,
  ``subject`` (``height`` in m, ``mass`` in kg), optional ``placement`` and
  the shape of every reference stream under ``references``.

Columns are located by header name, so their order is free.
"""
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple
import json
import logging
import os

import numpy as np
from scipy.signal import resample_poly

from kinetiq.errors import InvalidInputError, TrialRejectedError
from kinetiq.model.body import ImuPlacement, SENSORS

__all__ = ['TARGET_RATE', 'FORMAT_VERSION', 'ImuSequence', 'TrialRecord',
           'TrainingView', 'read_trial', 'write_trial', 'ingest',
           'ingest_with_report', 'resample', 'fill_nan_runs']

logger = logging.getLogger(__name__)

TARGET_RATE = 100.
FORMAT_VERSION = 1
MAX_NAN_RUN = 5
IMU_CHANNELS = ('a_x', 'a_y', 'omega')


@dataclass(frozen=True)
class ImuSequence:
    """Uniformly sampled planar IMU signals.

    Args:
        data: Signals ``(T, n_sensors, 3)`` with channels ``(a_x, a_y, ω)``.
        sensors: Sensor names.
        sample_rate: Sample rate (Hz).
    """
    data: np.ndarray
    sensors: Tuple[str, ...]
    sample_rate: float = TARGET_RATE

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 3 or data.shape[1:] != (len(self.sensors), 3):
            raise InvalidInputError(f'IMU data of shape {data.shape} does not '
                                    f'match {len(self.sensors)} sensors')
        for sensor in self.sensors:
            if sensor not in SENSORS:
                raise InvalidInputError(f'Unknown sensor {sensor}')
        if not self.sample_rate > 0:
            raise InvalidInputError('Sample rate must be positive')
        object.__setattr__(self, 'data', data)
        object.__setattr__(self, 'sensors', tuple(self.sensors))

    def __len__(self):
        return len(self.data)

    @property
    def dt(self) -> float:
        return 1 / self.sample_rate

    def sensor(self, name: str) -> np.ndarray:
        """Signals ``(T, 3)`` of one sensor."""
        try:
            return self.data[:, self.sensors.index(name)]
        except ValueError:
            raise InvalidInputError(f'Sensor {name} not in {self.sensors}')

    def window(self, start: int, length: int) -> 'ImuSequence':
        if start < 0 or start + length > len(self):
            raise InvalidInputError(f'Window [{start}, {start + length}) exceeds '
                                    f'sequence length {len(self)}')
        return ImuSequence(self.data[start:start + length], self.sensors,
                           self.sample_rate)

    def subset(self, sensors: Sequence[str]) -> 'ImuSequence':
        idx = [self.sensors.index(sensor) for sensor in sensors]
        return ImuSequence(self.data[:, idx], tuple(sensors), self.sample_rate)


class TrainingView:
    """Read-only view of a trial without its reference streams."""
    __slots__ = ('name', 'imu', 'height', 'mass', 'placement')

    def __init__(self, name, imu, height, mass, placement):
        self.name = name
        self.imu = imu
        self.height = height
        self.mass = mass
        self.placement = placement

    def __repr__(self):
        return f'TrainingView({self.name}, {len(self.imu)} samples)'


@dataclass(frozen=True)
class TrialRecord:
    """IMU trial with subject metadata and optional reference streams.

    Reference streams (e.g. ``q``, ``tau``, ``grf``, ``speed``) are meant for
    evaluation only. Training code works on `training_view`.
    """
    name: str
    imu: ImuSequence
    height: float
    mass: float
    placement: Optional[ImuPlacement] = None
    references: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.imu)

    @property
    def dt(self) -> float:
        return self.imu.dt

    def training_view(self) -> TrainingView:
        return TrainingView(self.name, self.imu, self.height, self.mass,
                            self.placement)

    def window(self, start: int, length: int) -> 'TrialRecord':
        return TrialRecord(name=f'{self.name}[{start}:{start + length}]',
                           imu=self.imu.window(start, length),
                           height=self.height, mass=self.mass,
                           placement=self.placement,
                           references={key: val[start:start + length]
                                       for key, val in self.references.items()})


def write_trial(record: TrialRecord, folder: str) -> str:
    """Write a trial in the canonical format.

    Values are written with 17 significant digits, so reading the trial back
    reproduces it exactly.

    Returns:
        Path of the CSV file.
    """
    os.makedirs(folder, exist_ok=True)
    T = len(record)
    columns = {'time': np.arange(T) / record.imu.sample_rate}
    for k, sensor in enumerate(record.imu.sensors):
        for c, channel in enumerate(IMU_CHANNELS):
            columns[f'{sensor}.{channel}'] = record.imu.data[:, k, c]
    shapes = {}
    for stream, values in record.references.items():
        values = np.asarray(values, dtype=float)
        shapes[stream] = list(values.shape[1:])
        flat = values.reshape(T, -1)
        for k in range(flat.shape[1]):
            columns[f'ref.{stream}.{k}'] = flat[:, k]

    csv_path = os.path.join(folder, f'{record.name}.csv')
    np.savetxt(csv_path, np.column_stack(list(columns.values())),
               delimiter=',', header=','.join(columns), comments='', fmt='%.17g')

    metadata = {'format_version': FORMAT_VERSION,
                'name': record.name,
                'sample_rate': record.imu.sample_rate,
                'sensors': list(record.imu.sensors),
                'subject': {'height': record.height, 'mass': record.mass},
                'references': shapes}
    if record.placement is not None:
        metadata['placement'] = record.placement.to_dict()
    with open(os.path.join(folder, f'{record.name}.json'), 'w') as f:
        json.dump(metadata, f, indent=4)
    return csv_path


def _nan_runs(column: np.ndarray) -> List[Tuple[int, int]]:
    """(start, stop) of every run of NaN samples."""
    isnan = np.concatenate([[False], np.isnan(column), [False]])
    edges = np.flatnonzero(np.diff(isnan.astype(int)))
    return list(zip(edges[::2], edges[1::2]))


def fill_nan_runs(values: np.ndarray, max_run: int = MAX_NAN_RUN):
    """Linearly interpolate NaN runs of at most ``max_run`` samples.

    Args:
        values: Samples ``(T, n_columns)``.

    Returns:
        Filled copy of ``values`` and the indices of columns that contain
        a longer run (left unfilled).
    """
    values = np.array(values, dtype=float)
    too_long = []
    samples = np.arange(len(values))
    for k in range(values.shape[1]):
        column = values[:, k]
        runs = _nan_runs(column)
        if not runs:
            continue
        if any(stop - start > max_run for start, stop in runs) or np.all(np.isnan(column)):
            too_long.append(k)
            continue
        valid = ~np.isnan(column)
        values[:, k] = np.interp(samples, samples[valid], column[valid])
    return values, too_long


def resample(values: np.ndarray, rate: float, target_rate: float = TARGET_RATE):
    """Polyphase resampling along the first axis.

    The anti-aliasing filter is linear phase and centred, so resampled
    signals have no lag.
    """
    if rate == target_rate:
        return values
    ratio = Fraction(target_rate / rate).limit_denominator(1000)
    return resample_poly(values, ratio.numerator, ratio.denominator, axis=0)


def _read_header(csv_path: str) -> List[str]:
    with open(csv_path, 'r') as f:
        return [name.strip() for name in f.readline().strip().split(',')]


def read_trial(csv_path: str, target_rate: float = TARGET_RATE) -> TrialRecord:
    """Read, validate and resample a single trial.

    Raises:
        TrialRejectedError: Schema mismatch, non-monotone timestamps or NaN
            runs longer than five samples.
    """
    name = os.path.splitext(os.path.basename(csv_path))[0]
    sidecar = os.path.splitext(csv_path)[0] + '.json'
    if not os.path.exists(sidecar):
        raise TrialRejectedError(name, [f'missing sidecar {os.path.basename(sidecar)}'])
    try:
        with open(sidecar, 'r') as f:
            metadata = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise TrialRejectedError(name, [f'unreadable sidecar: {e}'])

    reasons = []
    try:
        rate = float(metadata['sample_rate'])
        sensors = tuple(metadata['sensors'])
        height = float(metadata['subject']['height'])
        mass = float(metadata['subject']['mass'])
    except (KeyError, TypeError, ValueError) as e:
        raise TrialRejectedError(name, [f'malformed sidecar: {e!r}'])
    if not rate > 0:
        reasons.append(f'sample rate {rate} is not positive')
    unknown = [sensor for sensor in sensors if sensor not in SENSORS]
    if unknown:
        reasons.append(f'unknown sensors {unknown}')

    header = _read_header(csv_path)
    try:
        data = np.loadtxt(csv_path, delimiter=',', skiprows=1, ndmin=2)
    except ValueError as e:
        # Non-numeric cells or ragged rows
        raise TrialRejectedError(name, [f'unreadable data: {e}'])
    if data.shape[1] != len(header):
        raise TrialRejectedError(name, [f'{data.shape[1]} columns but '
                                        f'{len(header)} header names'])
    column_index = {column: k for k, column in enumerate(header)}

    imu_columns = [f'{sensor}.{channel}' for sensor in sensors
                   for channel in IMU_CHANNELS]
    missing = [c for c in ['time'] + imu_columns if c not in column_index]
    if missing:
        reasons.append(f'missing columns {missing}')
    references = metadata.get('references', {})
    if not isinstance(references, dict):
        raise TrialRejectedError(name, ['malformed sidecar: references must be a mapping'])
    reference_columns = {}
    for stream, shape in references.items():
        try:
            shape = [int(n) for n in shape or []]
        except (TypeError, ValueError):
            raise TrialRejectedError(name, [f'malformed shape of reference {stream}'])
        size = int(np.prod(shape)) if shape else 1
        columns = [f'ref.{stream}.{k}' for k in range(size)]
        missing = [c for c in columns if c not in column_index]
        if missing:
            reasons.append(f'missing reference columns {missing[:3]}')
        reference_columns[stream] = (columns, shape)
    if reasons:
        raise TrialRejectedError(name, reasons)

    time = data[:, column_index['time']]
    if np.any(np.isnan(time)) or np.any(np.diff(time) <= 0):
        raise TrialRejectedError(name, ['non-monotone timestamps'])

    imu = data[:, [column_index[c] for c in imu_columns]]
    imu, too_long = fill_nan_runs(imu)
    if too_long:
        raise TrialRejectedError(name, [f'NaN run longer than {MAX_NAN_RUN} '
                                        f'samples in {[imu_columns[k] for k in too_long]}'])

    # Non-uniform timestamps are interpolated onto the nominal grid
    nominal = time[0] + np.arange(len(time)) / rate
    if np.max(np.abs(time - nominal)) > 0.01 / rate:
        logger.warning(f'Trial {name} has non-uniform timestamps, interpolating')
        grid = time[0] + np.arange(int(np.floor((time[-1] - time[0]) * rate)) + 1) / rate
        imu = np.column_stack([np.interp(grid, time, imu[:, k])
                               for k in range(imu.shape[1])])
    else:
        grid = time

    ref_values = {}
    for stream, (columns, shape) in reference_columns.items():
        values = data[:, [column_index[c] for c in columns]]
        if len(grid) != len(time):
            values = np.column_stack([np.interp(grid, time, values[:, k])
                                      for k in range(values.shape[1])])
        ref_values[stream] = resample(values, rate, target_rate).reshape(
            (-1,) + tuple(shape))

    imu = resample(imu, rate, target_rate).reshape(-1, len(sensors), 3)
    placement = None
    if 'placement' in metadata:
        try:
            placement = ImuPlacement.from_dict(metadata['placement'])
        except (KeyError, TypeError, ValueError) as e:
            raise TrialRejectedError(name, [f'malformed placement: {e}'])
    return TrialRecord(name=name,
                       imu=ImuSequence(imu, sensors, target_rate),
                       height=height, mass=mass, placement=placement,
                       references=ref_values)


def ingest_with_report(path: str, format: str = 'csv',
                       target_rate: float = TARGET_RATE):
    """Read all trials in a folder, collecting rejections.

    Returns:
        Accepted records sorted by name, and the `TrialRejectedError` of
        every rejected trial.
    """
    if format != 'csv':
        raise InvalidInputError(f'Unknown trial format {format}')
    if os.path.isdir(path):
        csv_paths = sorted(os.path.join(path, filename) for filename in os.listdir(path)
                           if filename.endswith('.csv'))
    elif os.path.exists(path):
        csv_paths = [path]
    else:
        raise FileNotFoundError(f'No trial data at {path}')

    records, rejections = [], []
    for csv_path in csv_paths:
        try:
            records.append(read_trial(csv_path, target_rate))
        except TrialRejectedError as e:
            logger.warning(str(e))
            rejections.append(e)
    logger.info(f'Ingested {len(records)} trials from {path}, '
                f'rejected {len(rejections)}')
    return records, rejections


def ingest(path: str, format: str = 'csv',
           target_rate: float = TARGET_RATE) -> List[TrialRecord]:
    """Read all valid trials in a folder, sorted by name."""
    records, _ = ingest_with_report(path, format, target_rate)
    return records
