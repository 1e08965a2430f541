"""HDF5 checkpoints of the estimator and its input conventions."""
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Optional
import json
import logging
import os

import h5py
import numpy as np

from kinetiq.errors import InvalidInputError, LayoutMismatchError
from kinetiq.model.body import ImuPlacement
from kinetiq.network.layout import InputLayout, ConditioningStats
from kinetiq.network.lstm import Estimator, NetworkConfig, parameter_names

__all__ = ['CHECKPOINT_FORMAT', 'Checkpoint', 'save_checkpoint',
           'load_checkpoint']

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1


@dataclass
class Checkpoint:
    """Estimator together with everything needed to feed it.

    Args:
        estimator: Network with parameters.
        layout: Input channel layout.
        stats: Conditioning normalization.
        placement: Sensor placement the network was last trained with.
        optimizer_state: Adam moments, if saved.
        metadata: Free-form JSON-serializable run information.
    """
    estimator: Estimator
    layout: InputLayout
    stats: ConditioningStats
    placement: Optional[ImuPlacement] = None
    optimizer_state: Dict[str, np.ndarray] = None
    metadata: dict = field(default_factory=dict)


def save_checkpoint(filepath: str, checkpoint: Checkpoint):
    """Write a checkpoint container.

    Parameters are stored as datasets under ``parameters/``, optimizer
    moments under ``optimizer/``, everything else as JSON attributes.
    """
    tmp_filepath = filepath + '.tmp'
    with h5py.File(tmp_filepath, 'w') as file:
        file.attrs['format_version'] = CHECKPOINT_FORMAT
        file.attrs['network_config'] = json.dumps(checkpoint.estimator.config.to_dict())
        file.attrs['n_inputs'] = checkpoint.estimator.n_inputs
        file.attrs['layout'] = json.dumps(checkpoint.layout.to_dict())
        file.attrs['conditioning_stats'] = json.dumps(checkpoint.stats.to_dict())
        file.attrs['metadata'] = json.dumps(checkpoint.metadata)
        if checkpoint.placement is not None:
            file.attrs['placement'] = json.dumps(checkpoint.placement.to_dict())

        parameters = file.create_group('parameters')
        for name, value in checkpoint.estimator.state_dict().items():
            parameters.create_dataset(name=name, data=value, compression='gzip')
        if checkpoint.optimizer_state is not None:
            optimizer = file.create_group('optimizer')
            for name, value in checkpoint.optimizer_state.items():
                optimizer.create_dataset(name=name, data=value)
    os.replace(tmp_filepath, filepath)
    logger.debug(f'Saved checkpoint {filepath}')


def load_checkpoint(filepath: str, layout: InputLayout = None) -> Checkpoint:
    """Read a checkpoint container.

    Args:
        filepath: Checkpoint file.
        layout: Expected input layout. If given, a checkpoint with a different
            layout is rejected.

    Raises:
        FileNotFoundError: No such file.
        InvalidInputError: Unknown format version.
        LayoutMismatchError: Layout differs from ``layout``.
    """
    if not os.path.exists(filepath):
        raise FileNotFoundError(f'Checkpoint {filepath} does not exist')
    with h5py.File(filepath, 'r') as file:
        version = int(file.attrs['format_version'])
        if version != CHECKPOINT_FORMAT:
            raise InvalidInputError(f'Checkpoint format {version} not supported, '
                                    f'expected {CHECKPOINT_FORMAT}')
        saved_layout = InputLayout.from_dict(json.loads(file.attrs['layout']))
        if layout is not None:
            layout.check_compatible(saved_layout)
        config = NetworkConfig(**json.loads(file.attrs['network_config']))
        try:
            params = OrderedDict((name, np.array(file['parameters'][name]))
                                 for name in parameter_names(config))
        except KeyError as e:
            raise InvalidInputError(f'Checkpoint {filepath} is missing parameter {e}') from e
        optimizer_state = None
        if 'optimizer' in file:
            optimizer_state = {name: np.array(dataset)
                               for name, dataset in file['optimizer'].items()}
        placement = None
        if 'placement' in file.attrs:
            placement = ImuPlacement.from_dict(json.loads(file.attrs['placement']))
        n_inputs = int(file.attrs['n_inputs'])
        if n_inputs != saved_layout.n_inputs:
            raise LayoutMismatchError(f'Checkpoint network takes {n_inputs} inputs '
                                      f'but its layout has {saved_layout.n_inputs}')
        estimator = Estimator(config, n_inputs,
                              params=params,
                              dtype=next(iter(params.values())).dtype)
        return Checkpoint(
            estimator=estimator,
            layout=saved_layout,
            stats=ConditioningStats.from_dict(json.loads(file.attrs['conditioning_stats'])),
            placement=placement,
            optimizer_state=optimizer_state,
            metadata=json.loads(file.attrs['metadata']))
