from typing import Dict, Sequence
import json
import logging

import numpy as np

__all__ = ['is_between', 'JSONEncoder', 'to_json', 'spawn_generators']

logger = logging.getLogger(__name__)


def is_between(val,
               min_val: float = None,
               max_val: float = None,
               tolerance: float = 1e-13) -> bool:
    """Check if value is between min and max, taking machine precision into account"""
    if min_val is not None and np.min(val) < min_val - tolerance:
        return False
    elif max_val is not None and np.max(val) > max_val + tolerance:
        return False
    else:
        return True


class JSONEncoder(json.JSONEncoder):
    """JSON encoder that also handles numpy scalars and arrays.

    Objects with a ``to_dict`` method are encoded through it.
    """
    def default(self, obj):
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        elif isinstance(obj, np.generic):
            return obj.item()
        elif hasattr(obj, 'to_dict'):
            return obj.to_dict()
        return super().default(obj)


def to_json(obj, **kwargs) -> str:
    return json.dumps(obj, cls=JSONEncoder, **kwargs)


def spawn_generators(seed: int, names: Sequence[str]) -> Dict[str, np.random.Generator]:
    """Independent random generators derived from a single seed.

    Each name gets its own stream, so adding a consumer does not shift the
    random numbers seen by the others.
    """
    sequence = np.random.SeedSequence(seed)
    children = sequence.spawn(len(names))
    return {name: np.random.default_rng(child) for name, child in zip(names, children)}
