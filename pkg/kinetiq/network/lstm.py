"""Recurrent estimator: stacked LSTM followed by two dense layers."""
from collections import OrderedDict
from dataclasses import dataclass, asdict
from time import perf_counter
from typing import Dict, List, Optional, Tuple
import logging

import numpy as np

from kinetiq.autodiff import functional as F
from kinetiq.autodiff.tensor import Tensor
from kinetiq.errors import ConfigError, InvalidInputError
from kinetiq.network.layout import N_OUTPUTS

__all__ = ['NetworkConfig', 'Estimator', 'StreamingSession', 'init_params',
           'parameter_count', 'parameter_names', 'measure_step_latency']

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NetworkConfig:
    lstm_layers: int = 2
    hidden: int = 512
    dropout: float = 0.4
    dense1: int = 128
    out: int = N_OUTPUTS
    bidirectional: bool = False

    def __post_init__(self):
        if self.out != N_OUTPUTS:
            raise ConfigError(f'Network must emit {N_OUTPUTS} outputs, not {self.out}')
        for name in ['lstm_layers', 'hidden', 'dense1']:
            if getattr(self, name) < 1:
                raise ConfigError(f'network.{name} must be positive')
        if not 0 <= self.dropout < 1:
            raise ConfigError(f'network.dropout must lie in [0, 1), got {self.dropout}')

    @property
    def directions(self) -> int:
        return 2 if self.bidirectional else 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_config(cls, config) -> 'NetworkConfig':
        types = {'lstm_layers': int, 'hidden': int, 'dense1': int, 'out': int,
                 'dropout': float, 'bidirectional': bool}
        kwargs = {}
        for key, val in dict(config).items():
            if key not in types:
                raise ConfigError(f'Unknown network setting {key}')
            expected = types[key]
            if expected is bool and not isinstance(val, bool):
                raise ConfigError(f'network.{key} must be a bool, got {val!r}')
            if expected is not bool and (isinstance(val, bool)
                                         or not isinstance(val, (int, float))
                                         or (expected is int and int(val) != val)):
                raise ConfigError(f'network.{key} must be {expected.__name__}, '
                                  f'got {val!r}')
            kwargs[key] = expected(val)
        return cls(**kwargs)


def _lstm_names(config: NetworkConfig) -> List[Tuple[int, str]]:
    suffixes = ['fwd', 'bwd'][:config.directions]
    return [(layer, f'lstm{layer}_{suffix}') for layer in range(config.lstm_layers)
            for suffix in suffixes]


def parameter_names(config: NetworkConfig) -> List[str]:
    """Parameter names in initialization order."""
    names = []
    for _, name in _lstm_names(config):
        names += [f'{name}.W_ih', f'{name}.W_hh', f'{name}.b']
    return names + ['dense1.W', 'dense1.b', 'dense2.W', 'dense2.b']


def parameter_count(config: NetworkConfig, n_inputs: int) -> int:
    """Closed-form number of trainable scalars."""
    count = 0
    H = config.hidden
    for layer in range(config.lstm_layers):
        fan_in = n_inputs if layer == 0 else H * config.directions
        count += config.directions * 4 * H * (fan_in + H + 1)
    count += (H * config.directions + 1) * config.dense1
    count += (config.dense1 + 1) * config.out
    return count


def init_params(config: NetworkConfig, n_inputs: int, seed: int) -> Dict[str, np.ndarray]:
    """Uniform fan-in initialization with forget-gate bias +1.

    LSTM weights and biases are drawn from ``U(-1/√H, 1/√H)``, dense layers
    from ``U(-1/√fan_in, 1/√fan_in)``. Gate blocks are ordered input, forget,
    cell, output.
    """
    rng = np.random.default_rng(seed)
    H = config.hidden
    params = OrderedDict()
    bound = 1 / np.sqrt(H)
    for layer, name in _lstm_names(config):
        fan_in = n_inputs if layer == 0 else H * config.directions
        params[f'{name}.W_ih'] = rng.uniform(-bound, bound, (fan_in, 4 * H))
        params[f'{name}.W_hh'] = rng.uniform(-bound, bound, (H, 4 * H))
        bias = rng.uniform(-bound, bound, 4 * H)
        bias[H:2 * H] += 1.
        params[f'{name}.b'] = bias

    for name, fan_in, fan_out in [('dense1', H * config.directions, config.dense1),
                                  ('dense2', config.dense1, config.out)]:
        dense_bound = 1 / np.sqrt(fan_in)
        params[f'{name}.W'] = rng.uniform(-dense_bound, dense_bound, (fan_in, fan_out))
        params[f'{name}.b'] = rng.uniform(-dense_bound, dense_bound, fan_out)
    return params


def _dropout(x, rate: float, rng: np.random.Generator):
    keep = rng.random(np.shape(F.value(x))) >= rate
    return x * (keep / (1 - rate))


def _lstm_cell(gates_x, h, c, W_hh, b, H: int):
    gates = gates_x + h @ W_hh + b
    i = F.sigmoid(gates[..., 0:H])
    f = F.sigmoid(gates[..., H:2 * H])
    g = F.tanh(gates[..., 2 * H:3 * H])
    o = F.sigmoid(gates[..., 3 * H:4 * H])
    c = f * c + i * g
    h = o * F.tanh(c)
    return h, c


class Estimator:
    """LSTM estimator mapping input sequences to the 46 output features.

    Args:
        config: Network sizes.
        n_inputs: Input channels per timestep.
        seed: Initialization seed.
        params: Parameters to use instead of a fresh initialization.
        dtype: Parameter precision.
    """
    def __init__(self,
                 config: NetworkConfig,
                 n_inputs: int,
                 seed: int = 0,
                 params: Dict[str, np.ndarray] = None,
                 dtype=np.float64):
        self.config = config
        self.n_inputs = n_inputs
        if params is None:
            params = init_params(config, n_inputs, seed)
        self.params = OrderedDict(
            (name, Tensor(np.asarray(value, dtype=dtype), requires_grad=True, name=name))
            for name, value in params.items())

    def __repr__(self):
        return (f'Estimator(layers={self.config.lstm_layers}, '
                f'hidden={self.config.hidden}, inputs={self.n_inputs})')

    @property
    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def state_dict(self) -> Dict[str, np.ndarray]:
        return OrderedDict((name, param.data.copy()) for name, param in self.params.items())

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        for name, param in self.params.items():
            if state[name].shape != param.shape:
                raise InvalidInputError(f'Parameter {name} has shape '
                                        f'{state[name].shape}, expected {param.shape}')
            param.data = np.array(state[name], dtype=param.dtype)

    def _values(self, differentiable: bool):
        if differentiable:
            return self.params
        return {name: param.data for name, param in self.params.items()}

    def initial_state(self, batch_shape=()) -> List[Tuple[np.ndarray, np.ndarray]]:
        H = self.config.hidden
        zeros = np.zeros(tuple(batch_shape) + (H,))
        return [(zeros, zeros) for _ in _lstm_names(self.config)]

    def forward(self,
                inputs,
                state: List[Tuple] = None,
                training: bool = False,
                rng: np.random.Generator = None,
                differentiable: bool = None):
        """Run the estimator over a sequence.

        Args:
            inputs: Inputs ``(B, T, n_inputs)`` or ``(T, n_inputs)``.
            state: Initial ``(h, c)`` per LSTM layer and direction. Zeros by
                default. Only used for unidirectional networks.
            training: Apply dropout.
            rng: Dropout random generator, required when training.
            differentiable: Record operations for backpropagation. Defaults to
                ``training``.

        Returns:
            Outputs ``(..., T, 46)`` and the final hidden state.

        Raises:
            InvalidInputError: Wrong number of input channels.
        """
        if differentiable is None:
            differentiable = training or F.is_tensor(inputs)
        if np.shape(F.value(inputs))[-1] != self.n_inputs:
            raise InvalidInputError(f'Expected {self.n_inputs} input channels, '
                                    f'got {np.shape(F.value(inputs))[-1]}')
        if training and self.config.dropout > 0 and rng is None:
            raise InvalidInputError('Training mode needs a dropout generator')
        if state is not None and self.config.bidirectional:
            raise InvalidInputError('Bidirectional networks cannot carry state')
        unbatched = np.ndim(F.value(inputs)) == 2
        if unbatched:
            outputs, final_state = self.forward(
                inputs[None], None if state is None else
                [(h[None], c[None]) for h, c in state],
                training=training, rng=rng, differentiable=differentiable)
            return outputs[0], [(h[0], c[0]) for h, c in final_state]

        params = self._values(differentiable)
        H = self.config.hidden
        batch_shape = np.shape(F.value(inputs))[:-2]
        T = np.shape(F.value(inputs))[-2]
        if state is None:
            state = self.initial_state(batch_shape)

        x = inputs
        final_state = []
        names = _lstm_names(self.config)
        for layer in range(self.config.lstm_layers):
            layer_outputs = []
            for k, (l, name) in enumerate(names):
                if l != layer:
                    continue
                gates_x = x @ params[f'{name}.W_ih']
                h, c = state[k]
                steps = range(T) if name.endswith('fwd') else reversed(range(T))
                hs = [None] * T
                for t in steps:
                    h, c = _lstm_cell(gates_x[..., t, :], h, c,
                                      params[f'{name}.W_hh'], params[f'{name}.b'], H)
                    hs[t] = h
                final_state.append((h, c))
                layer_outputs.append(F.stack(hs, axis=-2))
            x = layer_outputs[0] if len(layer_outputs) == 1 \
                else F.concat(layer_outputs, axis=-1)
            if training and self.config.dropout > 0:
                x = _dropout(x, self.config.dropout, rng)

        hidden = F.tanh(x @ params['dense1.W'] + params['dense1.b'])
        outputs = hidden @ params['dense2.W'] + params['dense2.b']
        return outputs, final_state

    def session(self) -> 'StreamingSession':
        return StreamingSession(self)


class StreamingSession:
    """Single-owner inference session processing one timestep at a time."""
    def __init__(self, estimator: Estimator):
        if estimator.config.bidirectional:
            raise InvalidInputError('Streaming needs a unidirectional network')
        self.estimator = estimator
        self.state = None
        self.steps = 0

    def reset(self):
        self.state = None
        self.steps = 0

    def step(self, inputs: np.ndarray) -> np.ndarray:
        """Outputs for a single timestep ``(..., n_inputs)``."""
        inputs = np.asarray(inputs, dtype=float)[..., None, :]
        outputs, self.state = self.estimator.forward(
            inputs, state=self.state, training=False, differentiable=False)
        self.steps += 1
        return outputs[..., 0, :]


def measure_step_latency(estimator: Estimator,
                         repeats: int = 1000,
                         warmup: int = 50,
                         seed: int = 0) -> Dict[str, float]:
    """Single-timestep streaming inference latency in milliseconds."""
    inputs = np.random.default_rng(seed).normal(size=(warmup + repeats,
                                                      estimator.n_inputs))
    session = estimator.session()
    for x in inputs[:warmup]:
        session.step(x)
    durations = []
    for x in inputs[warmup:]:
        t0 = perf_counter()
        session.step(x)
        durations.append((perf_counter() - t0) * 1e3)
    logger.debug(f'Measured {repeats} streaming steps of {estimator}')
    return {'median_ms': float(np.median(durations)),
            'mean_ms': float(np.mean(durations)),
            'p95_ms': float(np.percentile(durations, 95)),
            'repeats': repeats}
