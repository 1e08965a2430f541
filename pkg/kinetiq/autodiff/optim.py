from typing import Dict, List, Sequence, Tuple
import logging

import numpy as np

from kinetiq.autodiff.tensor import Tensor

__all__ = ['adam_step', 'Adam', 'clip_grad_norm', 'global_grad_norm']

logger = logging.getLogger(__name__)


def adam_step(params: Sequence[np.ndarray],
              grads: Sequence[np.ndarray],
              moments: Sequence[Tuple[np.ndarray, np.ndarray]],
              lr: float,
              t: int,
              beta1: float = 0.9,
              beta2: float = 0.999,
              eps: float = 1e-8):
    """Single bias-corrected Adam update.

    Args:
        params: Parameter arrays.
        grads: Gradients, same shapes as ``params``.
        moments: ``(m, v)`` first and second moment estimates per parameter.
        lr: Learning rate.
        t: Step count, starting at 1.

    Returns:
        Updated parameters and moments, as new arrays.
    """
    new_params, new_moments = [], []
    for param, grad, (m, v) in zip(params, grads, moments):
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad ** 2
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        new_params.append(param - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_moments.append((m, v))
    return new_params, new_moments


def global_grad_norm(params: Sequence[Tensor]) -> float:
    total = 0.
    for param in params:
        if param.grad is not None:
            total += float(np.sum(param.grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Rescale gradients in place so their global norm is at most ``max_norm``.

    Returns:
        Global gradient norm before clipping.
    """
    norm = global_grad_norm(params)
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        logger.debug(f'Clipping gradient norm {norm:.3g} to {max_norm}')
        for param in params:
            if param.grad is not None:
                param.grad = param.grad * scale
    return norm


class Adam:
    """Adam optimizer acting on `Tensor` parameters in place.

    Args:
        params: Trainable tensors (``requires_grad=True``).
        lr: Learning rate.
        betas: Exponential decay rates of the moment estimates.
        eps: Denominator offset.
    """
    def __init__(self,
                 params: List[Tensor],
                 lr: float = 1e-3,
                 betas: Tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.moments = [(np.zeros_like(p.data), np.zeros_like(p.data))
                        for p in self.params]

    def zero_grad(self):
        for param in self.params:
            param.zero_grad()

    def step(self):
        self.t += 1
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                 for p in self.params]
        new_params, self.moments = adam_step(
            [p.data for p in self.params], grads, self.moments, lr=self.lr,
            t=self.t, beta1=self.betas[0], beta2=self.betas[1], eps=self.eps)
        for param, data in zip(self.params, new_params):
            param.data = data.astype(param.dtype, copy=False)

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {'t': np.array(self.t)}
        for k, (m, v) in enumerate(self.moments):
            state[f'm{k}'] = m
            state[f'v{k}'] = v
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        self.t = int(state['t'])
        self.moments = [(np.array(state[f'm{k}']), np.array(state[f'v{k}']))
                        for k in range(len(self.params))]
