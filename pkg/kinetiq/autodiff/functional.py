"""Math functions that accept either numpy arrays or `Tensor` objects.

Physics code (kinematics, dynamics, contact, losses) is written once against
these functions. With plain arrays it runs as ordinary numpy, which the
forward-dynamics oracle and the synthetic generator rely on for speed; with
tensors every operation is recorded for reverse-mode differentiation.
"""
from typing import Sequence

import numpy as np
from scipy.special import expit

from kinetiq.autodiff import tensor as T
from kinetiq.autodiff.tensor import Tensor

__all__ = ['is_tensor', 'value', 'sin', 'cos', 'tanh', 'sigmoid', 'exp',
           'log', 'softplus', 'sqrt', 'abs', 'stack', 'concat', 'where',
           'maximum', 'minimum', 'clamp', 'sum', 'mean', 'max', 'std',
           'cumsum', 'zeros_like']


def is_tensor(*args) -> bool:
    return any(isinstance(arg, Tensor) for arg in args)


def value(x) -> np.ndarray:
    """Underlying array of ``x``, without gradient tracking."""
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def sin(x):
    return T.sin(x) if is_tensor(x) else np.sin(x)


def cos(x):
    return T.cos(x) if is_tensor(x) else np.cos(x)


def tanh(x):
    return T.tanh(x) if is_tensor(x) else np.tanh(x)


def sigmoid(x):
    return T.sigmoid(x) if is_tensor(x) else expit(x)


def exp(x):
    return T.exp(x) if is_tensor(x) else np.exp(x)


def log(x):
    return T.log(x) if is_tensor(x) else np.log(x)


def softplus(x):
    """``log(1 + exp(x))`` without overflow for large ``|x|``."""
    return T.softplus(x) if is_tensor(x) else np.logaddexp(0, x)


def sqrt(x):
    return T.sqrt(x) if is_tensor(x) else np.sqrt(x)


def abs(x):
    return T.absolute(x) if is_tensor(x) else np.abs(x)


def stack(xs: Sequence, axis: int = 0):
    return T.stack(xs, axis=axis) if is_tensor(*xs) else np.stack(xs, axis=axis)


def concat(xs: Sequence, axis: int = 0):
    if is_tensor(*xs):
        return T.concat(xs, axis=axis)
    return np.concatenate(xs, axis=axis)


def where(condition, a, b):
    if is_tensor(a, b):
        return T.where(condition, a, b)
    return np.where(value(condition), a, b)


def maximum(a, b):
    return T.maximum(a, b) if is_tensor(a, b) else np.maximum(a, b)


def minimum(a, b):
    return T.minimum(a, b) if is_tensor(a, b) else np.minimum(a, b)


def clamp(x, lower=None, upper=None):
    if lower is not None:
        x = maximum(x, lower)
    if upper is not None:
        x = minimum(x, upper)
    return x


def sum(x, axis=None, keepdims=False):
    if is_tensor(x):
        return x.sum(axis=axis, keepdims=keepdims)
    return np.sum(x, axis=axis, keepdims=keepdims)


def mean(x, axis=None, keepdims=False):
    if is_tensor(x):
        return x.mean(axis=axis, keepdims=keepdims)
    return np.mean(x, axis=axis, keepdims=keepdims)


def max(x, axis=None, keepdims=False):
    if is_tensor(x):
        return x.max(axis=axis, keepdims=keepdims)
    return np.max(x, axis=axis, keepdims=keepdims)


def std(x, axis=None, keepdims=False):
    if is_tensor(x):
        return x.std(axis=axis, keepdims=keepdims)
    return np.std(x, axis=axis, keepdims=keepdims)


def cumsum(x, axis: int):
    return T.cumsum(x, axis=axis) if is_tensor(x) else np.cumsum(x, axis=axis)


def zeros_like(x):
    """Constant zeros (never tracked) with the shape of ``x``."""
    return np.zeros(np.shape(value(x)), dtype=value(x).dtype)
