"""Reverse-mode automatic differentiation over numpy arrays.

A `Tensor` wraps an ``np.ndarray``. Operations on tensors that require a
gradient record their parents together with a pullback (vector-Jacobian
product), so `backward` can propagate adjoints from a scalar loss to every
leaf with ``requires_grad=True``.

Operations can additionally be recorded on a `Tape`. Replaying a tape in
reverse creation order is a valid topological order, which is what
`Tape.backward` does; the module-level `backward` sorts the graph reachable
from the loss instead. Both give identical adjoints.

Ties in ``max``/``maximum``/``minimum`` route the gradient to the left (first)
operand, and ``abs`` uses ``sign(0) = 0``.
"""
from typing import Callable, List, Sequence, Tuple, Union
import logging

import numpy as np
from scipy.special import expit

from kinetiq.errors import InvalidInputError

__all__ = ['Tensor', 'Tape', 'backward', 'as_tensor', 'concat', 'stack',
           'where', 'maximum', 'minimum', 'cumsum']

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence]


def _as_array(data, dtype=None) -> np.ndarray:
    array = np.asarray(data, dtype=dtype)
    if dtype is None and array.dtype.kind not in 'fc':
        array = array.astype(np.float64)
    return array


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` over the axes that were broadcast to reach its shape."""
    if grad.shape == shape:
        return grad
    extra_dims = grad.ndim - len(shape)
    if extra_dims > 0:
        grad = grad.sum(axis=tuple(range(extra_dims)))
    axes = tuple(k for k, dim in enumerate(shape)
                 if dim == 1 and grad.shape[k] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tape:
    """Ordered record of the operations performed while it is active.

    >>> with Tape() as tape:
    ...     loss = (x * x).sum()
    >>> tape.backward(loss)

    Tapes are not retained across training steps; a new tape is built for
    every minibatch.
    """
    _active: List['Tape'] = []

    def __init__(self):
        self.nodes: List['Tensor'] = []

    def __enter__(self):
        Tape._active.append(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        Tape._active.remove(self)

    def __len__(self):
        return len(self.nodes)

    @classmethod
    def record(cls, node: 'Tensor'):
        for tape in cls._active:
            tape.nodes.append(node)

    def backward(self, loss: 'Tensor'):
        """Propagate adjoints of ``loss`` by replaying the tape in reverse."""
        _propagate(loss, reversed(self.nodes))


class Tensor:
    """Dense array with an optional gradient slot.

    Args:
        data: Array data. Integer inputs are promoted to 64-bit floats; float
            arrays keep their precision (32-bit for throughput training).
        requires_grad: Whether gradients should be accumulated into ``grad``.
        name: Optional name, used in checkpoints and error messages.
    """
    # Let numpy binary operators defer to the Tensor reflected operators
    __array_ufunc__ = None

    def __init__(self,
                 data: ArrayLike,
                 requires_grad: bool = False,
                 name: str = None,
                 dtype=None):
        self.data = _as_array(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._parents: Tuple['Tensor', ...] = ()
        self._pullback: Callable = None

    def __repr__(self):
        name = f' {self.name}' if self.name else ''
        return f'Tensor{name}({self.data!r}, requires_grad={self.requires_grad})'

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> 'Tensor':
        return self.transpose()

    def __len__(self):
        return len(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> 'Tensor':
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    # Comparisons are not differentiable and return boolean arrays
    def __lt__(self, other):
        return self.data < _value(other)

    def __le__(self, other):
        return self.data <= _value(other)

    def __gt__(self, other):
        return self.data > _value(other)

    def __ge__(self, other):
        return self.data >= _value(other)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __abs__(self):
        return absolute(self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce_max(self, axis=axis, keepdims=keepdims)

    def std(self, axis=None, keepdims=False):
        return reduce_std(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, axis1: int, axis2: int):
        axes = list(range(self.ndim))
        axes[axis1], axes[axis2] = axes[axis2], axes[axis1]
        return transpose(self, tuple(axes))

    def tanh(self):
        return tanh(self)

    def sin(self):
        return sin(self)

    def cos(self):
        return cos(self)

    def exp(self):
        return exp(self)


def _value(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None:
        dtype = np.float64
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data: np.ndarray,
            parents: Tuple[Tensor, ...],
            pullback: Callable) -> Tensor:
    """Create the output node of a primitive.

    Args:
        data: Forward value.
        parents: Input tensors.
        pullback: Maps the output adjoint to one adjoint per parent (``None``
            for parents that do not need one).
    """
    out = Tensor(data)
    if any(parent.requires_grad for parent in parents):
        out.requires_grad = True
        out._parents = parents
        out._pullback = pullback
        Tape.record(out)
    return out


def _binary_operands(a, b) -> Tuple[Tensor, Tensor]:
    a_tensor, b_tensor = isinstance(a, Tensor), isinstance(b, Tensor)
    if a_tensor and not b_tensor:
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif b_tensor and not a_tensor:
        a = Tensor(np.asarray(a, dtype=b.dtype))
    elif not a_tensor and not b_tensor:
        a, b = as_tensor(a), as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise InvalidInputError(f'Cannot broadcast shapes {a.shape} and '
                                f'{b.shape}')
    return a, b


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape),
                              _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape),
                              _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _result(a.data / b.data, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * a.data / b.data ** 2, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    return _result(a.data ** exponent, (a,),
                   lambda g: (g * exponent * a.data ** (exponent - 1),))


def matmul(a, b) -> Tensor:
    a, b = _binary_operands_matmul(a, b)

    def pullback(g):
        grad_a = np.matmul(g, np.swapaxes(b.data, -1, -2))
        grad_b = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)
    return _result(np.matmul(a.data, b.data), (a, b), pullback)


def _binary_operands_matmul(a, b) -> Tuple[Tensor, Tensor]:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise InvalidInputError(f'matmul needs at least 2-D operands, got '
                                f'{a.shape} @ {b.shape}')
    if a.shape[-1] != b.shape[-2]:
        raise InvalidInputError(f'Cannot matmul shapes {a.shape} @ {b.shape}')
    return a, b


def tanh(a: Tensor) -> Tensor:
    value = np.tanh(a.data)
    return _result(value, (a,), lambda g: (g * (1 - value ** 2),))


def sigmoid(a: Tensor) -> Tensor:
    value = expit(a.data)
    return _result(value, (a,), lambda g: (g * value * (1 - value),))


def exp(a: Tensor) -> Tensor:
    value = np.exp(a.data)
    return _result(value, (a,), lambda g: (g * value,))


def log(a: Tensor) -> Tensor:
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def softplus(a: Tensor) -> Tensor:
    """``log(1 + exp(a))``, overflow-safe in both tails."""
    return _result(np.logaddexp(0, a.data), (a,),
                   lambda g: (g * expit(a.data),))


def sin(a: Tensor) -> Tensor:
    return _result(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a: Tensor) -> Tensor:
    return _result(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def sqrt(a: Tensor) -> Tensor:
    value = np.sqrt(a.data)
    return _result(value, (a,), lambda g: (g / (2 * value),))


def absolute(a: Tensor) -> Tensor:
    return _result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(part is Ellipsis or part is None
               or isinstance(part, (int, np.integer, slice)) for part in parts)


def getitem(a: Tensor, index) -> Tensor:
    def pullback(g):
        grad = np.zeros_like(a.data)
        if _is_basic_index(index):
            # Basic indexing never repeats an element
            grad[index] = g
        else:
            np.add.at(grad, index, g)
        return (grad,)
    return _result(a.data[index], (a,), pullback)


def reshape(a: Tensor, shape) -> Tensor:
    return _result(a.data.reshape(shape), (a,),
                   lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    inverse = None if axes is None else tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,),
                   lambda g: (np.transpose(g, inverse),))


def _expand_reduced(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def reduce_sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,),
                   lambda g: (_expand_reduced(g, a.shape, axis, keepdims).copy(),))


def reduce_mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    value = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / max(np.size(value), 1)
    return _result(value, (a,),
                   lambda g: (_expand_reduced(g, a.shape, axis, keepdims) / count,))


def reduce_max(a: Tensor, axis=None, keepdims=False) -> Tensor:
    value = a.data.max(axis=axis, keepdims=keepdims)

    def pullback(g):
        # Route to the first maximal element only
        if axis is None:
            mask = np.zeros(a.data.size, dtype=bool)
            mask[np.argmax(a.data)] = True
            mask = mask.reshape(a.shape)
        else:
            first = np.expand_dims(np.argmax(a.data, axis=axis), axis)
            mask = np.zeros(a.shape, dtype=bool)
            np.put_along_axis(mask, first, True, axis=axis)
        return (np.where(mask, _expand_reduced(g, a.shape, axis, keepdims), 0.),)
    return _result(value, (a,), pullback)


def reduce_std(a: Tensor, axis=None, keepdims=False) -> Tensor:
    """Population standard deviation (``ddof = 0``)."""
    mean = a.data.mean(axis=axis, keepdims=True)
    value = np.sqrt(((a.data - mean) ** 2).mean(axis=axis, keepdims=True))
    count = a.data.size / value.size

    def pullback(g):
        g = np.reshape(g, value.shape)
        # Constant channels have zero deviation everywhere, so zero gradient
        safe_value = np.where(value > 0, value, 1.)
        return ((a.data - mean) * g / (count * safe_value),)

    if keepdims:
        out_value = value
    elif axis is None:
        out_value = value.reshape(())
    else:
        out_value = np.squeeze(value, axis=axis)
    return _result(out_value, (a,), pullback)


def maximum(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    left = a.data >= b.data
    return _result(np.maximum(a.data, b.data), (a, b),
                   lambda g: (_unbroadcast(np.where(left, g, 0.), a.shape),
                              _unbroadcast(np.where(left, 0., g), b.shape)))


def minimum(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    left = a.data <= b.data
    return _result(np.minimum(a.data, b.data), (a, b),
                   lambda g: (_unbroadcast(np.where(left, g, 0.), a.shape),
                              _unbroadcast(np.where(left, 0., g), b.shape)))


def where(condition, a, b) -> Tensor:
    condition = np.asarray(_value(condition), dtype=bool)
    a, b = _binary_operands(a, b)
    return _result(np.where(condition, a.data, b.data), (a, b),
                   lambda g: (_unbroadcast(np.where(condition, g, 0.), a.shape),
                              _unbroadcast(np.where(condition, 0., g), b.shape)))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    try:
        value = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise InvalidInputError(f'Cannot concatenate: {e}') from e
    return _result(value, tuple(tensors),
                   lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        value = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise InvalidInputError(f'Cannot stack: {e}') from e
    return _result(value, tuple(tensors),
                   lambda g: tuple(np.take(g, k, axis=axis)
                                   for k in range(len(tensors))))


def cumsum(a: Tensor, axis: int) -> Tensor:
    def pullback(g):
        return (np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis),)
    return _result(np.cumsum(a.data, axis=axis), (a,), pullback)


def _topological_order(loss: Tensor) -> List[Tensor]:
    order, visited = [], set()
    stack_ = [(loss, False)]
    while stack_:
        node, processed = stack_.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack_.append((parent, False))
    return order[::-1]


def _propagate(loss: Tensor, nodes):
    if loss.size != 1:
        raise InvalidInputError(f'backward needs a scalar loss, got shape '
                                f'{loss.shape}')
    adjoints = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for node in nodes:
        adjoint = adjoints.pop(id(node), None)
        if adjoint is None:
            continue
        if node._pullback is None:
            leaves[id(node)] = (node, adjoint)
            continue
        for parent, grad in zip(node._parents, node._pullback(adjoint)):
            if grad is None or not parent.requires_grad:
                continue
            if parent._pullback is None:
                # Leaf: accumulate without touching intermediate adjoints
                if id(parent) in leaves:
                    leaves[id(parent)] = (parent, leaves[id(parent)][1] + grad)
                else:
                    leaves[id(parent)] = (parent, grad)
            elif id(parent) in adjoints:
                adjoints[id(parent)] = adjoints[id(parent)] + grad
            else:
                adjoints[id(parent)] = grad

    for leaf, grad in leaves.values():
        grad = np.asarray(grad, dtype=leaf.dtype).reshape(leaf.shape)
        leaf.grad = grad.copy() if leaf.grad is None else leaf.grad + grad


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``grad`` of every leaf requiring it.

    Calling twice without resetting grads doubles them exactly.
    """
    _propagate(loss, _topological_order(loss))
