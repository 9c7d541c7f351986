# -*- coding: utf-8 -*-

"""tensor.py: Dense float64 tensors with reverse-mode automatic differentiation and a finite-difference gradient checker."""

# Broadcasting is restricted to equal shapes and 0-d scalars; everything else
# goes through the explicit expand() operation.

from collections import namedtuple
import itertools
import logging
import threading

import numpy as np

from .exceptions import DimensionError, GradCheckError, NumericError


logger = logging.getLogger(__name__)

_sequence = itertools.count()  # creation order of tensors, defines the tape order
_local = threading.local()  # per-thread relu kink monitoring


class Tensor():
    """Dense n-dimensional array of 64-bit reals participating in a gradient tape"""
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, data, requires_grad=False, name=None):
        """Instance initialization"""
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None
        self._op = None
        self._seq = next(_sequence)

    def __repr__(self):
        label = f' name={self.name}' if self.name else ''
        return f'Tensor(shape={self.shape}{label}, op={self._op}, requires_grad={self.requires_grad})'

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def item(self):
        """Returns the value of a single-element tensor as float"""
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def numpy(self):
        """Returns a copy of the data"""
        return self.data.copy()

    def detach(self):
        """Returns a new leaf tensor with the same data"""
        return Tensor(self.data)

    def zero_grad(self):
        """Resets the gradient buffer to zeros"""
        self.grad = np.zeros_like(self.data)

    def backward(self, leaves=None):
        """Runs reverse accumulation from this scalar tensor"""
        return backward(self, leaves=leaves)

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def relu(self):
        return relu(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def sum(self, axis=None):
        return reduce('sum', self, axis)

    def mean(self, axis=None):
        return reduce('mean', self, axis)


def as_tensor(value):
    """Returns the value as Tensor (constants are wrapped without gradient)"""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _record(data, parents, op, backward_fn):
    """Creates the output tensor of an operation and links it into the graph"""
    out = Tensor(data)
    out._op = op
    if any(parent.requires_grad for parent in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _check_broadcast(a, b, op):
    """Allow only equal shapes or a 0-d scalar operand"""
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise DimensionError(f'Incompatible shapes {a.shape} and {b.shape} for [{op}]')


def _unbroadcast(grad, tensor):
    """Reduce a gradient to the shape of a (possibly scalar) operand"""
    if tensor.ndim == 0 and grad.ndim != 0:
        return np.asarray(grad.sum())
    return grad


class Tape():
    """Ordered record of the operations leading to an output tensor"""

    def __init__(self, entries):
        """Instance initialization; entries must be in execution order"""
        self.entries = entries

    @classmethod
    def from_output(cls, output):
        """Collects all recorded tensors reachable from the output, in execution order"""
        seen = set()
        found = []
        stack = [output]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            found.append(node)
            stack.extend(parent for parent in node._parents if parent.requires_grad)
        found.sort(key=lambda node: node._seq)
        return cls(found)

    @property
    def operations(self):
        """Returns the non-leaf entries in execution order"""
        return [node for node in self.entries if not node.is_leaf]

    @property
    def leaves(self):
        return [node for node in self.entries if node.is_leaf]

    def __len__(self):
        return len(self.entries)


def backward(loss, leaves=None):
    """Populates .grad of every requires_grad tensor reachable from the scalar loss

    Gradients are recomputed from zero on each call; tensors in `leaves` that
    are not reachable are set to zero as well."""
    if loss.size != 1:
        raise DimensionError(f'backward needs a scalar loss, got shape {loss.shape}')
    if leaves is not None:
        for leaf in leaves:
            leaf.zero_grad()
    if not loss.requires_grad:
        logger.debug('Loss does not depend on any tensor requiring gradients')
        return Tape([])
    tape = Tape.from_output(loss)
    for node in tape.entries:
        node.zero_grad()
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.operations):
        parent_grads = node._backward(node.grad)
        for parent, grad in zip(node._parents, parent_grads):
            if grad is not None and parent.requires_grad:
                parent.grad += grad
    return tape


# Elementwise operations

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, 'add')
    return _record(a.data + b.data, (a, b), 'add',
                   lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, 'sub')
    return _record(a.data - b.data, (a, b), 'sub',
                   lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, 'mul')
    return _record(a.data * b.data, (a, b), 'mul',
                   lambda g: (_unbroadcast(g * b.data, a), _unbroadcast(g * a.data, b)))


def scale(x, factor):
    """Multiplies by a constant python scalar"""
    x = as_tensor(x)
    factor = float(factor)
    return _record(x.data * factor, (x,), 'scale', lambda g: (g * factor,))


def relu(x):
    """Rectified linear unit; the subgradient at 0 is 0"""
    x = as_tensor(x)
    active = x.data > 0
    monitor = getattr(_local, 'kinks', None)
    if monitor is not None:
        monitor.append(active.copy())
    return _record(np.where(active, x.data, 0.0), (x,), 'relu', lambda g: (g * active,))


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _record(y, (x,), 'tanh', lambda g: (g * (1.0 - y * y),))


def sigmoid(x):
    x = as_tensor(x)
    e = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _record(y, (x,), 'sigmoid', lambda g: (g * y * (1.0 - y),))


_ELEMENTWISE = {
    'add': add,
    'sub': sub,
    'mul': mul,
    'relu': relu,
    'tanh': tanh,
    'sigmoid': sigmoid,
    'scale': scale,
}


def elementwise(op, *args):
    """Dispatches an elementwise operation by name"""
    try:
        func = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f'Unknown elementwise operation [{op}]') from None
    return func(*args)


# Linear algebra and structure

def matmul(a, b):
    """Matrix product; `a` may carry leading batch axes, `b` is a matrix"""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f'Cannot multiply shapes {a.shape} and {b.shape}')
    k, n = b.shape

    def backward_fn(g):
        grad_a = g @ b.data.T
        grad_b = a.data.reshape(-1, k).T @ g.reshape(-1, n)
        return grad_a, grad_b

    return _record(a.data @ b.data, (a, b), 'matmul', backward_fn)


def softmax(x, mask=None):
    """Softmax over the last axis; masked positions receive exactly 0"""
    x = as_tensor(x)
    if x.ndim < 1 or x.shape[-1] == 0:
        raise DimensionError(f'softmax needs a non-empty last axis, got shape {x.shape}')
    if mask is None:
        keep = np.ones(x.shape, dtype=bool)
    else:
        keep = np.asarray(mask.data if isinstance(mask, Tensor) else mask) != 0
        if keep.shape != x.shape:
            raise DimensionError(f'Mask shape {keep.shape} does not match logits shape {x.shape}')
    if not np.all(keep.any(axis=-1)):
        raise NumericError('softmax row has no unmasked position')
    shift = np.where(keep, x.data, -np.inf).max(axis=-1, keepdims=True)
    e = np.where(keep, np.exp(np.where(keep, x.data - shift, 0.0)), 0.0)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _record(y, (x,), 'softmax', backward_fn)


def concat(parts, axis=-1):
    """Concatenates tensors along an existing axis in argument order"""
    parts = [as_tensor(part) for part in parts]
    if not parts:
        raise DimensionError('concat needs at least one part')
    ndim = parts[0].ndim
    axis = axis % ndim if ndim else 0
    for part in parts:
        others = [extent for i, extent in enumerate(part.shape) if i != axis]
        reference = [extent for i, extent in enumerate(parts[0].shape) if i != axis]
        if part.ndim != ndim or others != reference:
            raise DimensionError(f'Cannot concatenate shapes {[p.shape for p in parts]} along axis {axis}')
    splits = np.cumsum([part.shape[axis] for part in parts])[:-1]
    return _record(np.concatenate([part.data for part in parts], axis=axis), parts, 'concat',
                   lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(parts, axis=0):
    """Stacks equally shaped tensors along a new axis"""
    parts = [as_tensor(part) for part in parts]
    if not parts:
        raise DimensionError('stack needs at least one part')
    if any(part.shape != parts[0].shape for part in parts):
        raise DimensionError(f'Cannot stack shapes {[p.shape for p in parts]}')

    def backward_fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(parts)))

    return _record(np.stack([part.data for part in parts], axis=axis), parts, 'stack', backward_fn)


def reduce(op, x, axis=None):
    """Sum or mean over one axis (or over everything for axis None)"""
    x = as_tensor(x)
    if op not in ('sum', 'mean'):
        raise ValueError(f'Unknown reduction [{op}]')
    if axis is None:
        count = x.size
    else:
        if not -x.ndim <= axis < x.ndim:
            raise DimensionError(f'Invalid axis {axis} for shape {x.shape}')
        axis = axis % x.ndim
        count = x.shape[axis]
    if count == 0:
        raise DimensionError(f'Cannot reduce over an empty axis of shape {x.shape}')
    factor = 1.0 if op == 'sum' else 1.0 / count
    y = x.data.sum(axis=axis) * factor

    def backward_fn(g):
        if axis is None:
            return (np.full(x.shape, float(g) * factor),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape) * factor,)

    return _record(y, (x,), op, backward_fn)


def expand(x, axis, size):
    """Inserts a new axis and repeats the tensor `size` times along it"""
    x = as_tensor(x)
    if not -x.ndim - 1 <= axis <= x.ndim:
        raise DimensionError(f'Invalid axis {axis} for expanding shape {x.shape}')
    axis = axis % (x.ndim + 1)
    y = np.repeat(np.expand_dims(x.data, axis), size, axis=axis)
    return _record(y, (x,), 'expand', lambda g: (g.sum(axis=axis),))


def take(x, index, axis):
    """Selects one index along an axis, removing that axis"""
    x = as_tensor(x)
    if not -x.shape[axis] <= index < x.shape[axis]:
        raise DimensionError(f'Index {index} out of range for axis {axis} of shape {x.shape}')

    def backward_fn(g):
        grad = np.zeros_like(x.data)
        slicer = [slice(None)] * x.ndim
        slicer[axis] = index
        grad[tuple(slicer)] = g
        return (grad,)

    return _record(np.take(x.data, index, axis=axis), (x,), 'take', backward_fn)


def reshape(x, shape):
    x = as_tensor(x)
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f'Cannot reshape {x.shape} to {shape}') from None
    return _record(y, (x,), 'reshape', lambda g: (g.reshape(x.shape),))


# Gradient checking

class KinkMonitor():
    """Context manager recording relu activation patterns of the current thread"""

    def __enter__(self):
        self.patterns = []
        _local.kinks = self.patterns
        return self

    def __exit__(self, *args):
        _local.kinks = None

    def same_pattern(self, other):
        """Checks whether two recordings saw identical relu activations"""
        if len(self.patterns) != len(other.patterns):
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.patterns, other.patterns))


ParamCheck = namedtuple('ParamCheck', ['name', 'max_rel_error', 'worst_index', 'n_checked', 'n_kinks'])


class GradCheckReport():
    """Per-parameter comparison of tape gradients and central differences"""

    def __init__(self, checks, tol, step):
        """Instance initialization"""
        self.checks = checks
        self.tol = tol
        self.step = step

    @property
    def passed(self):
        return not self.failures()

    @property
    def max_rel_error(self):
        return max((check.max_rel_error for check in self.checks.values()), default=0.0)

    def failures(self):
        """Returns the names of all parameters exceeding the tolerance"""
        return [name for name, check in self.checks.items() if check.max_rel_error > self.tol]

    def lines(self):
        """Returns a human readable line per parameter"""
        result = []
        for name, check in self.checks.items():
            status = 'FAIL' if check.max_rel_error > self.tol else 'ok'
            result.append(f'{status:4} {name:28} max_rel_err={check.max_rel_error:.3e} '
                          f'checked={check.n_checked} kinks_skipped={check.n_kinks}')
        return result


def grad_check(f, params, h=1e-5, tol=1e-4, floor=1e-6, max_elements=None, rng=None, grad_transform=None):
    """Compares tape gradients of the scalar function f() with central finite differences

    `params` maps names to leaf tensors that f closes over. Elements whose
    perturbation changes any relu activation pattern are excluded. The relative
    error uses max(|analytic|, |numeric|, floor) as denominator."""
    if isinstance(params, (list, tuple)):
        params = {f'p{i}': param for i, param in enumerate(params)}
    loss = f()
    repeat = f()
    if not np.array_equal(loss.data, repeat.data):
        raise GradCheckError('Function under gradient check is not deterministic')
    backward(loss, leaves=params.values())
    checks = dict()
    for name, param in params.items():
        analytic = param.grad.copy()
        if grad_transform is not None:
            analytic = grad_transform(name, analytic)
        indices = list(np.ndindex(*param.shape))
        if max_elements is not None and len(indices) > max_elements:
            rng = rng if rng is not None else np.random.default_rng(0)
            chosen = rng.choice(len(indices), size=max_elements, replace=False)
            indices = [indices[i] for i in sorted(chosen)]
        worst, worst_index, kinks = 0.0, None, 0
        for index in indices:
            original = param.data[index]
            param.data[index] = original + h
            with KinkMonitor() as plus:
                f_plus = f().item()
            param.data[index] = original - h
            with KinkMonitor() as minus:
                f_minus = f().item()
            param.data[index] = original
            if not plus.same_pattern(minus):
                kinks += 1
                continue
            numeric = (f_plus - f_minus) / (2.0 * h)
            exact = analytic[index]
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), floor)
            if error > worst or worst_index is None:
                worst, worst_index = error, index
        checks[name] = ParamCheck(name, worst, worst_index, len(indices) - kinks, kinks)
        logger.debug(f'Gradient check [{name}] max relative error [{worst:.3e}]')
    return GradCheckReport(checks, tol, h)
