"""
Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps an ndarray. Applying a :class:`Function` records
the function as the output's context when gradients are enabled and any
input requires them; :meth:`Tensor.backward` walks the recorded graph in
reverse topological order and accumulates ``.grad`` on every tensor that
requires it.

Every op checks its output for NaN/Inf and raises NumericalError naming
the op and the active layer scope (see :func:`name_scope`).
"""

import threading
from contextlib import contextmanager

import numpy as np

from ..exceptions import NumericalError

_state = threading.local()


def _scopes():
    if not hasattr(_state, 'scopes'):
        _state.scopes = []
    return _state.scopes


def is_grad_enabled():
    return getattr(_state, 'grad_enabled', True)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (per thread)."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


@contextmanager
def name_scope(name):
    """Push a layer name used in non-finite value diagnostics."""
    scopes = _scopes()
    scopes.append(name)
    try:
        yield
    finally:
        scopes.pop()


def current_scope():
    return '/'.join(_scopes()) or '<root>'


def check_finite(data, op_name):
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"non-finite values produced by {op_name} in layer {current_scope()}")


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """
    An ndarray with an optional gradient and a recorded producer.

    Attributes:
        data: The value (float32 during training, float64 in gradient checks)
        grad: Accumulated gradient of the same shape, or None
        requires_grad: Whether backward should produce ``grad`` for this tensor
    """

    __slots__ = ('data', 'grad', 'requires_grad', '_ctx', 'name')

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        array = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float64)
        self.data = array
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._ctx = None
        self.name = name

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """
        Accumulate gradients of this tensor into every upstream leaf.

        Only leaves (tensors not produced by a recorded op) keep ``grad``.

        Args:
            grad: Seed gradient; defaults to ones (use for scalar losses)
        """
        if not self.requires_grad:
            raise NumericalError("backward() called on a tensor that does not require grad")
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._ctx is not None:
                for parent in node._ctx.parents:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))

        seed = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=self.dtype)
        pending = {id(self): seed}
        for node in reversed(order):
            node_grad = pending.pop(id(node), None)
            if node_grad is None:
                continue
            if node._ctx is None:
                node.grad = node_grad if node.grad is None else node.grad + node_grad
                continue
            parent_grads = node._ctx.backward(node_grad)
            for parent, parent_grad in zip(node._ctx.parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = parent_grad if key not in pending else pending[key] + parent_grad

    # operator sugar; the implementations live in functional
    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    def __radd__(self, other):
        from . import functional as F
        return F.add(other, self)

    def __sub__(self, other):
        from . import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, other)

    def __rmul__(self, other):
        from . import functional as F
        return F.mul(other, self)

    def __truediv__(self, other):
        from . import functional as F
        return F.div(self, other)

    def __neg__(self):
        from . import functional as F
        return F.neg(self)

    def __matmul__(self, other):
        from . import functional as F
        return F.matmul(self, other)

    def __getitem__(self, index):
        from . import functional as F
        return F.getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        from . import functional as F
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import functional as F
        return F.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def transpose(self, *axes):
        from . import functional as F
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return F.transpose(self, axes)


def as_tensor(value, dtype=None):
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


class Function:
    """
    One differentiable op.

    Subclasses implement ``forward(*arrays, **options) -> ndarray`` and
    ``backward(grad) -> tuple`` with one gradient (or None) per input,
    saving whatever they need on ``self`` during forward.
    """

    def __init__(self, *parents):
        self.parents = parents

    @classmethod
    def apply(cls, *inputs, **options):
        tensors = tuple(as_tensor(value) for value in inputs)
        ctx = cls(*tensors)
        data = ctx.forward(*(tensor.data for tensor in tensors), **options)
        check_finite(data, cls.__name__)
        requires_grad = is_grad_enabled() and any(tensor.requires_grad for tensor in tensors)
        out = Tensor(data, requires_grad=requires_grad)
        if requires_grad:
            out._ctx = ctx
        return out

    def forward(self, *arrays, **options):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError
