#!/usr/bin/env python3
"""
Dense tensors with reverse-mode differentiation.

A `Tensor` wraps a float64 `numpy.ndarray`. Operations (see `ops.py`) are
recorded onto the active `Tape` whenever one of their inputs requires a
gradient. `Tape.backward` then walks the record in reverse and accumulates
vector-Jacobian products into `Tensor.grad`.

    >>> x = Tensor(3.0, requires_grad=True)
    >>> with Tape() as tape:
    ...     y = x * x
    ...     tape.backward(y)
    >>> float(x.grad)
    6.0
"""
import threading
from collections import namedtuple
from contextlib import contextmanager

import numpy as np

from ..lib.errors import ContractError

DTYPE = np.float64

Node = namedtuple("Node", "name inputs output forward vjp")

_state = threading.local()


def _tape_stack():
    if not hasattr(_state, "tapes"):
        _state.tapes = []
        _state.paused = 0
    return _state.tapes


def active_tape():
    """The innermost tape currently recording, or None."""
    tapes = _tape_stack()
    if not tapes or _state.paused:
        return None
    return tapes[-1]


@contextmanager
def no_grad():
    """Suspend recording on every tape of this thread."""
    _tape_stack()
    _state.paused += 1
    try:
        yield
    finally:
        _state.paused -= 1


class Tensor:
    """Dense n-dimensional float64 array with an optional gradient."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.name = name

    @classmethod
    def _result(cls, data, requires_grad):
        """Construct an operation output without allocating a gradient."""
        t = cls.__new__(cls)
        t.data = data if data.dtype == DTYPE else data.astype(DTYPE)
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.item())

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad = self.grad + g

    def __repr__(self):
        return "Tensor(shape={}, requires_grad={})".format(
            self.shape, self.requires_grad
        )

    def __len__(self):
        return self.shape[0]

    # Operator sugar; the implementations live in ops.py.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __pow__(self, exponent):
        from . import ops
        return ops.power(self, exponent)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        return ops.transpose(self, axes or None)

    @property
    def T(self):
        return self.transpose()

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x):
    """Wrap constants; tensors pass through untouched."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def apply(name, forward, vjp, *inputs):
    """Run forward on the inputs' data and record the step if needed.

    ``vjp(g)`` must return one gradient (or None) per input, each already
    shaped like the corresponding input.
    """
    out_data = np.asarray(forward(*(t.data for t in inputs)), dtype=DTYPE)
    tape = active_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._result(out_data, needs_grad)
    if needs_grad:
        tape.record(Node(name, inputs, out, forward, vjp))
    return out


class Tape:
    """Ordered record of executed operations for one training step.

    Operations are appended as they run, so every node's inputs were
    produced before it: the record is already topologically sorted.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        tapes = _tape_stack()
        assert tapes and tapes[-1] is self, "tape stack corrupted"
        tapes.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, node):
        self.nodes.append(node)

    def reset(self):
        self.nodes = []

    def replay(self):
        """Recompute every recorded forward from the recorded inputs."""
        return [
            np.asarray(n.forward(*(t.data for t in n.inputs)), dtype=DTYPE)
            for n in self.nodes
        ]

    def backward(self, loss):
        """Populate .grad of every tensor that led to loss.

        The tape is consumed: it is reset once gradients are accumulated.
        """
        if not isinstance(loss, Tensor) or loss.size != 1:
            raise ContractError(
                "backward needs a scalar loss, got shape {}".format(
                    getattr(loss, "shape", None)
                )
            )
        if not loss.requires_grad:
            raise ContractError("loss is not reachable from the tape")
        loss.accumulate_grad(np.ones_like(loss.data))
        for node in reversed(self.nodes):
            g = node.output.grad
            if g is None:
                continue
            grads = node.vjp(g)
            for t, tg in zip(node.inputs, grads):
                if tg is None or not t.requires_grad:
                    continue
                t.accumulate_grad(tg)
        self.reset()


def backward(loss, tape=None):
    """Backpropagate loss through the given (or innermost) tape."""
    if tape is None:
        tapes = _tape_stack()
        tape = tapes[-1] if tapes else None
    if tape is None:
        raise ContractError("no tape is recording; wrap the forward in Tape()")
    tape.backward(loss)
