"""Tensor type, dynamic autodiff tape and precision control.

Every differentiable op records a :class:`Node` on the calling thread's
active :class:`Tape`. ``backward`` replays that tape in reverse record order
once, then marks it consumed; the next recorded op opens a fresh tape.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Sequence

import numpy as np

from hsirecon.errors import StateError, UsageError

_local = threading.local()
_default_dtype = np.dtype(np.float32)


def get_default_dtype() -> np.dtype:
    return getattr(_local, "dtype", None) or _default_dtype


def set_default_dtype(dtype) -> None:
    """Set the process-wide float precision (float32 or float64)."""
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise UsageError(f"unsupported precision {dtype}")
    _default_dtype = dtype


@contextlib.contextmanager
def precision(dtype):
    """Thread-local precision override, e.g. ``with precision(np.float64):``."""
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise UsageError(f"unsupported precision {dtype}")
    prev = getattr(_local, "dtype", None)
    _local.dtype = dtype
    try:
        yield
    finally:
        _local.dtype = prev


def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


class Node:
    """One executed op: its inputs and backward closure."""

    __slots__ = ("inputs", "backward_fn", "op")

    def __init__(self, inputs, backward_fn, op):
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.op = op


class Tape:
    """Ordered record of ops executed on one thread."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.consumed = False

    def __len__(self):
        return len(self.nodes)


def current_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None or tape.consumed:
        tape = Tape()
        _local.tape = tape
    return tape


def reset_tape() -> None:
    """Drop whatever the current thread has recorded so far."""
    _local.tape = None


class Tensor:
    """A strided n-dimensional array with an optional gradient.

    Storage is a numpy array; views produced by ``permute`` and slicing share
    that storage and differ only in shape, strides and offset.
    """

    __slots__ = ("data", "requires_grad", "grad", "_node", "_tape", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        want = np.dtype(dtype) if dtype is not None else None
        if want is None and (arr.dtype.kind != "f" or arr.dtype != get_default_dtype()):
            want = get_default_dtype()
        if want is not None and arr.dtype != want:
            arr = arr.astype(want)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: Node | None = None
        self._tape: Tape | None = None
        self.name = name

    # construction helpers
    @classmethod
    def zeros(cls, shape, requires_grad=False, dtype=None):
        return cls(np.zeros(shape, dtype=dtype or get_default_dtype()), requires_grad)

    @classmethod
    def ones(cls, shape, requires_grad=False, dtype=None):
        return cls(np.ones(shape, dtype=dtype or get_default_dtype()), requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def strides(self) -> tuple[int, ...]:
        """Per-axis strides in elements (not bytes)."""
        return tuple(s // self.data.itemsize for s in self.data.strides)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from hsirecon.tensor import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from hsirecon.tensor import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from hsirecon.tensor import ops
        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from hsirecon.tensor import ops
        return ops.scale(self, -1.0)

    def permute(self, *axes):
        from hsirecon.tensor import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.permute(self, axes)

    def reshape(self, *shape):
        from hsirecon.tensor import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self):
        from hsirecon.tensor import ops
        return ops.sum(self)


def _not_scalar(t: Tensor):
    raise UsageError(f"item() needs a single-element tensor, got shape {t.shape}")


BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


def make_result(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    """Wrap an op's output and record it on the tape when a gradient is needed."""
    needs = grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs, dtype=data.dtype)
    if needs:
        tape = current_tape()
        out._node = Node(tuple(inputs), backward_fn, op)
        out._tape = tape
        tape.nodes.append(out._node)
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires-grad leaf reachable from ``loss``.

    Leaf gradients accumulate into existing ``grad`` arrays; call
    ``zero_grad`` between steps.
    """
    if loss.ndim != 0:
        raise UsageError(f"backward needs a 0-dimensional loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any tensor that requires grad")
    seed = np.ones((), dtype=loss.dtype)
    if loss._node is None:
        loss.grad = seed if loss.grad is None else loss.grad + seed
        return
    tape = loss._tape
    if tape.consumed:
        raise StateError("backward already ran on this tape; rebuild the graph first")
    pending: dict[int, np.ndarray] = {id(loss._node): seed}
    try:
        start = tape.nodes.index(loss._node)
    except ValueError:
        raise StateError("loss is not on its recorded tape") from None
    for node in reversed(tape.nodes[: start + 1]):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        in_grads = node.backward_fn(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if t._node is None:
                t.grad = np.array(gi, dtype=t.dtype, copy=True) if t.grad is None else t.grad + gi
            else:
                key = id(t._node)
                if key in pending:
                    pending[key] = pending[key] + gi
                else:
                    pending[key] = gi
    tape.consumed = True
    tape.nodes.clear()
    if getattr(_local, "tape", None) is tape:
        _local.tape = None
