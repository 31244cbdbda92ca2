"""
Tensor - Dense float64 tensors with tape-based reverse-mode differentiation

Every differentiable operation is a ``Function`` subclass. Applying one to
inputs that require gradients records the function instance on the active
``ComputationTape``; ``backward`` replays the tape in exact reverse execution
order and clears it afterwards.
"""

import logging
import threading
from contextlib import contextmanager
from typing import Any, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import NonFiniteError, TapeError

logger = logging.getLogger(__name__)

_grad_mode = threading.local()


def is_grad_enabled() -> bool:
    """Whether operations executed on this thread are recorded"""
    return getattr(_grad_mode, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """
    Suspend tape recording on the current thread

    Used for the key network, inference and finite differences.
    """
    previous = is_grad_enabled()
    _grad_mode.enabled = False
    try:
        yield
    finally:
        _grad_mode.enabled = previous


class ComputationTape:
    """Ordered record of executed operations"""

    def __init__(self):
        self._nodes: List["Function"] = []

    def record(self, node: "Function") -> None:
        self._nodes.append(node)

    def replay(self) -> Iterator["Function"]:
        """Iterate recorded operations in reverse execution order"""
        return reversed(self._nodes)

    def clear(self) -> None:
        for node in self._nodes:
            if node.output is not None:
                node.output._ctx = None
            node.parents = ()
            node.output = None
        self._nodes = []

    def __len__(self) -> int:
        return len(self._nodes)


_default_tape = ComputationTape()


def get_tape() -> ComputationTape:
    """Return the process-wide tape that operations record on"""
    return _default_tape


class Tensor:
    """
    Dense row-major tensor of 64-bit floats

    Args:
        data: Anything ``numpy.array`` accepts
        requires_grad: Whether gradients should be accumulated into ``grad``
        name: Optional label used in diagnostics
        copy: Copy ``data`` (default) or wrap it as-is
    """

    def __init__(self, data: Any, requires_grad: bool = False, name: Optional[str] = None,
                 copy: bool = True):
        if copy or not isinstance(data, np.ndarray) or data.dtype != np.float64:
            data = np.array(data, dtype=np.float64)
        self.data: np.ndarray = data
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._ctx: Optional["Function"] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, copy=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # Operators dispatch to the functional op set
    def __add__(self, other):
        from .ops import add
        return add(self, other)

    def __radd__(self, other):
        from .ops import add
        return add(other, self)

    def __sub__(self, other):
        from .ops import sub
        return sub(self, other)

    def __rsub__(self, other):
        from .ops import sub
        return sub(other, self)

    def __mul__(self, other):
        from .ops import mul, scale
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        from .ops import neg
        return neg(self)

    def __matmul__(self, other):
        from .ops import matmul
        return matmul(self, other)

    def __getitem__(self, index):
        from .ops import index as index_op
        return index_op(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        from .ops import reduce_sum
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        from .ops import reduce_mean
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        from .ops import reshape
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        from .ops import transpose
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(value: Any) -> Tensor:
    """Wrap non-tensor values as constants"""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


class Function:
    """
    Base class of every differentiable operation

    Subclasses implement ``forward`` on raw arrays and ``backward`` returning
    one gradient (or ``None``) per tensor input. Non-tensor arguments are
    passed as keyword arguments and never receive gradients.
    """

    name = "op"

    def __init__(self):
        self.parents: Tuple[Tensor, ...] = ()
        self.output: Optional[Tensor] = None
        self.saved: Tuple[Any, ...] = ()

    def save_for_backward(self, *values: Any) -> None:
        self.saved = values

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Any, **kwargs: Any) -> Tensor:
        fn = cls()
        tensors = tuple(as_tensor(x) for x in inputs)
        data = np.asarray(fn.forward(*[t.data for t in tensors], **kwargs), dtype=np.float64)
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(f"Op '{cls.name}' produced non-finite output of shape {data.shape}")
        requires_grad = is_grad_enabled() and any(t.requires_grad for t in tensors)
        out = Tensor(data, requires_grad=requires_grad, copy=False)
        if requires_grad:
            fn.parents = tensors
            fn.output = out
            out._ctx = fn
            get_tape().record(fn)
        return out


def backward(loss: Tensor, tape: Optional[ComputationTape] = None) -> None:
    """
    Populate ``grad`` on every tensor the scalar ``loss`` depends on

    Args:
        loss: Scalar tensor produced by recorded operations
        tape: Tape to replay (default: the process-wide tape)

    Raises:
        TapeError: If ``loss`` is not scalar or no forward pass was recorded
    """
    tape = tape or get_tape()
    if loss.data.size != 1:
        raise TapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if len(tape) == 0 or loss._ctx is None:
        raise TapeError("backward() called without a new recorded forward pass")

    loss.grad = np.ones_like(loss.data)
    for node in tape.replay():
        out_grad = node.output.grad
        if out_grad is None:
            continue
        grads = node.backward(out_grad)
        for parent, parent_grad in zip(node.parents, grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            parent_grad = np.asarray(parent_grad, dtype=np.float64)
            if parent_grad.shape != parent.shape:
                parent_grad = parent_grad.reshape(parent.shape)
            if parent.grad is None:
                parent.grad = parent_grad.copy()
            else:
                parent.grad = parent.grad + parent_grad
    logger.debug(f"Backward replayed {len(tape)} ops")
    tape.clear()
