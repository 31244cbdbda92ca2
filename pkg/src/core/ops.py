"""
Ops - Differentiable operations on Tensors

Each operation is a ``Function`` with an analytic adjoint; the lower-case
functions at the bottom are the public entry points.
"""

from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import LabelError, ShapeError
from .tensor import Function, Tensor

LAYER_NORM_EPS = 1e-5
_GELU_C = float(np.sqrt(2.0 / np.pi))


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting"""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(name: str, a: np.ndarray, b: np.ndarray) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: cannot broadcast shapes {a.shape} and {b.shape}") from None


class Add(Function):
    name = "add"

    def forward(self, x, y):
        _broadcast_shape(self.name, x, y)
        self.save_for_backward(x.shape, y.shape)
        return x + y

    def backward(self, grad):
        shape_x, shape_y = self.saved
        return unbroadcast(grad, shape_x), unbroadcast(grad, shape_y)


class Sub(Function):
    name = "sub"

    def forward(self, x, y):
        _broadcast_shape(self.name, x, y)
        self.save_for_backward(x.shape, y.shape)
        return x - y

    def backward(self, grad):
        shape_x, shape_y = self.saved
        return unbroadcast(grad, shape_x), unbroadcast(-grad, shape_y)


class Mul(Function):
    name = "mul"

    def forward(self, x, y):
        _broadcast_shape(self.name, x, y)
        self.save_for_backward(x, y)
        return x * y

    def backward(self, grad):
        x, y = self.saved
        return unbroadcast(grad * y, x.shape), unbroadcast(grad * x, y.shape)


class Neg(Function):
    name = "neg"

    def forward(self, x):
        return -x

    def backward(self, grad):
        return (-grad,)


class Scale(Function):
    name = "scale"

    def forward(self, x, factor: float = 1.0):
        self.save_for_backward(factor)
        return x * factor

    def backward(self, grad):
        factor, = self.saved
        return (grad * factor,)


class MatMul(Function):
    name = "matmul"

    def forward(self, x, y):
        if x.ndim < 2 or y.ndim < 2:
            raise ShapeError(f"matmul: operands must be at least 2-D, got {x.shape} and {y.shape}")
        if x.shape[-1] != y.shape[-2]:
            raise ShapeError(f"matmul: inner dimensions differ for shapes {x.shape} and {y.shape}")
        try:
            np.broadcast_shapes(x.shape[:-2], y.shape[:-2])
        except ValueError:
            raise ShapeError(f"matmul: batch dimensions differ for shapes {x.shape} and {y.shape}") from None
        self.save_for_backward(x, y)
        return np.matmul(x, y)

    def backward(self, grad):
        x, y = self.saved
        grad_x = np.matmul(grad, np.swapaxes(y, -1, -2))
        grad_y = np.matmul(np.swapaxes(x, -1, -2), grad)
        return unbroadcast(grad_x, x.shape), unbroadcast(grad_y, y.shape)


class Transpose(Function):
    name = "transpose"

    def forward(self, x, axes=None):
        if axes is None:
            axes = tuple(reversed(range(x.ndim)))
        if sorted(axes) != list(range(x.ndim)):
            raise ShapeError(f"transpose: axes {axes} do not permute shape {x.shape}")
        self.save_for_backward(tuple(axes))
        return np.transpose(x, axes)

    def backward(self, grad):
        axes, = self.saved
        return (np.transpose(grad, np.argsort(axes)),)


class Reshape(Function):
    name = "reshape"

    def forward(self, x, shape=()):
        try:
            out = np.reshape(x, shape)
        except ValueError:
            raise ShapeError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from None
        self.save_for_backward(x.shape)
        return out

    def backward(self, grad):
        shape, = self.saved
        return (grad.reshape(shape),)


class Index(Function):
    """Basic or fancy indexing; the adjoint scatters with ``np.add.at``"""

    name = "index"

    def forward(self, x, index=None):
        self.save_for_backward(x.shape, index)
        return x[index]

    def backward(self, grad):
        shape, index = self.saved
        out = np.zeros(shape)
        np.add.at(out, index, grad)
        return (out,)


class Concat(Function):
    name = "concat"

    def forward(self, *arrays, axis: int = 0):
        ref = arrays[0]
        axis_n = axis % ref.ndim
        for other in arrays[1:]:
            if other.ndim != ref.ndim or any(
                a != b for i, (a, b) in enumerate(zip(ref.shape, other.shape)) if i != axis_n
            ):
                raise ShapeError(f"concat: shapes {ref.shape} and {other.shape} differ off axis {axis}")
        self.save_for_backward(axis_n, [a.shape[axis_n] for a in arrays])
        return np.concatenate(arrays, axis=axis_n)

    def backward(self, grad):
        axis, sizes = self.saved
        splits = np.cumsum(sizes)[:-1]
        return tuple(np.split(grad, splits, axis=axis))


class Sum(Function):
    name = "sum"

    def forward(self, x, axis=None, keepdims: bool = False):
        self.save_for_backward(x.shape, axis, keepdims)
        return np.sum(x, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        shape, axis, keepdims = self.saved
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, shape).copy(),)


class Mean(Function):
    name = "mean"

    def forward(self, x, axis=None, keepdims: bool = False):
        count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
        self.save_for_backward(x.shape, axis, keepdims, count)
        return np.mean(x, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        shape, axis, keepdims, count = self.saved
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, shape) / count,)


class Softmax(Function):
    """Softmax over the last axis; masked-out entries get probability 0"""

    name = "softmax"

    def forward(self, x, mask=None):
        if mask is not None:
            x = np.where(np.broadcast_to(mask, x.shape), x, -np.inf)
        peak = np.max(x, axis=-1, keepdims=True)
        peak = np.where(np.isfinite(peak), peak, 0.0)
        expd = np.exp(x - peak)
        total = expd.sum(axis=-1, keepdims=True)
        out = np.divide(expd, total, out=np.zeros_like(expd), where=total > 0)
        self.save_for_backward(out)
        return out

    def backward(self, grad):
        out, = self.saved
        return (out * (grad - np.sum(grad * out, axis=-1, keepdims=True)),)


class LayerNorm(Function):
    name = "layer_norm"

    def forward(self, x, gamma, beta, eps: float = LAYER_NORM_EPS):
        if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
            raise ShapeError(
                f"layer_norm: scale {gamma.shape} / shift {beta.shape} do not match input {x.shape}"
            )
        centered = x - x.mean(axis=-1, keepdims=True)
        inv_std = 1.0 / np.sqrt(np.mean(centered * centered, axis=-1, keepdims=True) + eps)
        xhat = centered * inv_std
        self.save_for_backward(xhat, inv_std, gamma)
        return xhat * gamma + beta

    def backward(self, grad):
        xhat, inv_std, gamma = self.saved
        width = xhat.shape[-1]
        dxhat = grad * gamma
        grad_x = (inv_std / width) * (
            width * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * np.sum(dxhat * xhat, axis=-1, keepdims=True)
        )
        grad_gamma = (grad * xhat).reshape(-1, width).sum(axis=0)
        grad_beta = grad.reshape(-1, width).sum(axis=0)
        return grad_x, grad_gamma, grad_beta


class Gelu(Function):
    """Tanh approximation of GELU"""

    name = "gelu"

    def forward(self, x):
        inner = _GELU_C * (x + 0.044715 * x ** 3)
        t = np.tanh(inner)
        self.save_for_backward(x, t)
        return 0.5 * x * (1.0 + t)

    def backward(self, grad):
        x, t = self.saved
        deriv = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (grad * deriv,)


class Relu(Function):
    name = "relu"

    def forward(self, x):
        self.save_for_backward(x > 0)
        return np.maximum(x, 0.0)

    def backward(self, grad):
        positive, = self.saved
        return (grad * positive,)


class Embedding(Function):
    name = "embedding"

    def forward(self, table, ids=None):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
            raise LabelError(
                f"embedding: id {int(ids.max()) if ids.max() >= table.shape[0] else int(ids.min())} "
                f"outside table of {table.shape[0]} rows"
            )
        self.save_for_backward(table.shape, ids)
        return table[ids]

    def backward(self, grad):
        shape, ids = self.saved
        out = np.zeros(shape)
        np.add.at(out, ids, grad)
        return (out,)


class MaskedMax(Function):
    """
    Maximum over ``axis`` restricted to positions where ``mask`` is true

    ``mask`` covers the leading ``axis + 1`` dimensions of the input. Rows
    with no valid position produce 0 and pass no gradient.
    """

    name = "masked_max"

    def forward(self, x, mask=None, axis: int = 1):
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape[:mask.ndim]:
            raise ShapeError(f"masked_max: mask {mask.shape} does not cover input {x.shape}")
        expanded = np.broadcast_to(mask.reshape(mask.shape + (1,) * (x.ndim - mask.ndim)), x.shape)
        filled = np.where(expanded, x, -np.inf)
        arg = np.expand_dims(np.argmax(filled, axis=axis), axis)
        empty = ~np.any(expanded, axis=axis)
        out = np.take_along_axis(filled, arg, axis=axis).squeeze(axis)
        out = np.where(empty, 0.0, out)
        self.save_for_backward(x.shape, arg, empty, axis)
        return out

    def backward(self, grad):
        shape, arg, empty, axis = self.saved
        out = np.zeros(shape)
        np.put_along_axis(out, arg, np.expand_dims(np.where(empty, 0.0, grad), axis), axis=axis)
        return (out,)


class L2Normalize(Function):
    name = "l2_normalize"

    def forward(self, x, axis: int = -1, eps: float = 1e-12):
        norm = np.maximum(np.sqrt(np.sum(x * x, axis=axis, keepdims=True)), eps)
        out = x / norm
        self.save_for_backward(out, norm, axis)
        return out

    def backward(self, grad):
        out, norm, axis = self.saved
        return ((grad - out * np.sum(grad * out, axis=axis, keepdims=True)) / norm,)


class CrossEntropy(Function):
    """
    Softmax cross-entropy of ``logits`` (N, C) against integer ``targets``

    The result is ``sum_i weights[i] * ce_i``; weights default to 1/N so the
    plain call is the batch mean. Uses max-subtraction for stability.
    """

    name = "cross_entropy"

    def forward(self, logits, targets=None, weights=None):
        if logits.ndim != 2:
            raise ShapeError(f"cross_entropy: logits must be 2-D, got {logits.shape}")
        rows, classes = logits.shape
        targets = np.asarray(targets, dtype=np.int64).reshape(-1)
        if targets.shape[0] != rows:
            raise ShapeError(f"cross_entropy: {rows} logit rows but {targets.shape[0]} targets")
        if rows and (targets.min() < 0 or targets.max() >= classes):
            raise LabelError(f"cross_entropy: targets must lie in [0, {classes}), got {targets.tolist()}")
        if weights is None:
            weights = np.full(rows, 1.0 / rows) if rows else np.zeros(0)
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        peak = logits.max(axis=1, keepdims=True) if rows else np.zeros((0, 1))
        shifted = logits - peak
        log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_probs = shifted - log_norm
        per_row = -log_probs[np.arange(rows), targets]
        self.save_for_backward(np.exp(log_probs), targets, weights)
        return np.sum(weights * per_row)

    def backward(self, grad):
        probs, targets, weights = self.saved
        delta = probs.copy()
        delta[np.arange(len(targets)), targets] -= 1.0
        return (delta * weights[:, None] * grad,)


def add(x, y) -> Tensor:
    return Add.apply(x, y)


def sub(x, y) -> Tensor:
    return Sub.apply(x, y)


def mul(x, y) -> Tensor:
    return Mul.apply(x, y)


def neg(x) -> Tensor:
    return Neg.apply(x)


def scale(x, factor: float) -> Tensor:
    return Scale.apply(x, factor=float(factor))


def matmul(x, y) -> Tensor:
    return MatMul.apply(x, y)


def transpose(x, axes: Optional[Sequence[int]] = None) -> Tensor:
    return Transpose.apply(x, axes=None if axes is None else tuple(axes))


def swap_last(x) -> Tensor:
    """Exchange the last two axes"""
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return Transpose.apply(x, axes=tuple(axes))


def reshape(x, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def index(x, idx) -> Tensor:
    return Index.apply(x, index=idx)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    return Mean.apply(x, axis=axis, keepdims=keepdims)


def softmax(x, mask: Optional[np.ndarray] = None) -> Tensor:
    return Softmax.apply(x, mask=mask)


def layer_norm(x, gamma, beta, eps: float = LAYER_NORM_EPS) -> Tensor:
    return LayerNorm.apply(x, gamma, beta, eps=eps)


def gelu(x) -> Tensor:
    return Gelu.apply(x)


def relu(x) -> Tensor:
    return Relu.apply(x)


def embedding(table, ids) -> Tensor:
    return Embedding.apply(table, ids=ids)


def masked_max(x, mask: np.ndarray, axis: int = 1) -> Tensor:
    return MaskedMax.apply(x, mask=mask, axis=axis)


def l2_normalize(x, axis: int = -1) -> Tensor:
    return L2Normalize.apply(x, axis=axis)


def cross_entropy(logits, targets, weights: Optional[np.ndarray] = None) -> Tensor:
    return CrossEntropy.apply(logits, targets=targets, weights=weights)
