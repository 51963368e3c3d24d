"""Tensor engine with reverse-mode automatic differentiation.

Operations executed while a `Tape` is active, on inputs that require gradients,
are recorded in execution order. `backward` replays their adjoints in reverse.
"""
from __future__ import annotations
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Any, Callable, Iterator, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import ArrayLike, NDArray

from msdial.exceptions import DomainError, GraphError, ShapeError

DTYPE = np.float64

Array = NDArray[np.float64]
Adjoint = Callable[[Array], Tuple[Optional[Array], ...]]

_ACTIVE_TAPE: ContextVar[Optional["Tape"]] = ContextVar("msdial_tape", default=None)

ELEMENTWISE_KINDS = ("add", "sub", "mul", "relu", "log", "exp", "neg")
_BINARY_KINDS = frozenset(("add", "sub", "mul"))


class TapeEntry:
    """Executed differentiable operation."""

    __slots__ = ["kind", "inputs", "output", "adjoint"]

    def __init__(
        self,
        kind: str,
        inputs: tuple["Tensor", ...],
        output: "Tensor",
        adjoint: Adjoint,
    ) -> None:
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.adjoint = adjoint


class Tape:
    """Ordered record of executed differentiable operations.

    Use as a context manager; operations run inside the context are recorded.
    """

    __slots__ = ["_entries", "_tokens"]

    def __init__(self) -> None:
        self._entries: list[TapeEntry] = []
        self._tokens: list[Any] = []

    def __enter__(self) -> "Tape":
        self._tokens.append(_ACTIVE_TAPE.set(self))
        return self

    def __exit__(self, *_: Any) -> None:
        _ACTIVE_TAPE.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> tuple[TapeEntry, ...]:
        """Recorded entries, in execution order.

        Returns:
            Entries.
        """
        return tuple(self._entries)

    @staticmethod
    def current() -> "Tape | None":
        """Active tape.

        Returns:
            Tape or None if no tape is active.
        """
        return _ACTIVE_TAPE.get()

    def record(
        self,
        kind: str,
        inputs: tuple["Tensor", ...],
        output: "Tensor",
        adjoint: Adjoint,
    ) -> None:
        """Record an operation.

        Args:
            kind: Operation kind.
            inputs: Operation inputs.
            output: Operation output.
            adjoint: Maps the output gradient to the inputs gradients.
        """
        output.requires_grad = True
        output._tape = self
        output._position = len(self._entries)
        self._entries.append(TapeEntry(kind, inputs, output, adjoint))

    def backward(self, root: "Tensor") -> None:
        """Propagate gradients from a scalar root to every leaf requiring them.

        Args:
            root: Scalar tensor recorded on this tape.
        """
        grads: dict[int, Array] = {id(root): np.ones_like(root.data)}
        for entry in reversed(self._entries[: root._position + 1]):
            grad = grads.pop(id(entry.output), None)
            if grad is None:
                continue
            for tensor, input_grad in zip(entry.inputs, entry.adjoint(grad)):
                if input_grad is None or not tensor.requires_grad:
                    continue
                if tensor._tape is None:
                    tensor._accumulate(input_grad)
                else:
                    key = id(tensor)
                    previous = grads.get(key)
                    grads[key] = (
                        input_grad if previous is None else previous + input_grad
                    )


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording in the current context."""
    token = _ACTIVE_TAPE.set(None)
    try:
        yield
    finally:
        _ACTIVE_TAPE.reset(token)


class Tensor:
    """Dense 64-bit array with optional gradient participation."""

    __slots__ = ["data", "requires_grad", "grad", "_tape", "_position"]

    __array_priority__ = 1000

    def __init__(self, data: ArrayLike, requires_grad: bool = False) -> None:
        self.data: Array = np.array(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: Array | None = None
        self._tape: Tape | None = None
        self._position = -1

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    @property
    def shape(self) -> tuple[int, ...]:
        """Shape.

        Returns:
            Extents.
        """
        return self.data.shape  # type: ignore

    @property
    def ndim(self) -> int:
        """Number of axes.

        Returns:
            Axes count.
        """
        return self.data.ndim

    @property
    def size(self) -> int:
        """Number of scalars.

        Returns:
            Size.
        """
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        """If True, the tensor was not produced by a recorded operation.

        Returns:
            Boolean.
        """
        return self._tape is None

    def item(self) -> float:
        """Scalar value.

        Returns:
            Value.
        """
        return float(self.data.reshape(()))

    def numpy(self) -> Array:
        """Underlying array.

        Returns:
            Array.
        """
        return self.data

    def detach(self) -> "Tensor":
        """Copy not participating in gradient computation.

        Returns:
            Tensor.
        """
        return Tensor(self.data)

    def zero_grad(self) -> None:
        """Clear the accumulated gradient."""
        self.grad = None

    def _accumulate(self, grad: Array) -> None:
        """Accumulate a gradient.

        Args:
            grad: Gradient with the tensor shape.
        """
        if grad.shape != self.data.shape:
            raise ShapeError("Gradient shape mismatch", grad.shape, self.shape)
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def backward(self) -> None:
        """Backpropagate from this scalar tensor."""
        backward(self)

    def __add__(self, other: "Tensor | float") -> "Tensor":
        return add(self, other)

    def __radd__(self, other: "Tensor | float") -> "Tensor":
        return add(other, self)

    def __sub__(self, other: "Tensor | float") -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: "Tensor | float") -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: "Tensor | float") -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: "Tensor | float") -> "Tensor":
        return mul(other, self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def relu(self) -> "Tensor":
        """ReLU.

        Returns:
            Tensor.
        """
        return relu(self)

    def log(self) -> "Tensor":
        """Natural logarithm.

        Returns:
            Tensor.
        """
        return log(self)

    def exp(self) -> "Tensor":
        """Exponential.

        Returns:
            Tensor.
        """
        return exp(self)

    def sum(self, axis: int | tuple[int, ...] | None = None) -> "Tensor":
        """Sum.

        Args:
            axis: Reduced axes, all if None.

        Returns:
            Tensor.
        """
        return tensor_sum(self, axis)

    def mean(self, axis: int | tuple[int, ...] | None = None) -> "Tensor":
        """Mean.

        Args:
            axis: Reduced axes, all if None.

        Returns:
            Tensor.
        """
        return tensor_mean(self, axis)

    def reshape(self, *shape: int) -> "Tensor":
        """Reshape.

        Args:
            shape: New shape.

        Returns:
            Tensor.
        """
        return reshape(self, shape)


TensorLike = Union[Tensor, ArrayLike]


def as_tensor(value: TensorLike) -> Tensor:
    """Convert to tensor, constants do not require gradients.

    Args:
        value: Tensor or array-like.

    Returns:
        Tensor.
    """
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(
    kind: str, inputs: tuple[Tensor, ...], data: Array, adjoint: Adjoint
) -> Tensor:
    """Wrap an operation result, recording it when needed.

    Args:
        kind: Operation kind.
        inputs: Inputs.
        data: Output data.
        adjoint: Output gradient to inputs gradients.

    Returns:
        Output tensor.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.grad = None
    out._tape = None
    out._position = -1
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(tensor.requires_grad for tensor in inputs):
        tape.record(kind, inputs, out, adjoint)
    return out


def broadcast_shape(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    """Shape resulting of a binary operation.

    Broadcasting is limited to length-1 axes of operands with the same number of
    axes, plus 0-d scalars.

    Args:
        a: First shape.
        b: Second shape.

    Returns:
        Shape.
    """
    if a == b:
        return a
    elif not a:
        return b
    elif not b:
        return a
    elif len(a) != len(b):
        raise ShapeError("Operands can not be broadcast", a, b)
    shape = []
    for a_dim, b_dim in zip(a, b):
        if a_dim == b_dim or b_dim == 1:
            shape.append(a_dim)
        elif a_dim == 1:
            shape.append(b_dim)
        else:
            raise ShapeError("Operands can not be broadcast", a, b)
    return tuple(shape)


def unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a gradient over broadcast axes.

    Args:
        grad: Gradient with the broadcast shape.
        shape: Operand shape.

    Returns:
        Gradient with the operand shape.
    """
    if grad.shape == shape:
        return grad
    elif not shape:
        return np.asarray(grad.sum(), dtype=DTYPE)
    axes = tuple(
        axis
        for axis, (dim, grad_dim) in enumerate(zip(shape, grad.shape))
        if dim == 1 and grad_dim != 1
    )
    return grad.sum(axis=axes, keepdims=True)


def elementwise(kind: str, a: TensorLike, b: TensorLike | None = None) -> Tensor:
    """Elementwise operation.

    Args:
        kind: One of "add", "sub", "mul", "relu", "log", "exp", "neg".
        a: First operand.
        b: Second operand, for binary kinds only.

    Returns:
        Tensor.
    """
    if kind not in ELEMENTWISE_KINDS:
        raise GraphError(f"Unsupported elementwise operation: {kind}")
    elif kind in _BINARY_KINDS:
        if b is None:
            raise GraphError(f"Operation requires two operands: {kind}")
        return _binary(kind, as_tensor(a), as_tensor(b))
    elif b is not None:
        raise GraphError(f"Operation requires one operand: {kind}")
    return _unary(kind, as_tensor(a))


def _binary(kind: str, a: Tensor, b: Tensor) -> Tensor:
    """Binary elementwise operation.

    Args:
        kind: Operation kind.
        a: First operand.
        b: Second operand.

    Returns:
        Tensor.
    """
    broadcast_shape(a.shape, b.shape)
    a_data, b_data = a.data, b.data
    a_shape, b_shape = a.shape, b.shape

    if kind == "add":
        data = a_data + b_data

        def adjoint(grad: Array) -> tuple[Array | None, ...]:
            return unbroadcast(grad, a_shape), unbroadcast(grad, b_shape)

    elif kind == "sub":
        data = a_data - b_data

        def adjoint(grad: Array) -> tuple[Array | None, ...]:
            return unbroadcast(grad, a_shape), unbroadcast(-grad, b_shape)

    else:
        data = a_data * b_data

        def adjoint(grad: Array) -> tuple[Array | None, ...]:
            return (
                unbroadcast(grad * b_data, a_shape),
                unbroadcast(grad * a_data, b_shape),
            )

    return _result(kind, (a, b), data, adjoint)


def _unary(kind: str, a: Tensor) -> Tensor:
    """Unary elementwise operation.

    Args:
        kind: Operation kind.
        a: Operand.

    Returns:
        Tensor.
    """
    a_data = a.data
    if kind == "relu":
        positive = a_data > 0
        data = np.where(positive, a_data, 0.0)

        def adjoint(grad: Array) -> tuple[Array | None, ...]:
            return (grad * positive,)

    elif kind == "log":
        if a_data.size and not np.all(a_data > 0):
            raise DomainError(
                "Logarithm of non-positive value",
                error_detail=f"min={float(np.min(a_data))}",
            )
        data = np.log(a_data)

        def adjoint(grad: Array) -> tuple[Array | None, ...]:
            return (grad / a_data,)

    elif kind == "exp":
        data = np.exp(a_data)

        def adjoint(grad: Array) -> tuple[Array | None, ...]:
            return (grad * data,)

    else:
        data = -a_data

        def adjoint(grad: Array) -> tuple[Array | None, ...]:
            return (-grad,)

    return _result(kind, (a,), data, adjoint)


def add(a: TensorLike, b: TensorLike) -> Tensor:
    """Elementwise sum.

    Args:
        a: First operand.
        b: Second operand.

    Returns:
        Tensor.
    """
    return elementwise("add", a, b)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    """Elementwise difference.

    Args:
        a: First operand.
        b: Second operand.

    Returns:
        Tensor.
    """
    return elementwise("sub", a, b)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    """Elementwise product.

    Args:
        a: First operand.
        b: Second operand.

    Returns:
        Tensor.
    """
    return elementwise("mul", a, b)


def neg(a: TensorLike) -> Tensor:
    """Negation.

    Args:
        a: Operand.

    Returns:
        Tensor.
    """
    return elementwise("neg", a)


def relu(a: TensorLike) -> Tensor:
    """Rectified linear unit.

    Args:
        a: Operand.

    Returns:
        Tensor.
    """
    return elementwise("relu", a)


def log(a: TensorLike) -> Tensor:
    """Natural logarithm.

    Args:
        a: Strictly positive operand.

    Returns:
        Tensor.
    """
    return elementwise("log", a)


def exp(a: TensorLike) -> Tensor:
    """Exponential.

    Args:
        a: Operand.

    Returns:
        Tensor.
    """
    return elementwise("exp", a)


def clamp_min(a: TensorLike, floor: float) -> Tensor:
    """Elementwise maximum with a constant.

    Args:
        a: Operand.
        floor: Lower bound.

    Returns:
        Tensor.
    """
    a = as_tensor(a)
    kept = a.data > floor
    data = np.where(kept, a.data, floor)

    def adjoint(grad: Array) -> tuple[Array | None, ...]:
        return (grad * kept,)

    return _result("clamp_min", (a,), data, adjoint)


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    """Matrix product.

    Args:
        a: Matrix [m x k].
        b: Matrix [k x n].

    Returns:
        Matrix [m x n].
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("Matrix product inner dimensions mismatch", a.shape, b.shape)
    a_data, b_data = a.data, b.data

    def adjoint(grad: Array) -> tuple[Array | None, ...]:
        return grad @ b_data.T, a_data.T @ grad

    return _result("matmul", (a, b), a_data @ b_data, adjoint)


def conv2d(
    x: TensorLike,
    w: TensorLike,
    b: TensorLike,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2D convolution (cross-correlation), computed directly over input windows.

    Args:
        x: Input [N x Cin x H x W].
        w: Kernel [Cout x Cin x kh x kw].
        b: Bias [Cout].
        stride: Stride.
        padding: Zero padding on each spatial border.

    Returns:
        Output [N x Cout x H' x W'].
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError("Convolution input and kernel mismatch", x.shape, w.shape)
    elif b.shape != (w.shape[0],):
        raise ShapeError("Convolution bias mismatch", b.shape, w.shape)
    elif stride < 1 or padding < 0:
        raise ShapeError(f"Invalid stride {stride} or padding {padding}")
    n, _, height, width = x.shape
    c_out, c_in, kh, kw = w.shape
    if kh > height + 2 * padding or kw > width + 2 * padding:
        raise ShapeError("Kernel larger than padded input", w.shape, x.shape)

    padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_h = (height + 2 * padding - kh) // stride + 1
    out_w = (width + 2 * padding - kw) // stride + 1
    windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))[
        :, :, ::stride, ::stride
    ]
    w_data = w.data
    data = np.tensordot(windows, w_data, axes=([1, 4, 5], [1, 2, 3])).transpose(
        0, 3, 1, 2
    ) + b.data.reshape(1, c_out, 1, 1)

    def adjoint(grad: Array) -> tuple[Array | None, ...]:
        grad_b = grad.sum(axis=(0, 2, 3))
        grad_w = np.tensordot(grad, windows, axes=([0, 2, 3], [0, 2, 3]))
        grad_padded = np.zeros_like(padded)
        h_stop = stride * (out_h - 1) + 1
        w_stop = stride * (out_w - 1) + 1
        for i in range(kh):
            for j in range(kw):
                grad_padded[
                    :, :, i : i + h_stop : stride, j : j + w_stop : stride
                ] += np.tensordot(grad, w_data[:, :, i, j], axes=([1], [0])).transpose(
                    0, 3, 1, 2
                )
        grad_x = grad_padded[
            :, :, padding : padding + height, padding : padding + width
        ]
        return grad_x, grad_w, grad_b

    return _result("conv2d", (x, w, b), np.ascontiguousarray(data), adjoint)


def log_softmax(logits: TensorLike) -> Tensor:
    """Row-wise log-softmax, shifted by the row maximum.

    Args:
        logits: Matrix [N x C], C >= 2.

    Returns:
        Log-probabilities [N x C].
    """
    logits = as_tensor(logits)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ShapeError(
            "Log-softmax requires [N x C] logits with C >= 2", logits.shape
        )
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    data = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def adjoint(grad: Array) -> tuple[Array | None, ...]:
        return (grad - np.exp(data) * grad.sum(axis=1, keepdims=True),)

    return _result("log_softmax", (logits,), data, adjoint)


def _axes(axis: int | tuple[int, ...] | None, ndim: int) -> tuple[int, ...]:
    """Normalize reduction axes.

    Args:
        axis: Axis, axes or None for all.
        ndim: Number of axes of the operand.

    Returns:
        Axes.
    """
    if axis is None:
        return tuple(range(ndim))
    elif isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def tensor_sum(a: TensorLike, axis: int | tuple[int, ...] | None = None) -> Tensor:
    """Sum over axes.

    Args:
        a: Operand.
        axis: Reduced axes, all if None.

    Returns:
        Tensor.
    """
    a = as_tensor(a)
    axes = _axes(axis, a.ndim)
    shape = a.shape
    kept = tuple(1 if i in axes else dim for i, dim in enumerate(shape))

    def adjoint(grad: Array) -> tuple[Array | None, ...]:
        return (np.broadcast_to(grad.reshape(kept), shape).copy(),)

    return _result("sum", (a,), np.asarray(a.data.sum(axis=axes), dtype=DTYPE), adjoint)


def tensor_mean(a: TensorLike, axis: int | tuple[int, ...] | None = None) -> Tensor:
    """Mean over axes.

    Args:
        a: Operand.
        axis: Reduced axes, all if None.

    Returns:
        Tensor.
    """
    a = as_tensor(a)
    axes = _axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    if count == 0:
        raise ShapeError("Mean over empty axes", a.shape)
    return mul(tensor_sum(a, axes), 1.0 / count)


def reshape(a: TensorLike, shape: Sequence[int]) -> Tensor:
    """Reshape.

    Args:
        a: Operand.
        shape: New shape, one extent may be -1.

    Returns:
        Tensor.
    """
    a = as_tensor(a)
    original = a.shape
    try:
        data = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError("Can not reshape", original, tuple(shape))

    def adjoint(grad: Array) -> tuple[Array | None, ...]:
        return (grad.reshape(original),)

    return _result("reshape", (a,), data, adjoint)


def slice_rows(a: TensorLike, start: int, stop: int) -> Tensor:
    """Contiguous rows of the leading axis.

    Args:
        a: Operand.
        start: First row.
        stop: Row after the last one.

    Returns:
        Tensor.
    """
    a = as_tensor(a)
    if not 0 <= start <= stop <= a.shape[0]:
        raise ShapeError(f"Invalid row range [{start}, {stop})", a.shape)
    original = a.shape

    def adjoint(grad: Array) -> tuple[Array | None, ...]:
        full = np.zeros(original, dtype=DTYPE)
        full[start:stop] = grad
        return (full,)

    return _result("slice_rows", (a,), a.data[start:stop].copy(), adjoint)


def channel_axes(ndim: int) -> tuple[int, ...]:
    """Axes reduced by per-channel statistics, the channel axis being 1.

    Args:
        ndim: Number of axes, 2 ([N x C]) or 4 ([N x C x H x W]).

    Returns:
        Axes.
    """
    if ndim == 2:
        return (0,)
    elif ndim == 4:
        return (0, 2, 3)
    raise ShapeError(f"Per-channel statistics require 2 or 4 axes, got {ndim}")


class SegmentStatistics:
    """Batch statistics of one normalized segment."""

    __slots__ = ["mean", "var", "count"]

    def __init__(self, mean: Array, var: Array, count: int) -> None:
        self.mean = mean
        self.var = var
        self.count = count

    @property
    def unbiased_var(self) -> Array:
        """Variance with Bessel correction.

        Returns:
            Per-channel variance.
        """
        return self.var * (self.count / (self.count - 1))


def segment_normalize(
    x: TensorLike, bounds: Sequence[tuple[int, int]], eps: float
) -> tuple[Tensor, list[SegmentStatistics]]:
    """Standardize row segments with their own per-channel batch statistics.

    Variance is biased (divided by the element count). Gradients flow through
    the statistics.

    Args:
        x: Input [N x C] or [N x C x H x W].
        bounds: (start, stop) row ranges partitioning the leading axis, in order.
        eps: Variance stabilizer.

    Returns:
        Normalized tensor with unchanged row order, statistics for each segment.
    """
    x = as_tensor(x)
    axes = channel_axes(x.ndim)
    data = np.zeros_like(x.data)
    saved: list[tuple[int, int, Array, Array]] = []
    stats: list[SegmentStatistics] = []
    spatial = int(np.prod(x.shape[2:])) if x.ndim == 4 else 1
    for start, stop in bounds:
        rows = x.data[start:stop]
        mean = rows.mean(axis=axes, keepdims=True)
        centered = rows - mean
        var = (centered * centered).mean(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        normalized = centered * inv_std
        data[start:stop] = normalized
        saved.append((start, stop, normalized, inv_std))
        stats.append(
            SegmentStatistics(
                mean.reshape(-1), var.reshape(-1), (stop - start) * spatial
            )
        )

    def adjoint(grad: Array) -> tuple[Array | None, ...]:
        grad_x = np.zeros_like(grad)
        for start, stop, normalized, inv_std in saved:
            g = grad[start:stop]
            grad_x[start:stop] = inv_std * (
                g
                - g.mean(axis=axes, keepdims=True)
                - normalized * (g * normalized).mean(axis=axes, keepdims=True)
            )
        return (grad_x,)

    return _result("segment_normalize", (x,), data, adjoint), stats


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into every leaf requiring gradients.

    Args:
        root: Scalar produced under an active tape.
    """
    if root.size != 1:
        raise ShapeError("Backward requires a scalar root", root.shape)
    tape = root._tape
    if tape is None:
        raise GraphError("Backward root was not recorded on a tape")
    tape.backward(root)
