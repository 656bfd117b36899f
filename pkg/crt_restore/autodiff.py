"""Minimal dense tensor engine with reverse-mode automatic differentiation.

Only the op set needed by the restoration model, its losses and the training
loop is provided. Arrays live in numpy; every differentiable op is a
``Function`` subclass with ``forward`` on raw arrays and ``backward`` returning
one gradient per operand. When any operand requires grad and recording is
enabled, ``Function.apply`` attaches a ``Node`` to the output. ``Graph.trace``
orders the nodes reachable from a root by creation sequence, and backward
visits them in exact reverse of that order.
"""

from __future__ import annotations

from collections.abc import Iterator, Sequence
import contextlib
import contextvars
from dataclasses import dataclass
import itertools
import logging
from typing import Any, ClassVar

import numpy as np
import numpy.typing as npt

from .const import LAYER_NORM_EPS, LOG_CLAMP_MIN
from .exceptions import ShapeError

Array = npt.NDArray[Any]
Index = Any

_LOGGER = logging.getLogger(__name__)

_GRAD_ENABLED: contextvars.ContextVar[bool] = contextvars.ContextVar(
    "crt_grad_enabled", default=True
)
_DEFAULT_DTYPE: contextvars.ContextVar[type[np.floating[Any]]] = contextvars.ContextVar(
    "crt_default_dtype", default=np.float32
)
_SEQUENCE = itertools.count()

_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


@contextlib.contextmanager
def precision(dtype: type[np.floating[Any]]) -> Iterator[None]:
    """Set the default floating dtype for tensors created inside the block.

    Training runs in float32; gradient checks switch to float64.
    """
    token = _DEFAULT_DTYPE.set(dtype)
    try:
        yield
    finally:
        _DEFAULT_DTYPE.reset(token)


def default_dtype() -> type[np.floating[Any]]:
    """Return the active default dtype."""
    return _DEFAULT_DTYPE.get()


def grad_enabled() -> bool:
    """Return whether ops currently record graph nodes."""
    return _GRAD_ENABLED.get()


def unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum out broadcast dimensions so grad matches shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Array, b: Array) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as err:
        raise ShapeError(op, a.shape, b.shape) from err


def _normalize_axes(axis: int | Sequence[int] | None, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(sorted(a % ndim for a in axes))


@dataclass(slots=True)
class Node:
    """One recorded operation: op-kind, operands and saved backward context.

    ``seq`` doubles as the id of the output tensor.
    """

    seq: int
    fn: Function
    inputs: tuple[Tensor, ...]

    @property
    def op(self) -> str:
        """Return the op-kind of the recorded function."""
        return self.fn.name


class Tensor:
    """Dense n-dimensional array with an optional gradient buffer."""

    __slots__ = ("_node", "data", "grad", "name", "requires_grad")

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        *,
        dtype: Any = None,
        name: str | None = None,
    ) -> None:
        """Initialize a leaf tensor.

        Float arrays keep their dtype unless one is given; everything else
        is converted to the active default dtype.
        """
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
                dtype = data.dtype
            else:
                dtype = _DEFAULT_DTYPE.get()
        self.data: Array = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: Array | None = None
        self.name = name
        self._node: Node | None = None

    @classmethod
    def _from_op(cls, data: Array) -> Tensor:
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = False
        out.grad = None
        out.name = None
        out._node = None
        return out

    def __repr__(self) -> str:
        """Return a short description."""
        label = f" name={self.name!r}" if self.name else ""
        return (
            f"Tensor(shape={self.shape}, dtype={self.dtype},"
            f" requires_grad={self.requires_grad}{label})"
        )

    @property
    def shape(self) -> tuple[int, ...]:
        """Return the shape."""
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        """Return the rank."""
        return int(self.data.ndim)

    @property
    def size(self) -> int:
        """Return the number of elements."""
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype[Any]:
        """Return the element dtype."""
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        """Return True when the tensor was not produced by a recorded op."""
        return self._node is None

    def item(self) -> float:
        """Return the value of a single-element tensor."""
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> Array:
        """Return the underlying array."""
        return self.data

    def detach(self) -> Tensor:
        """Return a leaf sharing data but cut from the graph."""
        return Tensor._from_op(self.data)

    def zero_grad(self) -> None:
        """Drop the gradient buffer."""
        self.grad = None

    def constant(self, value: Any) -> Tensor:
        """Return a non-differentiable tensor in this tensor's dtype."""
        return Tensor(np.asarray(value, dtype=self.data.dtype))

    def _accumulate(self, grad: Array) -> None:
        if grad.shape != self.data.shape:
            raise ShapeError("accumulate", self.data.shape, grad.shape)
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad = self.grad + grad

    def backward(self, grad: Array | None = None) -> None:
        """Run reverse-mode differentiation from this scalar root.

        Leaf gradients accumulate across calls; call zero_grad to reset.
        """
        if self.size != 1 or self.ndim > 1:
            raise ShapeError("backward", self.shape, detail="root must be scalar")
        seed = np.ones_like(self.data) if grad is None else np.asarray(grad, self.dtype)
        if self._node is None:
            if self.requires_grad:
                self._accumulate(seed)
            return
        Graph.trace(self).backward(self, seed)

    # Arithmetic

    def _coerce(self, other: Any) -> Tensor:
        return other if isinstance(other, Tensor) else self.constant(other)

    def __add__(self, other: Any) -> Tensor:
        return Add.apply(self, self._coerce(other))

    def __radd__(self, other: Any) -> Tensor:
        return Add.apply(self._coerce(other), self)

    def __sub__(self, other: Any) -> Tensor:
        return Sub.apply(self, self._coerce(other))

    def __rsub__(self, other: Any) -> Tensor:
        return Sub.apply(self._coerce(other), self)

    def __mul__(self, other: Any) -> Tensor:
        if isinstance(other, (int, float)):
            return ScalarMul.apply(self, scalar=float(other))
        return Mul.apply(self, self._coerce(other))

    def __rmul__(self, other: Any) -> Tensor:
        return self.__mul__(other)

    def __truediv__(self, other: Any) -> Tensor:
        if isinstance(other, (int, float)):
            return ScalarMul.apply(self, scalar=1.0 / float(other))
        return Div.apply(self, self._coerce(other))

    def __rtruediv__(self, other: Any) -> Tensor:
        return Div.apply(self._coerce(other), self)

    def __neg__(self) -> Tensor:
        return Neg.apply(self)

    def __matmul__(self, other: Tensor) -> Tensor:
        return MatMul.apply(self, other)

    def __getitem__(self, index: Index) -> Tensor:
        return Slice.apply(self, index=index)

    # Shape ops

    def reshape(self, *shape: int) -> Tensor:
        """Return a reshaped view."""
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=tuple(shape))

    def permute(self, *axes: int) -> Tensor:
        """Return the tensor with axes reordered."""
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Permute.apply(self, axes=tuple(axes))

    def transpose(self, axis0: int = -2, axis1: int = -1) -> Tensor:
        """Swap two axes (the last two by default)."""
        axes = list(range(self.ndim))
        axes[axis0], axes[axis1] = axes[axis1], axes[axis0]
        return Permute.apply(self, axes=tuple(axes))

    # Reductions and elementwise functions

    def sum(self, axis: int | Sequence[int] | None = None, keepdims: bool = False) -> Tensor:
        """Sum over the given axes."""
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | Sequence[int] | None = None, keepdims: bool = False) -> Tensor:
        """Average over the given axes."""
        return Mean.apply(self, axis=axis, keepdims=keepdims)

    def softmax(self) -> Tensor:
        """Softmax over the last axis."""
        return Softmax.apply(self)

    def exp(self) -> Tensor:
        """Elementwise exponential."""
        return Exp.apply(self)

    def log(self) -> Tensor:
        """Elementwise natural log with the input clamped to 1e-12."""
        return Log.apply(self)

    def sigmoid(self) -> Tensor:
        """Elementwise logistic function."""
        return Sigmoid.apply(self)

    def gelu(self) -> Tensor:
        """Elementwise GELU (tanh approximation)."""
        return Gelu.apply(self)

    def abs(self) -> Tensor:
        """Elementwise absolute value."""
        return Abs.apply(self)

    def masked_fill(self, mask: Array, value: float) -> Tensor:
        """Replace entries where mask is True by value."""
        return MaskedFill.apply(self, mask=mask, value=value)


@dataclass(slots=True)
class Graph:
    """Operation records reachable from a root, in creation order."""

    nodes: list[Node]

    @classmethod
    def trace(cls, root: Tensor) -> Graph:
        """Collect every node the root depends on, topologically ordered."""
        seen: set[int] = set()
        nodes: list[Node] = []
        stack = [root]
        while stack:
            tensor = stack.pop()
            node = tensor._node
            if node is None or node.seq in seen:
                continue
            seen.add(node.seq)
            nodes.append(node)
            stack.extend(node.inputs)
        nodes.sort(key=lambda n: n.seq)
        return cls(nodes)

    def backward(self, root: Tensor, seed: Array) -> None:
        """Propagate seed from root through the nodes in reverse order."""
        if root._node is None:
            raise ValueError("root is not part of a recorded graph")
        pending: dict[int, Array] = {root._node.seq: seed}
        for node in reversed(self.nodes):
            grad = pending.pop(node.seq, None)
            if grad is None:
                continue
            input_grads = node.fn.backward(grad)
            for tensor, input_grad in zip(node.inputs, input_grads, strict=True):
                if input_grad is None or not tensor.requires_grad:
                    continue
                if tensor._node is None:
                    tensor._accumulate(input_grad)
                    continue
                key = tensor._node.seq
                pending[key] = pending[key] + input_grad if key in pending else input_grad

    def op_kinds(self) -> list[str]:
        """Return the op-kind of every node in recorded order."""
        return [node.op for node in self.nodes]


class Function:
    """Base class for differentiable operations."""

    name: ClassVar[str] = "function"

    def forward(self, *arrays: Array, **attrs: Any) -> Array:
        """Compute the output array."""
        raise NotImplementedError

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        """Return the gradient for each operand given the output gradient."""
        raise NotImplementedError

    @classmethod
    def apply(cls, *tensors: Tensor, **attrs: Any) -> Tensor:
        """Run forward and record a node when any operand requires grad."""
        fn = cls()
        out = Tensor._from_op(np.asarray(fn.forward(*(t.data for t in tensors), **attrs)))
        if _GRAD_ENABLED.get() and any(t.requires_grad for t in tensors):
            out.requires_grad = True
            out._node = Node(next(_SEQUENCE), fn, tensors)
        return out


class Add(Function):
    """Elementwise sum with broadcasting."""

    name = "add"

    def forward(self, a: Array, b: Array) -> Array:
        self.shapes = (a.shape, b.shape)
        _broadcast_shape(self.name, a, b)
        return a + b

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        return unbroadcast(grad, self.shapes[0]), unbroadcast(grad, self.shapes[1])


class Sub(Function):
    """Elementwise difference with broadcasting."""

    name = "sub"

    def forward(self, a: Array, b: Array) -> Array:
        self.shapes = (a.shape, b.shape)
        _broadcast_shape(self.name, a, b)
        return a - b

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        return unbroadcast(grad, self.shapes[0]), unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    """Elementwise product with broadcasting."""

    name = "mul"

    def forward(self, a: Array, b: Array) -> Array:
        _broadcast_shape(self.name, a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        return (
            unbroadcast(grad * self.b, self.a.shape),
            unbroadcast(grad * self.a, self.b.shape),
        )


class Div(Function):
    """Elementwise quotient with broadcasting."""

    name = "div"

    def forward(self, a: Array, b: Array) -> Array:
        _broadcast_shape(self.name, a, b)
        self.a, self.b = a, b
        return a / b

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        return (
            unbroadcast(grad / self.b, self.a.shape),
            unbroadcast(-grad * self.a / (self.b * self.b), self.b.shape),
        )


class ScalarMul(Function):
    """Multiplication by a Python scalar."""

    name = "scalar-multiply"

    def forward(self, a: Array, scalar: float) -> Array:
        self.scalar = scalar
        return a * a.dtype.type(scalar)

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        return (grad * grad.dtype.type(self.scalar),)


class Neg(Function):
    """Elementwise negation."""

    name = "neg"

    def forward(self, a: Array) -> Array:
        return -a

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        return (-grad,)


class MatMul(Function):
    """Batched matrix product over the last two axes."""

    name = "matmul"

    def forward(self, a: Array, b: Array) -> Array:
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError(self.name, a.shape, b.shape)
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError as err:
            raise ShapeError(self.name, a.shape, b.shape, detail="batch axes") from err
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        grad_a = np.matmul(grad, np.swapaxes(self.b, -1, -2))
        grad_b = np.matmul(np.swapaxes(self.a, -1, -2), grad)
        return unbroadcast(grad_a, self.a.shape), unbroadcast(grad_b, self.b.shape)


class Permute(Function):
    """Axis permutation (transpose)."""

    name = "permute"

    def forward(self, a: Array, axes: tuple[int, ...]) -> Array:
        axes = tuple(ax % max(a.ndim, 1) for ax in axes)
        if sorted(axes) != list(range(a.ndim)):
            raise ShapeError(self.name, a.shape, axes, detail="invalid axes")
        self.axes = axes
        return np.transpose(a, axes)

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        return (np.transpose(grad, np.argsort(self.axes)),)


class Reshape(Function):
    """Reshape preserving element order."""

    name = "reshape"

    def forward(self, a: Array, shape: tuple[int, ...]) -> Array:
        self.shape = a.shape
        try:
            return a.reshape(shape)
        except ValueError as err:
            raise ShapeError(self.name, a.shape, tuple(shape)) from err

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        return (grad.reshape(self.shape),)


class Concat(Function):
    """Concatenation along an axis."""

    name = "concat"

    def forward(self, *arrays: Array, axis: int = 0) -> Array:
        self.axis = axis
        self.sizes = [a.shape[axis] for a in arrays]
        try:
            return np.concatenate(arrays, axis=axis)
        except ValueError as err:
            raise ShapeError(self.name, *(a.shape for a in arrays)) from err

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        cuts = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, cuts, axis=self.axis))


class Slice(Function):
    """Basic (non-fancy) indexing."""

    name = "slice"

    def forward(self, a: Array, index: Index) -> Array:
        parts = index if isinstance(index, tuple) else (index,)
        if any(not isinstance(p, (int, slice, type(Ellipsis))) for p in parts):
            raise ShapeError(self.name, a.shape, detail="only ints and slices")
        self.shape, self.dtype, self.index = a.shape, a.dtype, index
        return a[index]

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        full = np.zeros(self.shape, dtype=self.dtype)
        full[self.index] = grad
        return (full,)


class Sum(Function):
    """Sum reduction."""

    name = "sum"

    def forward(self, a: Array, axis: Any = None, keepdims: bool = False) -> Array:
        self.shape = a.shape
        self.axes = _normalize_axes(axis, a.ndim)
        self.keepdims = keepdims
        return np.sum(a, axis=self.axes, keepdims=keepdims)

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axes)
        return (np.broadcast_to(grad, self.shape).copy(),)


class Mean(Sum):
    """Mean reduction."""

    name = "mean"

    def forward(self, a: Array, axis: Any = None, keepdims: bool = False) -> Array:
        total = super().forward(a, axis=axis, keepdims=keepdims)
        self.count = int(np.prod([a.shape[ax] for ax in self.axes])) if a.ndim else 1
        return total / a.dtype.type(self.count)

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        (spread,) = super().backward(grad)
        assert spread is not None
        return (spread / spread.dtype.type(self.count),)


class Softmax(Function):
    """Softmax over the last axis; the row max is subtracted first."""

    name = "softmax"

    def forward(self, a: Array) -> Array:
        shifted = a - np.max(a, axis=-1, keepdims=True)
        e = np.exp(shifted)
        self.out = e / np.sum(e, axis=-1, keepdims=True)
        return self.out

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        s = self.out
        return (s * (grad - np.sum(grad * s, axis=-1, keepdims=True)),)


class LayerNorm(Function):
    """Normalization over the last axis with learnable scale and shift."""

    name = "layer-norm"

    def forward(
        self, x: Array, scale: Array, shift: Array, eps: float = LAYER_NORM_EPS
    ) -> Array:
        width = x.shape[-1]
        if scale.shape != (width,) or shift.shape != (width,):
            raise ShapeError(self.name, x.shape, scale.shape, shift.shape)
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        self.inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
        self.xhat = centered * self.inv
        self.scale = scale
        return self.xhat * scale + shift

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        xhat, width = self.xhat, self.xhat.shape[-1]
        lead = tuple(range(grad.ndim - 1))
        grad_shift = grad.sum(axis=lead)
        grad_scale = (grad * xhat).sum(axis=lead)
        gx = grad * self.scale
        grad_x = (self.inv / width) * (
            width * gx
            - gx.sum(axis=-1, keepdims=True)
            - xhat * (gx * xhat).sum(axis=-1, keepdims=True)
        )
        return grad_x, grad_scale, grad_shift


class Gelu(Function):
    """GELU, tanh approximation."""

    name = "gelu"

    def forward(self, a: Array) -> Array:
        self.a = a
        self.t = np.tanh(_GELU_C * (a + _GELU_A * a**3))
        return 0.5 * a * (1.0 + self.t)

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        a, t = self.a, self.t
        inner = _GELU_C * (1.0 + 3.0 * _GELU_A * a * a)
        return (grad * (0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * inner),)


class Sigmoid(Function):
    """Logistic function, computed as 0.5 * (1 + tanh(x / 2))."""

    name = "sigmoid"

    def forward(self, a: Array) -> Array:
        self.out = 0.5 * (1.0 + np.tanh(0.5 * a))
        return self.out

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        return (grad * self.out * (1.0 - self.out),)


class Log(Function):
    """Natural log of the input clamped to at least 1e-12."""

    name = "log"

    def forward(self, a: Array) -> Array:
        self.clamped = np.maximum(a, a.dtype.type(LOG_CLAMP_MIN))
        self.active = a >= LOG_CLAMP_MIN
        return np.log(self.clamped)

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        return (np.where(self.active, grad / self.clamped, 0.0).astype(grad.dtype),)


class Exp(Function):
    """Elementwise exponential."""

    name = "exp"

    def forward(self, a: Array) -> Array:
        self.out = np.exp(a)
        return self.out

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        return (grad * self.out,)


class Abs(Function):
    """Elementwise absolute value; subgradient 0 at 0."""

    name = "abs"

    def forward(self, a: Array) -> Array:
        self.sign = np.sign(a)
        return np.abs(a)

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        return (grad * self.sign,)


class MaskedFill(Function):
    """Replace masked entries by a constant; no gradient flows through them."""

    name = "masked-fill"

    def forward(self, a: Array, mask: Array, value: float) -> Array:
        try:
            self.mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
        except ValueError as err:
            raise ShapeError(self.name, a.shape, np.shape(mask)) from err
        return np.where(self.mask, a.dtype.type(value), a)

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        return (np.where(self.mask, 0.0, grad).astype(grad.dtype),)


class Correlate2d(Function):
    """Valid 2D correlation of a channels-last signal with a constant kernel.

    The signal is laid out [..., H, W, C]; each channel is filtered
    independently. Only the signal receives a gradient.
    """

    name = "correlate2d"

    def forward(self, a: Array, kernel: Array) -> Array:
        kernel = np.asarray(kernel, dtype=a.dtype)
        if a.ndim < 3 or kernel.ndim != 2:
            raise ShapeError(self.name, a.shape, kernel.shape)
        kh, kw = kernel.shape
        height, width = a.shape[-3], a.shape[-2]
        if kh > height or kw > width:
            raise ShapeError(self.name, a.shape, kernel.shape, detail="kernel larger than signal")
        self.shape, self.kernel = a.shape, kernel
        out_h, out_w = height - kh + 1, width - kw + 1
        self.out_hw = (out_h, out_w)
        out = np.zeros((*a.shape[:-3], out_h, out_w, a.shape[-1]), dtype=a.dtype)
        for u in range(kh):
            for v in range(kw):
                out += kernel[u, v] * a[..., u : u + out_h, v : v + out_w, :]
        return out

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        kh, kw = self.kernel.shape
        out_h, out_w = self.out_hw
        full = np.zeros(self.shape, dtype=grad.dtype)
        for u in range(kh):
            for v in range(kw):
                full[..., u : u + out_h, v : v + out_w, :] += self.kernel[u, v] * grad
        return (full,)


OPS: dict[str, type[Function]] = {
    fn.name: fn
    for fn in (
        Add,
        Sub,
        Mul,
        Div,
        ScalarMul,
        Neg,
        MatMul,
        Permute,
        Reshape,
        Concat,
        Slice,
        Sum,
        Mean,
        Softmax,
        LayerNorm,
        Gelu,
        Sigmoid,
        Log,
        Exp,
        Abs,
        MaskedFill,
        Correlate2d,
    )
}
OPS["transpose"] = Permute


def apply(op_kind: str, *operands: Tensor, **attrs: Any) -> Tensor:
    """Apply the op registered under op_kind to the operands.

    Raises:
        KeyError: Unknown op-kind
        ShapeError: Operand shapes invalid for the op
    """
    try:
        fn = OPS[op_kind]
    except KeyError:
        raise KeyError(f"unknown op-kind {op_kind!r}") from None
    return fn.apply(*operands, **attrs)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate tensors along axis."""
    return Concat.apply(*tensors, axis=axis)


def layer_norm(x: Tensor, scale: Tensor, shift: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize x over its last axis, then scale and shift."""
    return LayerNorm.apply(x, scale, shift, eps=eps)


def correlate2d(x: Tensor, kernel: Array) -> Tensor:
    """Correlate a channels-last signal with a fixed kernel (valid mode)."""
    return Correlate2d.apply(x, kernel=kernel)


def shift2d(x: Tensor, dy: int, dx: int) -> Tensor:
    """Translate a [..., H, W, C] tensor by (dy, dx) pixels, zero-filling.

    Built from slice and concat so gradients flow to the signal.
    """
    height, width = x.shape[-3], x.shape[-2]
    if abs(dy) >= height or abs(dx) >= width:
        raise ShapeError("shift2d", x.shape, detail=f"shift ({dy}, {dx}) too large")
    out = x
    if dy:
        rows = abs(dy)
        zeros = out.constant(np.zeros((*out.shape[:-3], rows, *out.shape[-2:])))
        if dy > 0:
            out = concat([zeros, out[..., : height - rows, :, :]], axis=-3)
        else:
            out = concat([out[..., rows:, :, :], zeros], axis=-3)
    if dx:
        cols = abs(dx)
        zeros = out.constant(np.zeros((*out.shape[:-2], cols, out.shape[-1])))
        if dx > 0:
            out = concat([zeros, out[..., :, : width - cols, :]], axis=-2)
        else:
            out = concat([out[..., :, cols:, :], zeros], axis=-2)
    return out
