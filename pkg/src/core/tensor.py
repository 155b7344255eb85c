"""Dense float64 tensors with reverse-mode gradient accumulation.

A `Tensor` wraps a numpy array. Every differentiable operation is a
`Function` subclass; `Function.apply` runs the forward kernel, rejects
non-finite results and, when gradients are wanted, links the output to its
inputs. `Tensor.backward` walks the resulting `Graph` in reverse
topological order, rejects non-finite gradients and accumulates them into
leaf tensors.
"""
import threading
from contextlib import contextmanager
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.core.errors import DimensionError, GraphError, NumericError

# Guard for denominators and square roots
EPS = 1e-8

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Build no graph inside the block; per-thread, so concurrent inference is safe"""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


@contextmanager
def kink_monitor() -> Iterator[List[bytes]]:
    """Record which side of every non-smooth point the ops inside the block took

    Two evaluations with equal records went through the same smooth piece of
    the function, so a central difference between them is meaningful.
    """
    previous = getattr(_state, "kinks", None)
    record: List[bytes] = []
    _state.kinks = record
    try:
        yield record
    finally:
        _state.kinks = previous


def record_branch(mask: np.ndarray) -> None:
    record = getattr(_state, "kinks", None)
    if record is not None:
        record.append(np.packbits(np.asarray(mask, dtype=bool).ravel()).tobytes())


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`"""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def broadcast_shape(a: np.ndarray, b: np.ndarray) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"cannot combine shapes {list(a.shape)} and {list(b.shape)}")


def as_tensor(value: ArrayLike) -> "Tensor":
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


class Function:
    """Base class for differentiable operations"""

    def __init__(self, *inputs: "Tensor"):
        self.inputs = inputs

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no forward")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        """Gradients with respect to each input, given the gradient of the output"""
        raise NotImplementedError(f"{type(self).__name__} has no backward")

    @classmethod
    def apply(cls, *inputs: ArrayLike, **kwargs) -> "Tensor":
        tensors = tuple(as_tensor(t) for t in inputs)
        fn = cls(*tensors)
        with np.errstate(all="ignore"):
            out = np.asarray(fn.forward(*(t.data for t in tensors), **kwargs), dtype=np.float64)
        if not np.all(np.isfinite(out)):
            raise NumericError(f"{cls.__name__} produced non-finite values")
        requires_grad = is_grad_enabled() and any(t.requires_grad for t in tensors)
        return Tensor(out, requires_grad=requires_grad, _ctx=fn if requires_grad else None)


class Graph:
    """Nodes reachable from a root through gradient-carrying edges, inputs first"""

    def __init__(self, nodes: List["Tensor"]):
        self.nodes = nodes
        self.index = {id(node): i for i, node in enumerate(nodes)}

    @classmethod
    def from_root(cls, root: "Tensor") -> "Graph":
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
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
                for parent in node._ctx.inputs:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def leaves(self) -> List["Tensor"]:
        return [node for node in self.nodes if node._ctx is None]


class Tensor:
    """Dense n-dimensional float64 array with an optional accumulated gradient"""

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
        _ctx: Optional[Function] = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._ctx = _ctx
        self._backward_done = False

    # ------------------------------------------------------------------ info
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._ctx is None

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item needs a single-element tensor, got shape {list(self.shape)}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={list(self.shape)}{label}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # -------------------------------------------------------------- autodiff
    def backward(self) -> Graph:
        """Accumulate d(self)/d(leaf) into every reachable leaf's `grad`"""
        if self.data.size != 1:
            raise GraphError(f"backward needs a scalar loss, got shape {list(self.shape)}")
        if not self.requires_grad:
            raise GraphError("loss is detached: no input of the graph requires a gradient")
        if self._backward_done:
            raise GraphError("backward already ran on this graph; build a new loss first")

        graph = Graph.from_root(self)
        pending = {id(self): np.ones_like(self.data)}
        for node in reversed(graph.nodes):
            grad = pending.pop(id(node), None)
            if grad is None:
                continue
            if node._ctx is None:
                node.grad = grad.copy() if node.grad is None else node.grad + grad
                continue
            with np.errstate(all="ignore"):
                input_grads = node._ctx.backward(grad)
            if not all(g is None or np.all(np.isfinite(g)) for g in input_grads):
                raise NumericError(f"{type(node._ctx).__name__} backward produced non-finite gradients")
            for parent, parent_grad in zip(node._ctx.inputs, input_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = parent_grad if key not in pending else pending[key] + parent_grad
        self._backward_done = True
        return graph

    # ------------------------------------------------------------- operators
    def __add__(self, other: ArrayLike) -> "Tensor":
        return Add.apply(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return Add.apply(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return Sub.apply(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return Sub.apply(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return Mul.apply(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return Mul.apply(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return Div.apply(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return Div.apply(other, self)

    def __neg__(self) -> "Tensor":
        return Mul.apply(self, -1.0)

    def __pow__(self, exponent: float) -> "Tensor":
        return Pow.apply(self, exponent=float(exponent))

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return MatMul.apply(self, other)

    def __getitem__(self, index) -> "Tensor":
        return GetItem.apply(self, index=index)

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return Mean.apply(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes: int) -> "Tensor":
        return Transpose.apply(self, axes=axes or None)

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def relu(self) -> "Tensor":
        return Relu.apply(self)

    def sqrt(self) -> "Tensor":
        return Sqrt.apply(self)

    def exp(self) -> "Tensor":
        return Exp.apply(self)

    def log(self) -> "Tensor":
        return Log.apply(self)

    def clamp(self, low: float, high: float) -> "Tensor":
        return Clamp.apply(self, low=low, high=high)


# ---------------------------------------------------------------------------
# Elementary operations
# ---------------------------------------------------------------------------

class Add(Function):
    def forward(self, a, b):
        broadcast_shape(a, b)
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, a, b):
        broadcast_shape(a, b)
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        broadcast_shape(a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return unbroadcast(grad * self.b, self.a.shape), unbroadcast(grad * self.a, self.b.shape)


class Div(Function):
    """a / b with |b| clamped to at least EPS (sign kept, zero counts as positive)"""

    def forward(self, a, b):
        broadcast_shape(a, b)
        small = np.abs(b) < EPS
        record_branch(small)
        self.a, self.b_shape, self.small = a, b.shape, small
        self.denom = np.where(small, np.where(b < 0, -EPS, EPS), b)
        return a / self.denom

    def backward(self, grad):
        grad_a = grad / self.denom
        grad_b = np.where(self.small, 0.0, -grad * self.a / self.denom ** 2)
        return unbroadcast(grad_a, self.a.shape), unbroadcast(grad_b, self.b_shape)


class Pow(Function):
    def forward(self, a, exponent: float):
        self.a, self.exponent = a, exponent
        return a ** exponent

    def backward(self, grad):
        return (grad * self.exponent * self.a ** (self.exponent - 1.0),)


class Sqrt(Function):
    def forward(self, a):
        if np.any(a < 0):
            raise NumericError(f"sqrt of negative value (min {a.min():.3e})")
        self.out = np.sqrt(a)
        record_branch(self.out < EPS)
        return self.out

    def backward(self, grad):
        return (grad * 0.5 / np.maximum(self.out, EPS),)


class Relu(Function):
    def forward(self, a):
        self.mask = a > 0
        record_branch(self.mask)
        return a * self.mask

    def backward(self, grad):
        return (grad * self.mask,)


class Exp(Function):
    def forward(self, a):
        self.out = np.exp(a)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Log(Function):
    def forward(self, a):
        self.a = a
        return np.log(a)

    def backward(self, grad):
        return (grad / self.a,)


class Clamp(Function):
    def forward(self, a, low: float, high: float):
        self.inside = (a >= low) & (a <= high)
        record_branch(self.inside)
        return np.clip(a, low, high)

    def backward(self, grad):
        return (grad * self.inside,)


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul shape mismatch: {list(a.shape)} x {list(b.shape)}")
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        return grad @ self.b.T, self.a.T @ grad


class Sum(Function):
    def forward(self, a, axis: Optional[int], keepdims: bool):
        self.shape, self.axis, self.keepdims = a.shape, axis, keepdims
        return np.sum(a, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.shape).copy(),)


class Mean(Function):
    def forward(self, a, axis: Optional[int], keepdims: bool):
        self.shape, self.axis, self.keepdims = a.shape, axis, keepdims
        self.count = a.size if axis is None else a.shape[axis]
        return np.mean(a, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad / self.count, self.shape).copy(),)


class Reshape(Function):
    def forward(self, a, shape: Tuple[int, ...]):
        self.original = a.shape
        try:
            return a.reshape(shape)
        except ValueError:
            raise DimensionError(f"cannot reshape {list(a.shape)} to {list(shape)}")

    def backward(self, grad):
        return (grad.reshape(self.original),)


class Transpose(Function):
    def forward(self, a, axes: Optional[Tuple[int, ...]]):
        self.axes = axes
        return np.transpose(a, axes)

    def backward(self, grad):
        if self.axes is None:
            return (np.transpose(grad),)
        return (np.transpose(grad, np.argsort(self.axes)),)


class GetItem(Function):
    def forward(self, a, index):
        self.shape, self.index = a.shape, index
        return a[index]

    def backward(self, grad):
        full = np.zeros(self.shape)
        np.add.at(full, self.index, grad)
        return (full,)
