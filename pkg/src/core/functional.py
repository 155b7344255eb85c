"""Differentiable operations built on `Tensor` that need more than one numpy call."""
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import ConfigError, DimensionError, SequenceLengthError
from src.core.tensor import EPS, ArrayLike, Function, Tensor, as_tensor


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    return as_tensor(a) @ as_tensor(b)


_ELEMENTWISE: Dict[str, Callable[..., Tensor]] = {
    "add": lambda a, b: as_tensor(a) + b,
    "sub": lambda a, b: as_tensor(a) - b,
    "mul": lambda a, b: as_tensor(a) * b,
    "div": lambda a, b: as_tensor(a) / b,
    "pow": lambda a, exponent: as_tensor(a) ** exponent,
    "relu": lambda a: as_tensor(a).relu(),
    "sqrt": lambda a: as_tensor(a).sqrt(),
}


def elementwise(name: str, *operands) -> Tensor:
    """Dispatch one of add, sub, mul, div, pow, relu, sqrt by name"""
    try:
        op = _ELEMENTWISE[name]
    except KeyError:
        raise ConfigError(f"unknown elementwise op '{name}', expected one of {sorted(_ELEMENTWISE)}")
    return op(*operands)


Lengths = Optional[Sequence[int]]


def segment_bounds(lengths: Lengths, frames: int) -> List[Tuple[int, int]]:
    """[start, stop) of every utterance packed along time; None means one utterance"""
    if lengths is None:
        return [(0, frames)]
    lengths = [int(n) for n in lengths]
    if not lengths or min(lengths) < 1 or sum(lengths) != frames:
        raise DimensionError(f"segment lengths {lengths} do not partition {frames} frames")
    cuts = np.cumsum([0] + lengths).tolist()
    return list(zip(cuts[:-1], cuts[1:]))


def time_slice(x: Tensor, start: int, stop: int) -> Tensor:
    if start == 0 and stop == x.shape[1]:
        return x
    return x[:, start:stop]


class Conv1d(Function):
    """Cross-correlation over time with symmetric zero padding; output length equals input length

    With several packed segments every segment is padded on its own, so no
    frame of one utterance ever sees another.
    """

    def forward(self, x, w, dilation: int, bounds: Sequence[Tuple[int, int]]):
        if x.ndim != 2 or w.ndim != 3:
            raise DimensionError(f"conv1d expects x [C_in x T] and w [C_out x C_in x K], got {list(x.shape)} and {list(w.shape)}")
        c_in, frames = x.shape
        c_out, w_in, kernel = w.shape
        if w_in != c_in:
            raise DimensionError(f"conv1d channel mismatch: x has {c_in} channels, w expects {w_in}")
        pad = (kernel - 1) * dilation // 2
        blocks = []
        for start, stop in bounds:
            length = stop - start
            padded = np.pad(x[:, start:stop], ((0, 0), (pad, pad)))
            # columns[c, k, t] = padded[c, t + k * dilation]
            blocks.append(np.stack([padded[:, k * dilation:k * dilation + length] for k in range(kernel)], axis=1))
        self.columns = np.concatenate(blocks, axis=2).reshape(c_in * kernel, frames)
        self.w2d = w.reshape(c_out, c_in * kernel)
        self.bounds = bounds
        self.dims = (c_in, frames, c_out, kernel, dilation, pad)
        return self.w2d @ self.columns

    def backward(self, grad):
        c_in, frames, c_out, kernel, dilation, pad = self.dims
        grad_w = (grad @ self.columns.T).reshape(c_out, c_in, kernel)
        grad_columns = (self.w2d.T @ grad).reshape(c_in, kernel, frames)
        grad_x = np.zeros((c_in, frames))
        for start, stop in self.bounds:
            length = stop - start
            grad_padded = np.zeros((c_in, length + 2 * pad))
            for k in range(kernel):
                grad_padded[:, k * dilation:k * dilation + length] += grad_columns[:, k, start:stop]
            grad_x[:, start:stop] = grad_padded[:, pad:pad + length]
        return grad_x, grad_w


def check_conv_shape(frames: int, kernel: int, dilation: int) -> None:
    if kernel % 2 == 0:
        raise ConfigError(f"conv1d kernel size must be odd, got {kernel}")
    if dilation < 1:
        raise ConfigError(f"conv1d dilation must be >= 1, got {dilation}")
    if frames <= (kernel - 1) * dilation:
        raise SequenceLengthError(
            f"sequence of {frames} frames too short for kernel {kernel} at dilation {dilation} "
            f"(needs more than {(kernel - 1) * dilation})"
        )


def conv1d(x: ArrayLike, w: ArrayLike, dilation: int = 1, lengths: Lengths = None) -> Tensor:
    """Convolve [C_in x T], or several utterances packed along time with their `lengths`"""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 3:
        raise DimensionError(f"conv1d expects x [C_in x T] and w [C_out x C_in x K], got {list(x.shape)} and {list(w.shape)}")
    bounds = segment_bounds(lengths, x.shape[1])
    for start, stop in bounds:
        check_conv_shape(stop - start, w.shape[2], dilation)
    return Conv1d.apply(x, w, dilation=dilation, bounds=tuple(bounds))


class Softmax(Function):
    def forward(self, x, axis: int):
        shifted = x - np.max(x, axis=axis, keepdims=True)
        exp = np.exp(shifted)
        self.out = exp / np.sum(exp, axis=axis, keepdims=True)
        self.axis = axis
        return self.out

    def backward(self, grad):
        inner = np.sum(grad * self.out, axis=self.axis, keepdims=True)
        return (self.out * (grad - inner),)


def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for shape {list(x.shape)}")
    return Softmax.apply(x, axis=axis)


class Concat(Function):
    def forward(self, *arrays, axis: int):
        self.sizes = [a.shape[axis] for a in arrays]
        self.axis = axis
        try:
            return np.concatenate(arrays, axis=axis)
        except ValueError:
            raise DimensionError(f"cannot concatenate shapes {[list(a.shape) for a in arrays]} along axis {axis}")

    def backward(self, grad):
        cuts = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, cuts, axis=self.axis))


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    if len(tensors) == 1:
        return as_tensor(tensors[0])
    return Concat.apply(*tensors, axis=axis)


class Stack(Function):
    def forward(self, *arrays, axis: int):
        self.axis = axis
        try:
            return np.stack(arrays, axis=axis)
        except ValueError:
            raise DimensionError(f"cannot stack shapes {[list(a.shape) for a in arrays]}")

    def backward(self, grad):
        return tuple(np.moveaxis(grad, self.axis, 0))


def stack(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    if not tensors:
        raise DimensionError("stack needs at least one tensor")
    return Stack.apply(*tensors, axis=axis)


def split(x: Tensor, parts: int, axis: int = 0) -> Sequence[Tensor]:
    """Split evenly into `parts` pieces along `axis`"""
    size = x.shape[axis]
    if size % parts:
        raise ConfigError(f"cannot split {size} channels into {parts} equal groups")
    width = size // parts
    pieces = []
    for i in range(parts):
        index = [slice(None)] * x.ndim
        index[axis] = slice(i * width, (i + 1) * width)
        pieces.append(x[tuple(index)])
    return pieces


class CrossEntropy(Function):
    """Mean negative log-likelihood of integer labels under softmax(logits) over rows"""

    def forward(self, logits, labels: np.ndarray):
        if logits.ndim != 2 or labels.shape != (logits.shape[0],):
            raise DimensionError(f"cross entropy needs logits [B x N] and B labels, got {list(logits.shape)} and {list(labels.shape)}")
        shifted = logits - np.max(logits, axis=1, keepdims=True)
        log_norm = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
        log_probs = shifted - log_norm
        rows = np.arange(logits.shape[0])
        self.probs = np.exp(log_probs)
        self.rows, self.labels = rows, labels
        return -np.mean(log_probs[rows, labels])

    def backward(self, grad):
        local = self.probs.copy()
        local[self.rows, self.labels] -= 1.0
        return (grad * local / len(self.labels),)


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    num_classes = logits.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DimensionError(f"labels must lie in [0, {num_classes}), got range [{labels.min()}, {labels.max()}]")
    return CrossEntropy.apply(logits, labels=labels)


def l2_normalize(x: Tensor, axis: int) -> Tensor:
    norm = ((x * x).sum(axis=axis, keepdims=True) + EPS).sqrt()
    return x / norm


def relu(x: ArrayLike) -> Tensor:
    return as_tensor(x).relu()


def as_column(vector: Tensor) -> Tensor:
    """[C] -> [C x 1] so a per-channel vector broadcasts over frames"""
    return vector.reshape(vector.shape[0], 1)
