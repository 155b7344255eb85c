"""Neural layers of the D-TDNN backbone.

Frame-level tensors are channels-first, [C x T]. A training batch runs as
its utterances packed along time, [C x sum(T)], with their `lengths`: the
pointwise layers and batch norm see every frame of the batch at once while
convolutions keep each utterance separate. Batches of utterance-level
vectors are rows, [B x D].
"""
from collections import OrderedDict
from typing import Dict, List, Tuple

import numpy as np

from src.core.errors import ConfigError, DimensionError
from src.core.functional import Lengths, as_column, check_conv_shape, concat, conv1d
from src.core.tensor import Tensor


def uniform_init(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    """Uniform in +-sqrt(1/fan_in)"""
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Container of named parameters, buffers and child modules"""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._buffers: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self._children: "OrderedDict[str, Module]" = OrderedDict()
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError(f"{type(self).__name__} has no forward")

    def add_parameter(self, name: str, data: np.ndarray) -> Tensor:
        param = Tensor(data, requires_grad=True, name=name)
        self._params[name] = param
        return param

    def add_buffer(self, name: str, data: np.ndarray) -> np.ndarray:
        self._buffers[name] = np.asarray(data, dtype=np.float64)
        return self._buffers[name]

    def add_module(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        named = [(f"{prefix}{name}", param) for name, param in self._params.items()]
        for child_name, child in self._children.items():
            named.extend(child.named_parameters(f"{prefix}{child_name}."))
        return named

    def named_buffers(self, prefix: str = "") -> List[Tuple[str, np.ndarray]]:
        named = [(f"{prefix}{name}", buf) for name, buf in self._buffers.items()]
        for child_name, child in self._children.items():
            named.extend(child.named_buffers(f"{prefix}{child_name}."))
        return named

    def parameters(self) -> List[Tensor]:
        return [param for _, param in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(param.size for param in self.parameters())

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        """Parameters then buffers, by dotted name"""
        state: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, param in self.named_parameters():
            state[name] = param.data
        for name, buf in self.named_buffers():
            state[name] = buf
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        expected = self.state_dict()
        missing = [name for name in expected if name not in state]
        unexpected = [name for name in state if name not in expected]
        if missing or unexpected:
            raise ConfigError(f"state mismatch: missing {missing[:5]}, unexpected {unexpected[:5]}")
        for name, target in expected.items():
            source = np.asarray(state[name], dtype=np.float64)
            if source.shape != target.shape:
                raise DimensionError(f"state '{name}' has shape {list(source.shape)}, model expects {list(target.shape)}")
            target[...] = source

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self._children.items():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)


class Dense(Module):
    """Affine map x -> W^T x + b over the feature axis"""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        self.W = self.add_parameter("W", uniform_init(rng, (in_features, out_features), in_features))
        self.b = self.add_parameter("b", np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        """Rows: [N x in] -> [N x out]"""
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise DimensionError(f"dense expects [N x {self.in_features}], got {list(x.shape)}")
        out = x @ self.W
        return out if self.b is None else out + self.b

    def forward_frames(self, x: Tensor) -> Tensor:
        """Channels-first frames: [in x T] -> [out x T]"""
        if x.ndim != 2 or x.shape[0] != self.in_features:
            raise DimensionError(f"dense expects [{self.in_features} x T], got {list(x.shape)}")
        out = self.W.T @ x
        return out if self.b is None else out + as_column(self.b)


class BatchNorm(Module):
    """Per-channel normalisation; statistics over every axis except `channel_axis`

    Training mode normalises with the statistics of the current input and
    folds them into the running estimates; inference mode uses the running
    estimates only, which makes it a fixed affine map per channel.
    """

    def __init__(self, channels: int, momentum: float = 0.99, epsilon: float = 1e-5):
        super().__init__()
        self.channels, self.momentum, self.epsilon = channels, momentum, epsilon
        self.gamma = self.add_parameter("gamma", np.ones(channels))
        self.beta = self.add_parameter("beta", np.zeros(channels))
        self.running_mean = self.add_buffer("running_mean", np.zeros(channels))
        self.running_var = self.add_buffer("running_var", np.ones(channels))

    def _broadcast(self, vector, channel_axis: int, ndim: int):
        shape = [1] * ndim
        shape[channel_axis] = self.channels
        return vector.reshape(*shape)

    def forward(self, x: Tensor, channel_axis: int = 0) -> Tensor:
        if x.shape[channel_axis] != self.channels:
            raise DimensionError(f"batch norm expects {self.channels} channels on axis {channel_axis}, got {list(x.shape)}")
        reduce_axis = 1 - channel_axis
        if self.training:
            mean = x.mean(axis=reduce_axis, keepdims=True)
            centred = x - mean
            var = (centred * centred).mean(axis=reduce_axis, keepdims=True)
            normalised = centred / (var + self.epsilon).sqrt()
            decay = 1.0 - self.momentum
            self.running_mean *= self.momentum
            self.running_mean += decay * mean.data.reshape(-1)
            self.running_var *= self.momentum
            self.running_var += decay * var.data.reshape(-1)
        else:
            mean = self._broadcast(self.running_mean, channel_axis, x.ndim)
            std = np.sqrt(self._broadcast(self.running_var, channel_axis, x.ndim) + self.epsilon)
            normalised = (x - mean) * (1.0 / std)
        gamma = self._broadcast(self.gamma, channel_axis, x.ndim)
        beta = self._broadcast(self.beta, channel_axis, x.ndim)
        return normalised * gamma + beta


class TdnnConv(Module):
    """Dilated 1-D convolution with bias, no normalisation"""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, dilation: int, rng: np.random.Generator):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ConfigError(f"kernel size must be odd, got {kernel_size}")
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_size, self.dilation = kernel_size, dilation
        fan_in = in_channels * kernel_size
        self.weight = self.add_parameter("weight", uniform_init(rng, (out_channels, in_channels, kernel_size), fan_in))
        self.bias = self.add_parameter("bias", np.zeros(out_channels))

    @property
    def context(self) -> int:
        return (self.kernel_size - 1) // 2 * self.dilation

    @property
    def min_frames(self) -> int:
        return (self.kernel_size - 1) * self.dilation + 1

    def forward(self, x: Tensor, lengths: Lengths = None) -> Tensor:
        return conv1d(x, self.weight, self.dilation, lengths) + as_column(self.bias)


class TdnnLayer(Module):
    """conv -> BN -> ReLU"""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, dilation: int,
                 rng: np.random.Generator, momentum: float = 0.99, epsilon: float = 1e-5):
        super().__init__()
        self.out_channels = out_channels
        self.conv = self.add_module("conv", TdnnConv(in_channels, out_channels, kernel_size, dilation, rng))
        self.bn = self.add_module("bn", BatchNorm(out_channels, momentum, epsilon))

    @property
    def context(self) -> int:
        return self.conv.context

    @property
    def min_frames(self) -> int:
        return self.conv.min_frames

    def forward(self, x: Tensor, lengths: Lengths = None) -> Tensor:
        return self.bn(self.conv(x, lengths)).relu()


class DtdnnLayer(Module):
    """Densely connected TDNN layer

    BN -> ReLU -> bottleneck dense [C -> B] -> BN -> ReLU -> kernel [B -> G],
    output is [input; G new channels]. `kernel` is any module mapping
    [B x T] to [G x T]: a plain TdnnConv, a DkConv or a multi-scale conv.
    """

    def __init__(self, in_channels: int, bottleneck: int, kernel: Module, growth: int,
                 rng: np.random.Generator, momentum: float = 0.99, epsilon: float = 1e-5):
        super().__init__()
        self.in_channels, self.bottleneck_width, self.growth = in_channels, bottleneck, growth
        self.bn_in = self.add_module("bn_in", BatchNorm(in_channels, momentum, epsilon))
        self.bottleneck = self.add_module("bottleneck", Dense(in_channels, bottleneck, rng))
        self.bn_mid = self.add_module("bn_mid", BatchNorm(bottleneck, momentum, epsilon))
        self.kernel = self.add_module("kernel", kernel)

    @property
    def out_channels(self) -> int:
        return self.in_channels + self.growth

    @property
    def min_frames(self) -> int:
        return getattr(self.kernel, "min_frames", 1)

    def new_channels(self, x: Tensor, lengths: Lengths = None) -> Tensor:
        if x.ndim != 2 or x.shape[0] != self.in_channels:
            raise ConfigError(f"D-TDNN layer configured for {self.in_channels} input channels, got {list(x.shape)}")
        hidden = self.bottleneck.forward_frames(self.bn_in(x).relu())
        return self.kernel(self.bn_mid(hidden).relu(), lengths)

    def forward(self, x: Tensor, lengths: Lengths = None) -> Tensor:
        return concat([x, self.new_channels(x, lengths)], axis=0)


class TransitLayer(Module):
    """BN -> ReLU -> dense [C -> C_out]; its output is the block's bottleneck feature"""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 momentum: float = 0.99, epsilon: float = 1e-5):
        super().__init__()
        self.out_channels = out_channels
        self.bn = self.add_module("bn", BatchNorm(in_channels, momentum, epsilon))
        self.dense = self.add_module("dense", Dense(in_channels, out_channels, rng))

    def forward(self, x: Tensor) -> Tensor:
        return self.dense.forward_frames(self.bn(x).relu())


def tdnn_forward(x: Tensor, layer: TdnnLayer) -> Tensor:
    check_conv_shape(x.shape[1], layer.conv.kernel_size, layer.conv.dilation)
    return layer(x)


def dtdnn_forward(x: Tensor, layer: DtdnnLayer) -> Tensor:
    return layer(x)
