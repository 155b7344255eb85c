"""Dynamic kernel convolution, local multi-scale learning and global multi-scale pooling.

All three work on channels-first frame tensors [C x T]:

- `DkConv` runs two convolutions of different dilation over the same input
  and mixes them per channel with softmax weights computed from high-order
  statistics (mean, std, skewness, kurtosis) of their sum.
- `MultiScaleDkConv` splits the channels into `s` groups and processes them
  as a cascade, each group seeing the previous group's output.
- `global_multiscale_pool` concatenates features tapped at several layers
  and reduces them to mean and standard deviation over time.
"""
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import ConfigError, DimensionError
from src.core.functional import Lengths, as_column, concat, segment_bounds, softmax, split, stack, time_slice
from src.core.layers import DtdnnLayer, Module, TdnnConv, uniform_init
from src.core.tensor import EPS, Tensor, as_tensor

# Dilations of the two DkConv branches
BRANCH_DILATIONS: Tuple[int, int] = (1, 2)

GroupTransform = Callable[[int, Tensor], Tensor]


@dataclass
class HospStats:
    """Per-channel moments over time, each [C]"""
    mu: Tensor
    sigma: Tensor
    skew: Tensor
    kurt: Tensor

    def as_vector(self) -> Tensor:
        """[mu; sigma; skew; kurt] as one [4C] vector"""
        return concat([self.mu, self.sigma, self.skew, self.kurt], axis=0)


def hosp(x: Tensor) -> HospStats:
    """High-order statistics pooling over the time axis

    Population moments; sigma carries EPS inside the square root and the
    kurtosis is reported in excess form, so a constant row gives
    sigma = sqrt(EPS), skew = 0 and kurt = -3.
    """
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] < 1:
        raise DimensionError(f"hosp expects [C x T] with T >= 1, got {list(x.shape)}")
    mu = x.mean(axis=1, keepdims=True)
    centred = x - mu
    sigma = ((centred * centred).mean(axis=1, keepdims=True) + EPS).sqrt()
    z = centred / sigma
    z2 = z * z
    skew = (z2 * z).mean(axis=1)
    kurt = (z2 * z2).mean(axis=1) - 3.0
    channels = x.shape[0]
    return HospStats(mu=mu.reshape(channels), sigma=sigma.reshape(channels), skew=skew, kurt=kurt)


def statistics_pool(h: Tensor) -> Tensor:
    """[C x T] -> [mu; sigma] of length 2C, sigma = sqrt(max(E[h*h] - mu*mu, 0) + EPS)"""
    if h.ndim != 2 or h.shape[1] < 1:
        raise DimensionError(f"statistics pooling expects [C x T] with T >= 1, got {list(h.shape)}")
    mu = h.mean(axis=1)
    variance = (h * h).mean(axis=1) - mu * mu
    sigma = (variance.clamp(0.0, np.inf) + EPS).sqrt()
    return concat([mu, sigma], axis=0)


def global_multiscale_pool(taps: Sequence[Tensor]) -> Tensor:
    """Concatenate tapped features on the channel axis, then mean/std pool"""
    if not taps:
        raise DimensionError("global pooling needs at least one tap")
    lengths = {tap.shape[1] for tap in taps}
    if len(lengths) != 1:
        raise DimensionError(f"taps disagree on the number of frames: {[list(tap.shape) for tap in taps]}")
    return statistics_pool(concat(list(taps), axis=0))


class DkConv(Module):
    """Dynamic kernel convolution [C_in x T] -> [C_out x T]

    Parameters: two independent dilated convolutions (`branch1`, `branch2`),
    a shared reduction `V` [4C x C/r] with bias `b`, and per-branch
    expansions `W1`, `W2` [C/r x C] with biases `n1`, `n2`.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, reduction: int = 4):
        super().__init__()
        if out_channels % reduction:
            raise ConfigError(f"DkConv output channels {out_channels} not divisible by reduction {reduction}")
        self.in_channels, self.out_channels = in_channels, out_channels
        self.reduction = reduction
        hidden = out_channels // reduction
        self.branches = [
            self.add_module(f"branch{i + 1}", TdnnConv(in_channels, out_channels, kernel_size, dilation, rng))
            for i, dilation in enumerate(BRANCH_DILATIONS)
        ]
        self.V = self.add_parameter("V", uniform_init(rng, (4 * out_channels, hidden), 4 * out_channels))
        self.b = self.add_parameter("b", np.zeros(hidden))
        self.W = [
            self.add_parameter(f"W{i + 1}", uniform_init(rng, (hidden, out_channels), hidden))
            for i in range(len(BRANCH_DILATIONS))
        ]
        self.n = [self.add_parameter(f"n{i + 1}", np.zeros(out_channels)) for i in range(len(BRANCH_DILATIONS))]

    @property
    def min_frames(self) -> int:
        return max(branch.min_frames for branch in self.branches)

    def attention(self, summed: Tensor) -> Tensor:
        """Branch weights [2 x C] from the statistics of the branch sum; columns sum to 1"""
        stats = hosp(summed).as_vector().reshape(1, 4 * self.out_channels)
        hidden = stats @ self.V + self.b
        logits = [(hidden @ W + n).reshape(self.out_channels) for W, n in zip(self.W, self.n)]
        return softmax(stack(logits, axis=0), axis=0)

    def forward(self, x: Tensor, lengths: Lengths = None) -> Tensor:
        outputs = [branch(x, lengths) for branch in self.branches]
        summed = outputs[0] + outputs[1]
        pieces = []
        # attention is per utterance even when the batch is packed
        for start, stop in segment_bounds(lengths, x.shape[1]):
            local = [time_slice(out, start, stop) for out in outputs]
            weights = self.attention(time_slice(summed, start, stop))
            mixed = local[0] * as_column(weights[0])
            for i in range(1, len(local)):
                mixed = mixed + local[i] * as_column(weights[i])
            pieces.append(mixed)
        return concat(pieces, axis=1)


def dk_conv_forward(x: Tensor, layer: DkConv) -> Tensor:
    return layer(as_tensor(x))


class MultiScaleDkConv(Module):
    """Hierarchical split of C channels into `scale_groups` groups

    Out_1 = X_1, Out_2 = F_2(X_2), Out_i = F_i(Out_{i-1} + X_i); the output
    is the channel concatenation of all Out_i. Each F_i is a DkConv of
    width C/s unless `group_transform(i, tensor)` overrides it.
    """

    def __init__(self, channels: int, scale_groups: int, kernel_size: int, rng: np.random.Generator,
                 reduction: int = 4, group_transform: Optional[GroupTransform] = None):
        super().__init__()
        if channels % scale_groups:
            raise ConfigError(f"{channels} channels cannot be split into {scale_groups} groups")
        self.channels, self.scale_groups = channels, scale_groups
        self.group_transform = group_transform
        width = channels // scale_groups
        self.groups: List[DkConv] = [
            self.add_module(f"group{i}", DkConv(width, width, kernel_size, rng, reduction))
            for i in range(2, scale_groups + 1)
        ]

    @property
    def min_frames(self) -> int:
        return max((group.min_frames for group in self.groups), default=1)

    def transform(self, index: int, x: Tensor, lengths: Lengths = None) -> Tensor:
        """F_index for index in 2..s"""
        if self.group_transform is not None:
            return self.group_transform(index, x)
        return self.groups[index - 2](x, lengths)

    def forward(self, x: Tensor, lengths: Lengths = None) -> Tensor:
        if x.ndim != 2 or x.shape[0] != self.channels:
            raise ConfigError(f"multi-scale conv configured for {self.channels} channels, got {list(x.shape)}")
        if self.scale_groups == 1:
            return x
        parts = split(x, self.scale_groups, axis=0)
        outputs = [parts[0]]
        previous = None
        for index in range(2, self.scale_groups + 1):
            part = parts[index - 1]
            previous = self.transform(index, part if previous is None else previous + part, lengths)
            outputs.append(previous)
        return concat(outputs, axis=0)


class MultiScaleDkBlock(DtdnnLayer):
    """D-TDNN layer whose bottleneck feeds a multi-scale DkConv

    BN -> ReLU -> dense [C -> G] -> BN -> ReLU -> MultiScaleDkConv(G, s),
    output [input; G new channels].
    """

    def __init__(self, in_channels: int, growth: int, scale_groups: int, kernel_size: int,
                 rng: np.random.Generator, reduction: int = 4, momentum: float = 0.99, epsilon: float = 1e-5):
        if growth % scale_groups:
            raise ConfigError(f"growth {growth} not divisible by scale groups {scale_groups}")
        kernel = MultiScaleDkConv(growth, scale_groups, kernel_size, rng, reduction)
        super().__init__(in_channels, growth, kernel, growth, rng, momentum, epsilon)

    @property
    def multiscale(self) -> MultiScaleDkConv:
        return self.kernel


def multiscale_forward(x: Tensor, block) -> Tensor:
    """Run the multi-scale part of `block` (a MultiScaleDkBlock or a bare MultiScaleDkConv) on x"""
    conv = block.multiscale if isinstance(block, MultiScaleDkBlock) else block
    return conv(as_tensor(x))
