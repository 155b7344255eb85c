"""Full dialect-identification network assembled from a ModelConfig.

    features [D x T]
      -> TDNN layer
      -> dense block 1 -> transit1 -> dense block 2 -> transit2 ...
      -> statistics pooling (last transit, or concatenated taps for global-local-ms)
      -> dense embedding -> BN over the batch -> classifier head

A batch runs packed along time, so frame-level batch norm in training mode
normalises with the statistics of every frame in the batch.
"""
from collections import OrderedDict
from typing import Dict, List, Sequence, Tuple

import numpy as np

from src.core.dynamic import DkConv, MultiScaleDkBlock, global_multiscale_pool, statistics_pool
from src.core.errors import ConfigError, DimensionError, SequenceLengthError
from src.core.functional import Lengths, concat, segment_bounds, stack, time_slice
from src.core.layers import BatchNorm, Dense, DtdnnLayer, Module, TdnnConv, TdnnLayer, TransitLayer
from src.core.losses import ClassifierHead
from src.core.models import ModelConfig, ParamReport, ParamRow
from src.core.tensor import Tensor, as_tensor
from src.utils.logging_utils import get_app_logger
from src.utils.rng_utils import rng_for

logger = get_app_logger()


class DenseBlock(Module):
    def __init__(self, layers: Sequence[DtdnnLayer]):
        super().__init__()
        self.layers = [self.add_module(f"layer{i + 1}", layer) for i, layer in enumerate(layers)]

    @property
    def out_channels(self) -> int:
        return self.layers[-1].out_channels

    def forward(self, x: Tensor, lengths: Lengths = None) -> Tensor:
        for layer in self.layers:
            x = layer(x, lengths)
        return x


class DmscNetwork(Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config, self.seed = config, seed
        rng = rng_for(seed, "model.init")
        momentum, epsilon = config.bn_momentum, config.bn_epsilon

        self.tdnn = self.add_module("tdnn", TdnnLayer(
            config.input_dim, config.init_channels, config.kernel_size,
            config.dilation_for(config.first_context, "first_context"), rng, momentum, epsilon,
        ))
        channels = config.init_channels
        layer_index = 0
        self.blocks: List[DenseBlock] = []
        self.transits: List[TransitLayer] = []
        for block_number, size in enumerate(config.block_sizes, start=1):
            layers = []
            for _ in range(size):
                layers.append(self._dtdnn_layer(channels, layer_index, rng))
                channels += config.filters
                layer_index += 1
            self.blocks.append(self.add_module(f"block{block_number}", DenseBlock(layers)))
            transit = TransitLayer(channels, channels // 2, rng, momentum, epsilon)
            self.transits.append(self.add_module(f"transit{block_number}", transit))
            channels //= 2

        if config.uses_global_pool:
            self.taps = [int(tap[len("transit"):]) - 1 for tap in config.global_taps]
            pooled_channels = sum(self.transits[i].out_channels for i in self.taps)
        else:
            self.taps = [len(self.transits) - 1]
            pooled_channels = channels
        self.pooled_dim = 2 * pooled_channels
        self.embedding = self.add_module("embedding", Dense(self.pooled_dim, config.embedding_dim, rng))
        self.embedding_bn = self.add_module("embedding_bn", BatchNorm(config.embedding_dim, momentum, epsilon))
        self.head = self.add_module("head", ClassifierHead(
            config.embedding_dim, config.num_classes, rng, config.head_loss, config.aam_margin, config.aam_scale,
        ))
        logger.debug(f"Built {config.variant} network with {self.num_parameters()} parameters (seed {seed})")

    @classmethod
    def build(cls, config: ModelConfig, seed: int = 0) -> "DmscNetwork":
        return cls(config, seed)

    def _dtdnn_layer(self, channels: int, index: int, rng: np.random.Generator) -> DtdnnLayer:
        config = self.config
        momentum, epsilon = config.bn_momentum, config.bn_epsilon
        if config.uses_multiscale:
            return MultiScaleDkBlock(channels, config.filters, config.scale_groups, config.kernel_size,
                                     rng, config.reduction, momentum, epsilon)
        if config.uses_dkconv:
            kernel = DkConv(config.bottleneck, config.filters, config.kernel_size, rng, config.reduction)
        else:
            wide = index >= config.total_layers - config.wide_tail_layers
            half_width = config.wide_context if wide else config.narrow_context
            dilation = config.dilation_for(half_width)
            kernel = TdnnConv(config.bottleneck, config.filters, config.kernel_size, dilation, rng)
        return DtdnnLayer(channels, config.bottleneck, kernel, config.filters, rng, momentum, epsilon)

    # ------------------------------------------------------------------ shape
    @property
    def min_frames(self) -> int:
        """Shortest input every convolution of the network accepts"""
        needed = self.tdnn.min_frames
        for block in self.blocks:
            needed = max([needed] + [layer.min_frames for layer in block.layers])
        return needed

    def check_input(self, features) -> Tensor:
        x = as_tensor(features)
        if x.ndim != 2 or x.shape[0] != self.config.input_dim:
            raise DimensionError(f"model expects [{self.config.input_dim} x T] features, got {list(x.shape)}")
        if x.shape[1] < self.min_frames:
            raise SequenceLengthError(f"{x.shape[1]} frames is shorter than the model minimum of {self.min_frames}")
        return x

    # ---------------------------------------------------------------- forward
    def pack(self, batch: Sequence) -> Tuple[Tensor, List[int]]:
        """Check every utterance [D x T] and join them along time -> ([D x sum(T)], lengths)"""
        if not len(batch):
            raise DimensionError("cannot embed an empty batch")
        utterances = [self.check_input(features) for features in batch]
        return concat(utterances, axis=1), [utterance.shape[1] for utterance in utterances]

    def frame_features(self, features, lengths: Lengths = None) -> Dict[str, Tensor]:
        """Frame-level outputs of the TDNN layer and every transit layer

        `features` is one utterance [D x T], or a packed batch with its `lengths`.
        """
        h = self.tdnn(self.check_input(features), lengths)
        outputs: "OrderedDict[str, Tensor]" = OrderedDict(tdnn=h)
        for number, (block, transit) in enumerate(zip(self.blocks, self.transits), start=1):
            h = transit(block(h, lengths))
            outputs[f"transit{number}"] = h
        return outputs

    def pool_batch(self, batch: Sequence) -> Tensor:
        """Utterances (each [D x T], lengths may differ) -> pooled statistics [B x pooled_dim]

        The batch runs packed, so in training mode every frame-level batch norm
        takes its statistics over all frames of all utterances.
        """
        packed, lengths = self.pack(batch)
        frames = self.frame_features(packed, lengths)
        taps = [frames[f"transit{i + 1}"] for i in self.taps]
        pooled = []
        for start, stop in segment_bounds(lengths, packed.shape[1]):
            local = [time_slice(tap, start, stop) for tap in taps]
            pooled.append(global_multiscale_pool(local) if self.config.uses_global_pool else statistics_pool(local[0]))
        return stack(pooled, axis=0)

    def embed(self, batch: Sequence) -> Tensor:
        """Utterances (each [D x T], lengths may differ) -> embeddings [B x E]"""
        return self.embedding_bn(self.embedding(self.pool_batch(batch)), channel_axis=1)

    def logits(self, batch: Sequence) -> Tensor:
        return self.head(self.embed(batch))

    def loss(self, batch: Sequence, labels: Sequence[int]) -> Tensor:
        return self.head(self.embed(batch), labels)

    def forward(self, batch: Sequence) -> Tensor:
        return self.logits(batch)

    # ----------------------------------------------------------- accounting
    def count_params(self) -> ParamReport:
        return count_params(self)


def _stage_rows(network: DmscNetwork) -> List[ParamRow]:
    rows = [ParamRow(name="tdnn", count=network.tdnn.num_parameters())]
    for number, (block, transit) in enumerate(zip(network.blocks, network.transits), start=1):
        for index, layer in enumerate(block.layers, start=1):
            rows.append(ParamRow(name=f"block{number}.layer{index}", count=layer.num_parameters()))
        rows.append(ParamRow(name=f"transit{number}", count=transit.num_parameters()))
    for name in ("embedding", "embedding_bn", "head"):
        rows.append(ParamRow(name=name, count=getattr(network, name).num_parameters()))
    return rows


def count_params(network: DmscNetwork) -> ParamReport:
    """Scalar parameter count per stage; BN running statistics are buffers and not counted"""
    rows = _stage_rows(network)
    total = sum(row.count for row in rows)
    if total != network.num_parameters():
        raise ConfigError(f"per-stage rows account for {total} of {network.num_parameters()} parameters")
    return ParamReport(variant=network.config.variant, total=total, rows=rows)


def build(config: ModelConfig, seed: int = 0) -> DmscNetwork:
    return DmscNetwork.build(config, seed)
