"""DMSC checkpoint files.

    "DMSC" | u32 version | u32 length + UTF-8 JSON header | u32 tensor count
    per tensor: u32 name length + UTF-8 name | u32 rank | u32 dims... | f64 LE data
    u32 CRC32 of everything before it

The JSON header carries the model config, the init seed and, for training
checkpoints, the optimizer and schedule state. Tensors are parameters
followed by BN running statistics, in module order.
"""
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.core.errors import FormatError
from src.core.models import ModelConfig, TrainingState
from src.core.network import DmscNetwork
from src.utils.config_utils import build_model
from src.utils.file_utils import CHECKPOINT_MAGIC, BinaryReader, with_crc32, write_bytes_atomic
from src.utils.logging_utils import get_app_logger

logger = get_app_logger()

CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    params: "OrderedDict[str, np.ndarray]"
    seed: int = 0
    state: Optional[TrainingState] = None
    version: int = CHECKPOINT_VERSION

    def to_network(self) -> DmscNetwork:
        network = DmscNetwork.build(self.config, self.seed)
        network.load_state_dict(self.params)
        return network


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    header = {
        "model": checkpoint.config.model_dump(),
        "seed": checkpoint.seed,
        "training": checkpoint.state.model_dump() if checkpoint.state is not None else None,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks = [
        CHECKPOINT_MAGIC,
        struct.pack("<II", checkpoint.version, len(header_bytes)),
        header_bytes,
        struct.pack("<I", len(checkpoint.params)),
    ]
    for name, array in checkpoint.params.items():
        array = np.ascontiguousarray(array, dtype="<f8")
        name_bytes = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape))
        chunks.append(array.tobytes())
    return with_crc32(b"".join(chunks))


def decode_checkpoint(data: bytes) -> Checkpoint:
    reader = BinaryReader(data, "checkpoint")
    reader.expect_magic(CHECKPOINT_MAGIC)
    version_offset = reader.offset
    version = reader.u32("version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}", version_offset)
    header_offset = reader.offset
    try:
        header = json.loads(reader.text("config header"))
        config = build_model(ModelConfig, header["model"], "checkpoint model config")
        state = TrainingState(**header["training"]) if header.get("training") else None
        seed = int(header.get("seed", 0))
    except (ValueError, KeyError, TypeError) as e:
        raise FormatError(f"unreadable checkpoint header: {e}", header_offset) from e

    params: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(reader.u32("tensor count")):
        name = reader.text("tensor name")
        rank = reader.u32(f"rank of {name}")
        shape = reader.unpack(f"{rank}I", f"dims of {name}") if rank else ()
        count = int(np.prod(shape)) if rank else 1
        raw = reader.read(8 * count, f"data of {name}")
        params[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    reader.verify_crc32()
    return Checkpoint(config=config, params=params, seed=seed, state=state, version=version)


def save_checkpoint(network: DmscNetwork, path: str, state: Optional[TrainingState] = None) -> str:
    checkpoint = Checkpoint(config=network.config, params=network.state_dict(), seed=network.seed, state=state)
    payload = encode_checkpoint(checkpoint)
    write_bytes_atomic(path, payload)
    logger.debug(f"Saved checkpoint {path} ({len(payload)} bytes)")
    return path


def read_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        data = f.read()
    try:
        return decode_checkpoint(data)
    except FormatError as e:
        logger.error(f"Error reading checkpoint {path}: {e}")
        raise


def load_checkpoint(path: str) -> DmscNetwork:
    """Network in inference mode with every parameter and BN statistic restored"""
    network = read_checkpoint(path).to_network()
    return network.eval()
