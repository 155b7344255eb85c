"""DMSF feature files and frame-level normalisation.

    "DMSF" | u32 version | u32 num_utts
    per utterance: u32 id length + UTF-8 id | i32 label | u32 channels | u32 frames
                   | channels * frames f64 LE, row-major
    u32 CRC32 of everything before it
"""
import os
import struct
from typing import Dict, List, Optional, Sequence

import numpy as np

from src.core.errors import ConfigError, DimensionError, FormatError
from src.core.models import FeatureSequence
from src.utils.file_utils import FEATURES_MAGIC, BinaryReader, with_crc32, write_bytes_atomic
from src.utils.logging_utils import get_app_logger

logger = get_app_logger()

FEATURES_VERSION = 1
DEFAULT_NORM_WINDOW = 300


def encode_features(sequences: Sequence[FeatureSequence]) -> bytes:
    chunks = [FEATURES_MAGIC, struct.pack("<II", FEATURES_VERSION, len(sequences))]
    for seq in sequences:
        utt_id = seq.utt_id.encode("utf-8")
        chunks.append(struct.pack("<I", len(utt_id)))
        chunks.append(utt_id)
        chunks.append(struct.pack("<iII", seq.label, seq.channels, seq.frames))
        chunks.append(np.ascontiguousarray(seq.features, dtype="<f8").tobytes())
    return with_crc32(b"".join(chunks))


def decode_features(data: bytes, expected_channels: Optional[int] = None) -> List[FeatureSequence]:
    reader = BinaryReader(data, "feature file")
    reader.expect_magic(FEATURES_MAGIC)
    version_offset = reader.offset
    version = reader.u32("version")
    if version != FEATURES_VERSION:
        raise FormatError(f"unsupported feature file version {version}, expected {FEATURES_VERSION}", version_offset)
    count = reader.u32("utterance count")
    sequences = []
    for index in range(count):
        utt_id = reader.text(f"id of utterance {index}")
        label = reader.i32(f"label of {utt_id}")
        channels = reader.u32(f"channels of {utt_id}")
        frames = reader.u32(f"frames of {utt_id}")
        payload_offset = reader.offset
        raw = reader.read(8 * channels * frames, f"payload of {utt_id} ({channels} x {frames})")
        if channels == 0 or frames == 0:
            raise FormatError(f"utterance {utt_id} has an empty {channels} x {frames} matrix", payload_offset)
        if expected_channels is not None and channels != expected_channels:
            raise DimensionError(f"utterance {utt_id} has {channels} channels, expected {expected_channels}")
        features = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(channels, frames)
        if not np.all(np.isfinite(features)):
            raise FormatError(f"utterance {utt_id} contains NaN or Inf", payload_offset)
        sequences.append(FeatureSequence(features=features, label=label, utt_id=utt_id))
    reader.verify_crc32()
    return sequences


def write_features(path: str, sequences: Sequence[FeatureSequence]) -> str:
    write_bytes_atomic(path, encode_features(sequences))
    logger.info(f"Wrote {len(sequences)} utterances to {path}")
    return path


def load_features(path: str, expected_channels: Optional[int] = None) -> List[FeatureSequence]:
    """Read a DMSF file, preserving utterance order"""
    if not os.path.isfile(path):
        raise FileNotFoundError(f"feature file not found: {path}")
    with open(path, "rb") as f:
        data = f.read()
    try:
        sequences = decode_features(data, expected_channels)
    except (FormatError, DimensionError) as e:
        logger.error(f"Error loading features from {path}: {e}")
        raise
    logger.debug(f"Loaded {len(sequences)} utterances from {path}")
    return sequences


def sliding_mean_norm(x: np.ndarray, window: int = DEFAULT_NORM_WINDOW) -> np.ndarray:
    """Subtract, per channel, the mean of a centred window clipped at the sequence edges

    Frame t averages frames [t - (window-1)//2, t + window//2] that exist.
    """
    x = np.asarray(x, dtype=np.float64)
    if window < 1:
        raise ConfigError(f"window must be >= 1 frame, got {window}")
    frames = x.shape[1]
    left, right = (window - 1) // 2, window // 2
    csum = np.concatenate([np.zeros((x.shape[0], 1)), np.cumsum(x, axis=1)], axis=1)
    t = np.arange(frames)
    start = np.maximum(t - left, 0)
    stop = np.minimum(t + right + 1, frames)
    means = (csum[:, stop] - csum[:, start]) / (stop - start)
    return x - means


def label_histogram(sequences: Sequence[FeatureSequence]) -> Dict[int, int]:
    labels, counts = np.unique([seq.label for seq in sequences], return_counts=True)
    return {int(label): int(count) for label, count in zip(labels, counts)}


class FeatureProcessor:
    """Prepares stored utterances for the network"""

    def __init__(self, mean_norm_window: int = DEFAULT_NORM_WINDOW):
        self.mean_norm_window = mean_norm_window

    def prepare(self, features: np.ndarray) -> np.ndarray:
        if self.mean_norm_window <= 0:
            return np.asarray(features, dtype=np.float64)
        return sliding_mean_norm(features, self.mean_norm_window)

    def prepare_all(self, sequences: Sequence[FeatureSequence]) -> List[FeatureSequence]:
        return [
            FeatureSequence(features=self.prepare(seq.features), label=seq.label, utt_id=seq.utt_id)
            for seq in sequences
        ]
