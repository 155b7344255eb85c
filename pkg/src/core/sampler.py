"""Training batch sampler: one random segment for each of a random set of languages."""
from collections import defaultdict
from typing import Dict, List, Sequence, Tuple

import numpy as np

from src.core.errors import SamplingError
from src.core.models import BatchSpec, FeatureSequence
from src.utils.logging_utils import get_app_logger

logger = get_app_logger()

Batch = List[Tuple[np.ndarray, int]]


def group_by_language(dataset: Sequence[FeatureSequence], num_languages: int = 0) -> Dict[int, List[FeatureSequence]]:
    groups: Dict[int, List[FeatureSequence]] = defaultdict(list)
    for seq in dataset:
        groups[seq.label].append(seq)
    empty = [label for label in range(num_languages) if not groups.get(label)]
    if empty:
        raise SamplingError(f"no utterances for language(s) {empty}")
    if not groups:
        raise SamplingError("dataset is empty")
    return dict(groups)


def loop_pad(features: np.ndarray, frames: int) -> np.ndarray:
    """Repeat an utterance along time until it has at least `frames` frames"""
    repeats = -(-frames // features.shape[1])
    return np.tile(features, (1, repeats))


def sample_segment(features: np.ndarray, frames: int, rng: np.random.Generator, utt_id: str = "") -> np.ndarray:
    if features.shape[1] < frames:
        logger.warning(f"Utterance {utt_id or '<unnamed>'} has {features.shape[1]} frames, loop-padding to {frames}")
        features = loop_pad(features, frames)
    start = int(rng.integers(0, features.shape[1] - frames + 1))
    return features[:, start:start + frames]


def sample_batch(dataset: Sequence[FeatureSequence], spec: BatchSpec, rng: np.random.Generator,
                 num_languages: int = 0) -> Batch:
    """min(languages_per_batch, L) distinct languages, one segment each

    Segment lengths are drawn independently and uniformly from
    [segment_len_min_frames, segment_len_max_frames]. `num_languages`
    makes languages without utterances an error instead of silently absent.
    """
    groups = dataset if isinstance(dataset, dict) else group_by_language(dataset, num_languages)
    labels = sorted(groups)
    chosen = rng.choice(len(labels), size=min(spec.languages_per_batch, len(labels)), replace=False)
    batch: Batch = []
    for index in sorted(int(i) for i in chosen):
        label = labels[index]
        utterances = groups[label]
        if not utterances:
            raise SamplingError(f"no utterances for language {label}")
        utterance = utterances[int(rng.integers(len(utterances)))]
        frames = int(rng.integers(spec.segment_len_min_frames, spec.segment_len_max_frames + 1))
        batch.append((sample_segment(utterance.features, frames, rng, utterance.utt_id), label))
    return batch
