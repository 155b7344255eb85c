"""Seeded synthetic dialect corpus.

Each language gets a signature: a Gaussian bump over the channel axis that
sets its mean spectrum and envelope, and an AR(2) resonance with its own
pole angle. An utterance is the language mean plus, scaled by the noise
level, envelope-shaped AR(2) dynamics and white noise. At noise level 0
every utterance of a language is exactly its mean.
"""
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy.signal import lfilter

from src.core.errors import ConfigError
from src.core.models import FeatureSequence, SyntheticCorpusSpec
from src.utils.logging_utils import get_app_logger
from src.utils.rng_utils import rng_for

logger = get_app_logger()

BURN_IN_FRAMES = 50


@dataclass
class LanguageSignature:
    name: str
    mean: np.ndarray
    envelope: np.ndarray
    pole_angle: float
    ar_coefficients: Tuple[float, float]


def pole_angles(spec: SyntheticCorpusSpec) -> List[float]:
    if spec.pole_angles is not None:
        angles = [float(a) for a in spec.pole_angles]
    else:
        angles = [np.pi * (l + 1) / (spec.num_languages + 1) for l in range(spec.num_languages)]
    rounded = np.round(angles, 12)
    if len(set(rounded.tolist())) != len(angles):
        raise ConfigError(f"duplicate language signatures: pole angles {angles} are not distinct")
    return angles


def language_signatures(spec: SyntheticCorpusSpec) -> List[LanguageSignature]:
    channels = np.arange(spec.channels)
    width = max(spec.channels / (2.0 * spec.num_languages), 1.0)
    signatures = []
    for l, (name, angle) in enumerate(zip(spec.language_names(), pole_angles(spec))):
        centre = (l + 0.5) * spec.channels / spec.num_languages
        bump = np.exp(-0.5 * ((channels - centre) / width) ** 2)
        radius = spec.ar_pole_radius
        signatures.append(LanguageSignature(
            name=name,
            mean=spec.signature_scale * bump,
            envelope=0.5 + bump,
            pole_angle=angle,
            ar_coefficients=(2.0 * radius * np.cos(angle), -radius * radius),
        ))
    return signatures


def ar2_process(innovations: np.ndarray, coefficients: Tuple[float, float]) -> np.ndarray:
    """z_t = a1 z_{t-1} + a2 z_{t-2} + e_t along the frame axis of [C x T] innovations"""
    a1, a2 = coefficients
    return lfilter([1.0], [1.0, -a1, -a2], innovations, axis=1)


def synthesize_utterance(signature: LanguageSignature, frames: int, noise_level: float,
                         rng: np.random.Generator) -> np.ndarray:
    channels = signature.mean.shape[0]
    innovations = rng.standard_normal((channels, frames + BURN_IN_FRAMES))
    dynamics = ar2_process(innovations, signature.ar_coefficients)[:, BURN_IN_FRAMES:]
    # unit variance for every pole angle
    dynamics = dynamics / max(float(dynamics.std()), 1e-12)
    white = rng.standard_normal((channels, frames))
    return signature.mean[:, None] + noise_level * (signature.envelope[:, None] * dynamics + white)


def generate_synthetic(spec: SyntheticCorpusSpec) -> Tuple[List[FeatureSequence], List[FeatureSequence]]:
    """Deterministic (train, test) corpus; the last test_fraction of each language is held out"""
    signatures = language_signatures(spec)
    held_out = int(round(spec.test_fraction * spec.utterances_per_language))
    train, test = [], []
    for label, signature in enumerate(signatures):
        rng = rng_for(spec.seed, f"corpus.{signature.name}")
        for i in range(spec.utterances_per_language):
            frames = int(rng.integers(spec.frames_min, spec.frames_max + 1))
            features = synthesize_utterance(signature, frames, spec.noise_level, rng)
            sequence = FeatureSequence(features=features, label=label, utt_id=f"{signature.name}_utt{i:04d}")
            (test if i >= spec.utterances_per_language - held_out else train).append(sequence)
    logger.info(
        f"Generated {len(train)} training and {len(test)} held-out utterances "
        f"for {spec.num_languages} languages (seed {spec.seed})"
    )
    return train, test
