from typing import Callable, List, Sequence, Tuple

import numpy as np
import pytest

from src.core.gradcheck import GradcheckResult, check_gradients
from src.core.models import FeatureSequence, SyntheticCorpusSpec
from src.core.tensor import Tensor
from src.services.model_service import tiny_config


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny():
    """Factory for few-channel model configs"""
    return tiny_config


@pytest.fixture
def assert_gradients() -> Callable[..., List[GradcheckResult]]:
    """Run a finite-difference check and fail with the offending parameter names"""

    def run(loss_fn: Callable[[], Tensor], params: Sequence[Tuple[str, Tensor]], **kwargs) -> List[GradcheckResult]:
        results = check_gradients(loss_fn, params, **kwargs)
        failed = [(r.name, r.max_rel_err) for r in results if not r.passed]
        assert not failed, f"gradient mismatch: {failed}"
        return results

    return run


def make_sequences(num_languages: int, per_language: int, channels: int, frames: int,
                   rng: np.random.Generator, offset: float = 2.0, noise: float = 0.1) -> List[FeatureSequence]:
    """Class l has mean `offset` on channel l % channels, small white noise elsewhere"""
    sequences = []
    for label in range(num_languages):
        for i in range(per_language):
            features = noise * rng.standard_normal((channels, frames))
            features[label % channels] += offset
            sequences.append(FeatureSequence(features=features, label=label, utt_id=f"lang{label:02d}_utt{i:04d}"))
    return sequences


@pytest.fixture
def separable_dataset(rng) -> List[FeatureSequence]:
    return make_sequences(num_languages=2, per_language=6, channels=4, frames=40, rng=rng)


@pytest.fixture
def small_corpus_spec() -> SyntheticCorpusSpec:
    return SyntheticCorpusSpec(
        num_languages=3,
        utterances_per_language=5,
        frames_min=20,
        frames_max=30,
        channels=4,
        noise_level=0.3,
        test_fraction=0.2,
        seed=7,
    )
