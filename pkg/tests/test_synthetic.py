import numpy as np
import pytest

from src.core.errors import ConfigError
from src.core.models import SyntheticCorpusSpec
from src.core.synthetic import ar2_process, generate_synthetic, language_signatures, pole_angles
from src.services.corpus_service import MANIFEST_FILE, TEST_FILE, TRAIN_FILE, get_corpus_service
from src.utils.config_utils import build_model


def spec(**overrides) -> SyntheticCorpusSpec:
    values = dict(num_languages=6, utterances_per_language=50, frames_min=20, frames_max=40, channels=12, seed=11)
    values.update(overrides)
    return SyntheticCorpusSpec(**values)


def test_counts_and_labels():
    train, test = generate_synthetic(spec())
    assert len(train) + len(test) == 300
    assert len(test) == 6 * 10
    assert sorted({seq.label for seq in train + test}) == [0, 1, 2, 3, 4, 5]
    assert all(20 <= seq.frames <= 40 and seq.channels == 12 for seq in train + test)


def test_held_out_split_is_the_tail_of_each_language():
    train, test = generate_synthetic(spec(test_fraction=0.2))
    assert {seq.utt_id for seq in test if seq.label == 0} == {f"lang00_utt{i:04d}" for i in range(40, 50)}
    assert not {seq.utt_id for seq in train} & {seq.utt_id for seq in test}


def test_same_seed_same_corpus():
    (a, _), (b, _) = generate_synthetic(spec()), generate_synthetic(spec())
    assert all(np.array_equal(x.features, y.features) for x, y in zip(a, b))
    (c, _) = generate_synthetic(spec(seed=12))
    assert not np.array_equal(a[0].features, c[0].features)


def test_noise_free_corpus_is_centroid_separable():
    train, test = generate_synthetic(spec(noise_level=0.0))
    centroids = np.array([
        np.mean([seq.features.mean(axis=1) for seq in train if seq.label == label], axis=0)
        for label in range(6)
    ])
    distances = np.linalg.norm(centroids[:, None] - centroids[None], axis=2)
    assert np.all(distances[~np.eye(6, dtype=bool)] > 0)
    for seq in train + test:
        predicted = np.argmin(np.linalg.norm(centroids - seq.features.mean(axis=1), axis=1))
        assert predicted == seq.label


def test_signatures_are_distinct():
    signatures = language_signatures(spec())
    assert len({s.ar_coefficients for s in signatures}) == 6
    assert len({s.mean.tobytes() for s in signatures}) == 6


def test_duplicate_signatures_rejected():
    with pytest.raises(ConfigError):
        pole_angles(spec(num_languages=3, pole_angles=[0.5, 1.0, 0.5]))


def test_spec_validation_is_config_error():
    with pytest.raises(ConfigError, match="frames_min"):
        build_model(SyntheticCorpusSpec, {"frames_min": "50", "frames_max": "10"}, "corpus spec")
    with pytest.raises(ConfigError, match="unknown keys"):
        build_model(SyntheticCorpusSpec, {"languages": "3"}, "corpus spec")


def test_corpus_service_writes_reproducible_files(tmp_path, small_corpus_spec):
    service = get_corpus_service()
    first = service.generate(small_corpus_spec, str(tmp_path / "a"))
    second = service.generate(small_corpus_spec, str(tmp_path / "b"))
    assert first["files"]["train"]["sha256"] == second["files"]["train"]["sha256"]
    assert first["files"]["test"]["sha256"] == second["files"]["test"]["sha256"]
    assert first["languages"] == ["lang00", "lang01", "lang02"]
    assert first["files"]["train"]["utterances"] == 12
    assert first["files"]["test"]["utterances"] == 3
    for name in (TRAIN_FILE, TEST_FILE, MANIFEST_FILE):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_ar2_impulse_response():
    a1, a2 = 0.5, -0.25
    impulse = np.zeros((2, 5))
    impulse[:, 0] = 1.0
    z = ar2_process(impulse, (a1, a2))
    expected = [1.0, a1, a1 * a1 + a2, a1 * (a1 * a1 + a2) + a2 * a1]
    np.testing.assert_allclose(z[0, :4], expected, atol=1e-12)
    np.testing.assert_array_equal(z[0], z[1])
