import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from src.core.errors import ConfigError, DimensionError, FormatError
from src.core.feature_processor import (
    FeatureProcessor,
    decode_features,
    encode_features,
    label_histogram,
    load_features,
    sliding_mean_norm,
    write_features,
)
from src.core.models import FeatureSequence

HEADER_BYTES = 12  # magic, version, utterance count


def sequence(features, label=0, utt_id="u"):
    return FeatureSequence(features=features, label=label, utt_id=utt_id)


def naive_norm(x: np.ndarray, window: int) -> np.ndarray:
    out = np.empty_like(x)
    left, right = (window - 1) // 2, window // 2
    for t in range(x.shape[1]):
        lo, hi = max(0, t - left), min(x.shape[1], t + right + 1)
        out[:, t] = x[:, t] - x[:, lo:hi].mean(axis=1)
    return out


# ------------------------------------------------------------ DMSF format
def test_write_read_round_trip(tmp_path, rng):
    sequences = [
        sequence(rng.standard_normal((67, 30)), 3, "lang03_utt0000"),
        sequence(rng.standard_normal((67, 7)), -1, "unlabelled"),
        sequence(rng.standard_normal((67, 1)), 15, "ünïcode"),
    ]
    path = write_features(str(tmp_path / "train.dmsf"), sequences)
    loaded = load_features(path, expected_channels=67)
    assert [s.utt_id for s in loaded] == [s.utt_id for s in sequences]
    assert [s.label for s in loaded] == [3, -1, 15]
    for a, b in zip(sequences, loaded):
        assert np.array_equal(a.features, b.features)
    assert encode_features(loaded) == encode_features(sequences)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
              elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_round_trip_is_bit_exact_for_any_finite_matrix(values):
    (decoded,) = decode_features(encode_features([sequence(values)]))
    assert decoded.features.tobytes() == np.ascontiguousarray(values).tobytes()


def test_empty_file_is_an_empty_list(tmp_path):
    path = write_features(str(tmp_path / "empty.dmsf"), [])
    assert load_features(path) == []


def test_channel_count_larger_than_payload_is_truncation(rng):
    data = bytearray(encode_features([sequence(rng.standard_normal((64, 10)), utt_id="u")]))
    channels_at = HEADER_BYTES + 4 + len("u") + 4
    data[channels_at:channels_at + 4] = struct.pack("<I", 67)
    payload_at = channels_at + 8
    with pytest.raises(FormatError, match="truncated") as excinfo:
        decode_features(bytes(data))
    assert excinfo.value.offset == payload_at == 29


def test_bad_magic(rng):
    data = b"DMSC" + encode_features([sequence(rng.standard_normal((2, 3)))])[4:]
    with pytest.raises(FormatError, match="magic") as excinfo:
        decode_features(data)
    assert excinfo.value.offset == 0


def test_checksum_mismatch(rng):
    data = bytearray(encode_features([sequence(rng.standard_normal((2, 3)))]))
    data[-6] ^= 0x01
    with pytest.raises(FormatError, match="checksum"):
        decode_features(bytes(data))


def test_non_finite_payload_rejected():
    data = bytearray(encode_features([sequence(np.zeros((1, 2)))]))
    payload_at = HEADER_BYTES + 4 + 1 + 12
    data[payload_at:payload_at + 8] = struct.pack("<d", float("nan"))
    with pytest.raises(FormatError, match="NaN") as excinfo:
        decode_features(bytes(data))
    assert excinfo.value.offset == payload_at


def test_expected_channels_mismatch(tmp_path, rng):
    path = write_features(str(tmp_path / "x.dmsf"), [sequence(rng.standard_normal((5, 4)))])
    with pytest.raises(DimensionError):
        load_features(path, expected_channels=67)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_features(str(tmp_path / "absent.dmsf"))


def test_label_histogram(rng):
    sequences = [sequence(np.ones((1, 1)), label) for label in (0, 2, 2, 1, 2)]
    assert label_histogram(sequences) == {0: 1, 1: 1, 2: 3}


def test_feature_sequence_validation():
    with pytest.raises(ValueError):
        sequence(np.ones((0, 3)))
    with pytest.raises(ValueError):
        sequence(np.array([[1.0, np.inf]]))


# ------------------------------------------------- sliding mean normalisation
def test_constant_input_normalises_to_zero():
    np.testing.assert_array_equal(sliding_mean_norm(np.full((2, 40), 3.5), 5), 0.0)


def test_wide_window_is_global_mean_subtraction(rng):
    x = rng.standard_normal((3, 10))
    np.testing.assert_allclose(sliding_mean_norm(x, 19), x - x.mean(axis=1, keepdims=True), atol=1e-12)


@pytest.mark.parametrize("window", [1, 2, 5, 300])
def test_matches_naive_loop(window, rng):
    x = rng.standard_normal((3, 10))
    np.testing.assert_allclose(sliding_mean_norm(x, window), naive_norm(x, window), atol=1e-12)


def test_window_one_subtracts_each_frame(rng):
    np.testing.assert_array_equal(sliding_mean_norm(rng.standard_normal((2, 6)), 1), 0.0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 12)), elements=st.floats(-100, 100)))
def test_idempotent_for_wide_windows(x):
    window = 2 * x.shape[1] - 1
    once = sliding_mean_norm(x, window)
    np.testing.assert_allclose(sliding_mean_norm(once, window), once, atol=1e-12)


def test_invalid_window():
    with pytest.raises(ConfigError):
        sliding_mean_norm(np.ones((1, 3)), 0)


def test_processor_window_zero_is_passthrough(rng):
    x = rng.standard_normal((2, 8))
    assert np.array_equal(FeatureProcessor(0).prepare(x), x)
    prepared = FeatureProcessor(3).prepare_all([sequence(x, 1, "a")])
    assert prepared[0].label == 1 and prepared[0].utt_id == "a"
    np.testing.assert_allclose(prepared[0].features, naive_norm(x, 3), atol=1e-12)
