import numpy as np
import pytest

from src.core.errors import DimensionError, SequenceLengthError
from src.core.gradcheck import check_gradients
from src.core.models import VARIANTS, ModelConfig
from src.core.network import DmscNetwork, build, count_params
from src.core.tensor import MatMul, Tensor, no_grad
from src.services.model_service import get_model_service

REFERENCE_TOTALS = {
    "dtdnn-baseline": 3_243_232,
    "dkconv": 3_799_936,
    "local-ms": 2_227_768,
    "global-local-ms": 2_555_448,
}
PUBLISHED_M = {"dtdnn-baseline": 3.3, "dkconv": 3.4, "local-ms": 2.5, "global-local-ms": 2.9}


@pytest.fixture(scope="module")
def reference_reports():
    return {variant: count_params(build(ModelConfig(variant=variant))) for variant in VARIANTS}


@pytest.mark.parametrize("variant", VARIANTS)
def test_reference_parameter_totals(variant, reference_reports):
    assert reference_reports[variant].total == REFERENCE_TOTALS[variant]


def test_variant_ordering(reference_reports):
    totals = {variant: report.total for variant, report in reference_reports.items()}
    assert totals["local-ms"] < totals["global-local-ms"] < totals["dtdnn-baseline"] < totals["dkconv"]


@pytest.mark.parametrize("variant", VARIANTS)
def test_totals_within_published_window(variant, reference_reports):
    published = PUBLISHED_M[variant] * 1e6
    assert abs(reference_reports[variant].total - published) <= 0.15 * published


def test_stage_rows_sum_to_total(reference_reports):
    report = reference_reports["global-local-ms"]
    assert sum(row.count for row in report.rows) == report.total
    names = [row.name for row in report.rows]
    assert names[0] == "tdnn"
    assert names[-3:] == ["embedding", "embedding_bn", "head"]
    assert len([name for name in names if name.startswith("block")]) == 18
    assert "block1.layer6" in names and "block2.layer12" in names


def test_baseline_dense_layer_row_matches_hand_count(reference_reports):
    # first layer of block 2 sees (256 + 6 * 64) // 2 = 320 channels: 2C + C*B + B + 2B + B*G*K + G
    rows = {row.name: row.count for row in reference_reports["dtdnn-baseline"].rows}
    c, b, g, k = 320, 128, 64, 3
    assert rows["block2.layer1"] == 2 * c + c * b + b + 2 * b + b * g * k + g


def test_reduction_report_flags_claim():
    report = get_model_service().reduction_report(ModelConfig())
    assert report["totals"] == REFERENCE_TOTALS
    assert report["claimed_pct"] == 36.0
    assert report["measured_vs_baseline_pct"] == pytest.approx(100 * (1 - 2_227_768 / 3_243_232))
    assert round(report["measured_vs_baseline_pct"], 1) == 31.3
    assert round(report["measured_vs_dkconv_pct"], 1) == 41.4
    assert round(report["published_vs_baseline_pct"]) == 24
    assert round(report["published_vs_dkconv_pct"]) == 26
    assert all(report["within_15pct_of_published"].values())


def test_global_local_ms_forward_smoke():
    network = build(ModelConfig(variant="global-local-ms")).eval()
    logits = network([np.random.default_rng(0).standard_normal((67, 300))])
    assert logits.shape == (1, 16)
    assert np.all(np.isfinite(logits.data))


def test_baseline_pools_last_transit(tiny):
    network = build(tiny("dtdnn-baseline"))
    assert network.taps == [1]
    assert network.pooled_dim == 2 * network.transits[-1].out_channels


def test_global_pool_concatenates_both_transits(tiny):
    network = build(tiny("global-local-ms"))
    assert network.taps == [0, 1]
    assert network.pooled_dim == 2 * (network.transits[0].out_channels + network.transits[1].out_channels)


def test_same_seed_same_parameters(tiny):
    a, b = build(tiny(), seed=5), build(tiny(), seed=5)
    for (name, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
        assert np.array_equal(p.data, q.data), name
    c = build(tiny(), seed=6)
    assert not np.array_equal(a.embedding.W.data, c.embedding.W.data)


def test_forward_is_deterministic(tiny, rng):
    network = build(tiny()).eval()
    x = rng.standard_normal((4, 20))
    assert np.array_equal(network([x]).data, network([x]).data)


@pytest.mark.parametrize("frames", [5, 17, 64])
def test_embedding_dimension_is_fixed(frames, tiny, rng):
    network = build(tiny()).eval()
    assert network.min_frames == 5
    assert network.embed([rng.standard_normal((4, frames))]).shape == (1, 6)


def test_variable_length_batch(tiny, rng):
    network = build(tiny())
    batch = [rng.standard_normal((4, frames)) for frames in (12, 20, 31)]
    assert network.logits(batch).shape == (3, 3)


def test_packed_batch_matches_single_utterances_in_eval(tiny, rng):
    network = build(tiny()).eval()
    batch = [rng.standard_normal((4, frames)) for frames in (12, 20, 31)]
    joint = network.logits(batch).data
    alone = np.vstack([network.logits([x]).data for x in batch])
    np.testing.assert_allclose(joint, alone, atol=1e-10)


def test_training_batch_norm_pools_every_frame_of_the_batch(tiny, rng):
    network = build(tiny())
    batch = [rng.standard_normal((4, 12)), 3.0 + rng.standard_normal((4, 20))]
    with no_grad():
        conv = [network.tdnn.conv(Tensor(x)).data for x in batch]
        network.embed(batch)
    decay = 1.0 - network.config.bn_momentum
    pooled_mean = np.concatenate(conv, axis=1).mean(axis=1)
    np.testing.assert_allclose(network.tdnn.bn.running_mean, decay * pooled_mean, rtol=1e-10, atol=1e-14)
    per_utterance = np.mean([c.mean(axis=1) for c in conv], axis=0)
    assert not np.allclose(pooled_mean, per_utterance)


def test_input_checks(tiny, rng):
    network = build(tiny())
    with pytest.raises(DimensionError):
        network([rng.standard_normal((5, 20))])
    with pytest.raises(SequenceLengthError):
        network([rng.standard_normal((4, 4))])
    with pytest.raises(DimensionError):
        network.embed([])


def test_invalid_variant_and_groups_rejected(tiny):
    with pytest.raises(ValueError):
        ModelConfig(variant="resnet")
    with pytest.raises(ValueError):
        ModelConfig(variant="local-ms", filters=66, scale_groups=4)
    with pytest.raises(ValueError):
        ModelConfig(kernel_size=4)


@pytest.mark.parametrize("variant", VARIANTS)
def test_full_model_gradcheck(variant, tiny):
    results = get_model_service().gradcheck(tiny(variant))
    network = DmscNetwork.build(tiny(variant))
    assert [r.name for r in results] == [name for name, _ in network.named_parameters()]
    failed = [(r.name, r.max_rel_err) for r in results if not r.passed]
    assert not failed


def test_gradcheck_catches_corrupted_backward(tiny, rng, monkeypatch):
    original = MatMul.backward

    def doubled(self, grad):
        grad_a, grad_b = original(self, grad)
        return grad_a, 2.0 * grad_b

    network = DmscNetwork.build(tiny("dtdnn-baseline")).train()
    batch = [rng.standard_normal((4, 16)) for _ in range(3)]
    params = [(name, p) for name, p in network.named_parameters() if name.startswith(("embedding.", "head."))]
    monkeypatch.setattr(MatMul, "backward", doubled)
    results = check_gradients(lambda: network.loss(batch, [0, 1, 2]), params)
    failed = {r.name for r in results if not r.passed}
    assert "embedding.W" in failed
