import csv
import json

import numpy as np
import pytest

from src.core.checkpoint import save_checkpoint
from src.core.feature_processor import write_features
from src.core.models import VARIANTS, FeatureSequence
from src.core.network import DmscNetwork
from src.main import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from src.services.model_service import tiny_config
from src.utils.config_utils import write_key_values
from tests.conftest import make_sequences

TINY_MODEL_KEYS = {
    key: value
    for key, value in tiny_config().model_dump().items()
    if key in ("input_dim", "init_channels", "filters", "bottleneck", "block_sizes", "first_context",
               "narrow_context", "wide_context", "wide_tail_layers", "scale_groups", "reduction", "embedding_dim")
}


@pytest.fixture
def corpus_spec(tmp_path):
    path = str(tmp_path / "corpus.conf")
    write_key_values(path, {
        "num_languages": 3, "utterances_per_language": 5, "frames_min": 20, "frames_max": 30,
        "channels": 4, "noise_level": 0.3, "seed": 7,
    })
    return path


@pytest.fixture
def tiny_checkpoint(tmp_path):
    return save_checkpoint(DmscNetwork.build(tiny_config(), seed=1), str(tmp_path / "tiny.dmsc"))


def test_generate_is_reproducible(tmp_path, corpus_spec, capsys):
    assert main(["generate", "--spec", corpus_spec, "--out", str(tmp_path / "a")]) == EXIT_OK
    first = capsys.readouterr().out
    assert "train: train.dmsf 12 utterances sha256=" in first
    assert "languages: lang00, lang01, lang02" in first

    assert main(["generate", "--spec", corpus_spec, "--out", str(tmp_path / "b")]) == EXIT_OK
    assert capsys.readouterr().out == first

    assert main(["generate", "--spec", corpus_spec, "--out", str(tmp_path / "c"), "--seed", "8"]) == EXIT_OK
    assert capsys.readouterr().out != first


def test_generate_with_missing_spec(tmp_path, capsys):
    missing = str(tmp_path / "nope.conf")
    assert main(["generate", "--spec", missing, "--out", str(tmp_path / "out")]) == EXIT_USAGE
    assert missing in capsys.readouterr().err


def test_count_params_table_and_csv(tmp_path, capsys):
    out = str(tmp_path / "params.csv")
    assert main(["count-params", "--variant", "global-local-ms", "--csv", out]) == EXIT_OK
    assert "2,555,448" in capsys.readouterr().out
    with open(out, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["stage", "parameters"]
    assert sum(int(count) for _, count in rows[1:]) == 2555448


def test_count_params_compare(capsys):
    assert main(["count-params", "--compare"]) == EXIT_OK
    out = capsys.readouterr().out
    for total in ("3,243,232", "3,799,936", "2,227,768", "2,555,448"):
        assert total in out
    assert "claimed 36%" in out
    within = json.loads(out.strip().splitlines()[-1])
    assert set(within) == {"dtdnn-baseline", "dkconv", "local-ms", "global-local-ms"}


def test_gradcheck_passes(capsys):
    assert main(["gradcheck", "--variant", "dtdnn-baseline", "--max-entries", "6"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "[dtdnn-baseline]" in out
    assert "all parameter groups passed" in out


def test_inspect_checkpoint_and_features(tmp_path, tiny_checkpoint, capsys, rng):
    assert main(["inspect", tiny_checkpoint]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["kind"] == "checkpoint"
    assert summary["config"]["variant"] == "global-local-ms"
    assert summary["parameters"] == sum(summary["stages"].values())

    data = write_features(str(tmp_path / "x.dmsf"), make_sequences(2, 3, 4, 25, rng))
    assert main(["inspect", data]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["kind"] == "features"
    assert summary["utterances"] == 6
    assert summary["labels"] == {"0": 3, "1": 3}


def test_score_then_evaluate_from_scores(tmp_path, tiny_checkpoint, capsys, rng):
    data = write_features(str(tmp_path / "test.dmsf"), make_sequences(3, 2, 4, 30, rng))
    scores = str(tmp_path / "out" / "scores.csv")
    assert main(["score", "--checkpoint", tiny_checkpoint, "--data", data, "--out", scores]) == EXIT_OK
    capsys.readouterr()

    report = str(tmp_path / "out" / "report.json")
    det = str(tmp_path / "out" / "det.csv")
    assert main(["evaluate", "--scores", scores, "--report", report, "--det-out", det]) == EXIT_OK
    assert "Cavg:" in capsys.readouterr().out
    assert len(json.loads(open(report).read())["pair_costs"]) == 6

    assert main(["evaluate", "--scores", scores, "--languages", "lang00,lang02"]) == EXIT_OK
    assert "Languages: 2" in capsys.readouterr().out


def test_evaluate_argument_errors(tmp_path, tiny_checkpoint, capsys):
    assert main(["evaluate"]) == EXIT_USAGE
    assert "--scores" in capsys.readouterr().err
    assert main(["evaluate", "--scores", "s.csv", "--checkpoint", tiny_checkpoint]) == EXIT_USAGE
    assert main(["evaluate", "--checkpoint", tiny_checkpoint, "--data", str(tmp_path / "absent.dmsf")]) == EXIT_USAGE


def test_evaluate_channel_mismatch(tmp_path, tiny_checkpoint, capsys, rng):
    data = write_features(str(tmp_path / "wide.dmsf"), make_sequences(3, 1, 5, 30, rng))
    assert main(["evaluate", "--checkpoint", tiny_checkpoint, "--data", data]) == EXIT_USAGE
    assert "5 channels" in capsys.readouterr().err


def test_evaluate_label_outside_the_model(tmp_path, tiny_checkpoint, capsys, rng):
    data = write_features(str(tmp_path / "extra.dmsf"), make_sequences(4, 1, 4, 30, rng))
    assert main(["evaluate", "--checkpoint", tiny_checkpoint, "--data", data]) == EXIT_USAGE
    assert "label 3" in capsys.readouterr().err


def test_evaluate_nan_scores_is_format_error(tmp_path, capsys):
    scores = tmp_path / "scores.csv"
    scores.write_text("utt_id,truth,lang00,lang01\nu0,lang00,nan,0.5\nu1,lang01,0.2,0.8\n")
    assert main(["evaluate", "--scores", str(scores)]) == EXIT_USAGE
    assert "NaN" in capsys.readouterr().err


@pytest.fixture
def train_conf(tmp_path, rng):
    data = write_features(str(tmp_path / "train.dmsf"), make_sequences(3, 2, 4, 30, rng))
    path = str(tmp_path / "train.conf")
    write_key_values(path, {
        **TINY_MODEL_KEYS, "num_classes": 3, "train_data": data, "out_dir": str(tmp_path / "run"),
        "languages_per_batch": 3, "segment_len_min_frames": 20, "segment_len_max_frames": 30,
        "mean_norm_window_frames": 0, "max_steps": 2, "checkpoint_every_steps": 5,
    })
    return path


@pytest.mark.parametrize("variant", VARIANTS)
def test_train_variant_override(tmp_path, train_conf, variant, capsys):
    out_dir = tmp_path / variant
    assert main(["train", "--config", train_conf, "--variant", variant, "--out-dir", str(out_dir)]) == EXIT_OK
    assert "finished at step 2" in capsys.readouterr().out

    assert main(["inspect", str(out_dir / "checkpoint.dmsc")]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["config"]["variant"] == variant
    assert summary["parameters"] == DmscNetwork.build(tiny_config(variant=variant)).num_parameters()


def test_train_resume_continues_the_step_count(tmp_path, train_conf, capsys):
    out_dir = tmp_path / "resumed"
    args = ["train", "--config", train_conf, "--out-dir", str(out_dir)]
    assert main(args + ["--max-steps", "5"]) == EXIT_OK
    assert "finished at step 5" in capsys.readouterr().out

    assert main(args + ["--max-steps", "10", "--resume"]) == EXIT_OK
    assert "finished at step 10" in capsys.readouterr().out
    with open(out_dir / "loss.csv", newline="") as f:
        steps = [int(row[0]) for row in list(csv.reader(f))[1:]]
    assert steps == list(range(1, 11))


def test_train_divergence_exits_numeric(tmp_path, capsys, rng):
    data = write_features(str(tmp_path / "boom.dmsf"), [
        FeatureSequence(features=1e200 * (1.0 + rng.random((4, 40))), label=label, utt_id=f"u{label}")
        for label in range(3)
    ])
    config = str(tmp_path / "train.conf")
    write_key_values(config, {
        **TINY_MODEL_KEYS, "num_classes": 3, "train_data": data, "out_dir": str(tmp_path / "run"),
        "languages_per_batch": 3, "segment_len_min_frames": 20, "segment_len_max_frames": 30,
        "mean_norm_window_frames": 0, "max_steps": 5,
    })
    assert main(["train", "--config", config]) == EXIT_NUMERIC
    assert "diverged" in capsys.readouterr().err


@pytest.mark.slow
def test_generate_train_evaluate(tmp_path, capsys):
    spec = str(tmp_path / "corpus.conf")
    write_key_values(spec, {
        "num_languages": 3, "utterances_per_language": 20, "frames_min": 40, "frames_max": 60,
        "channels": 4, "noise_level": 0.2, "signature_scale": 2.0, "seed": 5,
    })
    corpus = tmp_path / "corpus"
    assert main(["generate", "--spec", spec, "--out", str(corpus)]) == EXIT_OK

    config = str(tmp_path / "train.conf")
    write_key_values(config, {
        **TINY_MODEL_KEYS, "variant": "global-local-ms", "num_classes": 3, "head_loss": "softmax",
        "train_data": str(corpus / "train.dmsf"), "out_dir": str(tmp_path / "run"),
        "learning_rate": 0.05, "languages_per_batch": 3, "segment_len_min_frames": 30,
        "segment_len_max_frames": 40, "mean_norm_window_frames": 0, "max_steps": 400, "seed": 2,
    })
    assert main(["train", "--config", config]) == EXIT_OK
    assert "finished at step 400" in capsys.readouterr().out

    report = str(tmp_path / "report.json")
    assert main([
        "evaluate", "--checkpoint", str(tmp_path / "run" / "checkpoint.dmsc"),
        "--data", str(corpus / "test.dmsf"), "--report", report,
    ]) == EXIT_OK
    metrics = json.loads(open(report).read())
    assert metrics["cavg"] < 0.1
    assert np.isfinite(metrics["eer"])
