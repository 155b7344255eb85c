import csv
import json
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from src.core.checkpoint import read_checkpoint
from src.core.errors import DimensionError, FormatError
from src.core.feature_processor import FeatureProcessor, load_features
from src.core.functional import softmax
from src.core.metrics import det_points, detection_trials, evaluate_table
from src.core.models import FeatureSequence, MetricReport, ScoreTable
from src.core.network import DmscNetwork
from src.core.tensor import no_grad
from src.utils.logging_utils import get_app_logger

# Initialize logger
logger = get_app_logger()


def language_names(num_classes: int) -> List[str]:
    return [f"lang{i:02d}" for i in range(num_classes)]


def write_score_table(table: ScoreTable, path: str) -> str:
    """CSV: header utt_id, truth, <language names>; one row per utterance"""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["utt_id", "truth"] + table.lang_names)
        for utt_id, truth, row in zip(table.utt_ids, table.truth, table.scores):
            writer.writerow([utt_id, table.lang_names[truth]] + [repr(float(v)) for v in row])
    return path


def read_score_table(path: str) -> ScoreTable:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0][:2] != ["utt_id", "truth"]:
        raise FormatError(f"{path} is not a score table: header must start with utt_id,truth")
    names = rows[0][2:]
    try:
        body = rows[1:]
        truth = [names.index(row[1]) for row in body]
        scores = np.array([[float(v) for v in row[2:]] for row in body]).reshape(len(body), len(names))
    except (ValueError, IndexError) as e:
        raise FormatError(f"malformed score table {path}: {e}") from e
    try:
        return ScoreTable(scores=scores, truth=truth, lang_names=names, utt_ids=[row[0] for row in body])
    except ValidationError as e:
        problems = "; ".join(err["msg"] for err in e.errors())
        raise FormatError(f"invalid score table {path}: {problems}") from e


def write_det_points(table: ScoreTable, path: str) -> str:
    points = det_points(*detection_trials(table))
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["threshold", "p_fa", "p_miss"])
        for threshold, p_fa, p_miss in points:
            writer.writerow([repr(float(threshold)), repr(float(p_fa)), repr(float(p_miss))])
    return path


def format_report(report: MetricReport) -> str:
    """Human-readable summary with the target x non-target cost matrix"""
    width = max(8, max(len(name) for name in report.languages) + 1)
    lines = [
        f"Utterances: {report.num_utterances}  Languages: {len(report.languages)}",
        f"Cavg: {report.cavg:.4f}",
        f"EER:  {report.eer:.2f}%  (threshold {report.eer_threshold:.6g})",
        "",
        "Pairwise cost (rows: target, columns: non-target)",
        " " * width + "".join(f"{name:>{width}}" for name in report.languages),
    ]
    matrix = report.cost_matrix()
    for target in report.languages:
        cells = "".join(
            f"{'-':>{width}}" if target == other else f"{matrix[target][other]:>{width}.4f}"
            for other in report.languages
        )
        lines.append(f"{target:<{width}}{cells}")
    return "\n".join(lines)


def write_report(report: MetricReport, path: str) -> str:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.model_dump(), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


class EvaluationService:
    """Service for scoring utterances and computing Cavg / EER"""

    def __init__(self, threads: int = 1):
        self.threads = max(1, threads)
        logger.debug(f"EvaluationService initialized with {self.threads} scoring thread(s)")

    def score_utterance(self, network: DmscNetwork, features: np.ndarray) -> np.ndarray:
        """Full-length forward pass; softmax posteriors over all classes"""
        with no_grad():
            return softmax(network.logits([features]), axis=1).data[0]

    def score_dataset(
        self,
        network: DmscNetwork,
        dataset: Sequence[FeatureSequence],
        mean_norm_window: int = 0,
    ) -> ScoreTable:
        network.eval()
        expected = network.config.input_dim
        for seq in dataset:
            if seq.channels != expected:
                raise DimensionError(f"utterance {seq.utt_id} has {seq.channels} channels, model expects {expected}")
            if not 0 <= seq.label < network.config.num_classes:
                raise DimensionError(
                    f"utterance {seq.utt_id} has label {seq.label}, model has {network.config.num_classes} classes"
                )
        processor = FeatureProcessor(mean_norm_window)
        inputs = [processor.prepare(seq.features) for seq in dataset]
        logger.info(f"Scoring {len(inputs)} utterances with {self.threads} thread(s)")
        if self.threads == 1:
            rows = [self.score_utterance(network, features) for features in inputs]
        else:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                rows = list(pool.map(lambda features: self.score_utterance(network, features), inputs))
        num_classes = network.config.num_classes
        scores = np.vstack(rows) if rows else np.zeros((0, num_classes))
        return ScoreTable(
            scores=scores,
            truth=[seq.label for seq in dataset],
            lang_names=language_names(num_classes),
            utt_ids=[seq.utt_id for seq in dataset],
        )

    def score_files(self, checkpoint_path: str, data_path: str, mean_norm_window: Optional[int] = None) -> ScoreTable:
        """Score a DMSF file; the normalisation window defaults to the one stored at training time"""
        checkpoint = read_checkpoint(checkpoint_path)
        network = checkpoint.to_network().eval()
        if mean_norm_window is None:
            mean_norm_window = checkpoint.state.mean_norm_window_frames if checkpoint.state else 0
        dataset = load_features(data_path, expected_channels=network.config.input_dim)
        return self.score_dataset(network, dataset, mean_norm_window)

    def evaluate(self, table: ScoreTable, languages: Optional[Sequence[str]] = None) -> MetricReport:
        """Metrics over `languages`, or over the languages that occur in the truth labels"""
        if not languages:
            present = sorted(set(int(t) for t in table.truth))
            if len(present) != table.num_langs:
                languages = [table.lang_names[i] for i in present]
                logger.info(f"Evaluating the {len(languages)} languages present in the test data")
        try:
            report = evaluate_table(table, languages)
        except Exception as e:
            logger.error(f"Error computing metrics: {str(e)}")
            raise
        logger.info(f"Cavg {report.cavg:.4f}, EER {report.eer:.2f}% over {report.num_utterances} utterances")
        return report


def get_evaluation_service(threads: int = 1) -> EvaluationService:
    return EvaluationService(threads)
