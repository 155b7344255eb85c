import csv
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from src.core.checkpoint import read_checkpoint
from src.core.errors import FormatError
from src.core.feature_processor import label_histogram, load_features
from src.core.gradcheck import TOLERANCE, GradcheckResult, check_gradients
from src.core.models import VARIANTS, ModelConfig, ParamReport, TrainingConfig
from src.core.network import DmscNetwork, count_params
from src.utils.config_utils import build_model, read_key_values, split_values
from src.utils.file_utils import get_file_kind
from src.utils.logging_utils import get_app_logger
from src.utils.rng_utils import rng_for

# Initialize logger
logger = get_app_logger()

# Published sizes in millions, used for the reduction report
PUBLISHED_PARAMS_M = {"dtdnn-baseline": 3.3, "dkconv": 3.4, "local-ms": 2.5, "global-local-ms": 2.9}
CLAIMED_LOCAL_MS_REDUCTION = 36.0

GRADCHECK_FRAMES = 16
GRADCHECK_BATCH = 3


def load_model_config(path: Optional[str] = None, **overrides) -> ModelConfig:
    """Model config from a key=value file (training keys are ignored) with overrides on top"""
    values: Dict[str, Any] = {}
    if path:
        values = dict(split_values(read_key_values(path), ModelConfig, TrainingConfig)[ModelConfig])
    values.update({key: value for key, value in overrides.items() if value is not None})
    return build_model(ModelConfig, values, f"model config {path}" if path else "model config")


def tiny_config(variant: str = "global-local-ms", **overrides) -> ModelConfig:
    """A few-channel network small enough for exhaustive finite differences"""
    values: Dict[str, Any] = dict(
        variant=variant,
        input_dim=4,
        init_channels=4,
        filters=2,
        bottleneck=4,
        block_sizes=[1, 2],
        first_context=1,
        narrow_context=1,
        wide_context=2,
        wide_tail_layers=1,
        scale_groups=2,
        reduction=1,
        embedding_dim=6,
        num_classes=3,
    )
    values.update(overrides)
    return ModelConfig(**values)


def format_param_table(report: ParamReport) -> str:
    width = max(len(row.name) for row in report.rows) + 2
    lines = [f"{'stage':<{width}}{'parameters':>12}"]
    lines += [f"{row.name:<{width}}{row.count:>12,}" for row in report.rows]
    lines.append(f"{'total (' + report.variant + ')':<{width}}{report.total:>12,}")
    return "\n".join(lines)


def write_param_csv(report: ParamReport, path: str) -> str:
    """One row per stage; the counts sum to the total"""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["stage", "parameters"])
        for row in report.rows:
            writer.writerow([row.name, row.count])
    return path


def format_gradcheck_table(results: Sequence[GradcheckResult]) -> str:
    width = max(len(r.name) for r in results) + 2
    lines = [f"{'parameter':<{width}}{'max_rel_err':>14}{'checked':>9}{'skipped':>9}  status"]
    for r in results:
        status = "ok" if r.passed else "FAIL"
        lines.append(f"{r.name:<{width}}{r.max_rel_err:>14.3e}{r.checked:>9}{r.skipped:>9}  {status}")
    return "\n".join(lines)


class ModelService:
    """Service for parameter accounting, gradient checks and artefact inspection"""

    def count(self, config: ModelConfig, seed: int = 0) -> ParamReport:
        return count_params(DmscNetwork.build(config, seed))

    def count_variants(self, config: ModelConfig, seed: int = 0) -> Dict[str, ParamReport]:
        return {
            variant: self.count(ModelConfig(**{**config.model_dump(), "variant": variant}), seed)
            for variant in VARIANTS
        }

    def reduction_report(self, config: ModelConfig, seed: int = 0) -> Dict[str, Any]:
        """Measured local-ms saving next to the claimed and the table-implied figures"""
        totals = {variant: report.total for variant, report in self.count_variants(config, seed).items()}
        local = totals["local-ms"]

        def saving(reference: float, reduced: float) -> float:
            return 100.0 * (1.0 - reduced / reference)

        return {
            "totals": totals,
            "measured_vs_baseline_pct": saving(totals["dtdnn-baseline"], local),
            "measured_vs_dkconv_pct": saving(totals["dkconv"], local),
            "claimed_pct": CLAIMED_LOCAL_MS_REDUCTION,
            "published_vs_baseline_pct": saving(PUBLISHED_PARAMS_M["dtdnn-baseline"], PUBLISHED_PARAMS_M["local-ms"]),
            "published_vs_dkconv_pct": saving(PUBLISHED_PARAMS_M["dkconv"], PUBLISHED_PARAMS_M["local-ms"]),
            "within_15pct_of_published": {
                variant: abs(total / 1e6 - PUBLISHED_PARAMS_M[variant]) <= 0.15 * PUBLISHED_PARAMS_M[variant]
                for variant, total in totals.items()
            },
        }

    def gradcheck(
        self,
        config: ModelConfig,
        seed: int = 0,
        frames: int = GRADCHECK_FRAMES,
        batch_size: int = GRADCHECK_BATCH,
        max_entries: Optional[int] = None,
        tolerance: float = TOLERANCE,
    ) -> List[GradcheckResult]:
        """Finite-difference check of every parameter of one network on a random batch"""
        network = DmscNetwork.build(config, seed).train()
        rng = rng_for(seed, "gradcheck")
        batch = [rng.standard_normal((config.input_dim, frames)) for _ in range(batch_size)]
        labels = [i % config.num_classes for i in range(batch_size)]
        logger.info(f"Gradient check of {config.variant}: {network.num_parameters()} parameters, {batch_size} x {frames} frames")
        results = check_gradients(
            lambda: network.loss(batch, labels),
            network.named_parameters(),
            tolerance=tolerance,
            max_entries=max_entries,
            rng=rng,
        )
        failed = [r.name for r in results if not r.passed]
        skipped = sum(r.skipped for r in results)
        if skipped:
            logger.warning(f"{skipped} coordinates skipped at non-smooth points")
        if failed:
            logger.error(f"Gradient check failed for: {', '.join(failed)}")
        return results

    def inspect(self, path: str) -> Dict[str, Any]:
        """Summary of a checkpoint or a DMSF corpus"""
        kind = get_file_kind(path)
        if kind == "checkpoint":
            checkpoint = read_checkpoint(path)
            report = count_params(checkpoint.to_network())
            return {
                "kind": kind,
                "config": checkpoint.config.model_dump(),
                "seed": checkpoint.seed,
                "parameters": report.total,
                "stages": {row.name: row.count for row in report.rows},
                "training": checkpoint.state.model_dump() if checkpoint.state else None,
            }
        if kind == "features":
            sequences = load_features(path)
            frames = np.array([seq.frames for seq in sequences]) if sequences else np.zeros(0, dtype=int)
            return {
                "kind": kind,
                "utterances": len(sequences),
                "channels": sorted({seq.channels for seq in sequences}),
                "labels": label_histogram(sequences),
                "frames_min": int(frames.min()) if frames.size else 0,
                "frames_max": int(frames.max()) if frames.size else 0,
                "frames_mean": float(frames.mean()) if frames.size else 0.0,
            }
        raise FormatError(f"{path} is neither a checkpoint nor a feature file", 0)


def get_model_service() -> ModelService:
    return ModelService()
