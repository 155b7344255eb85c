import csv
import math
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from src.core.checkpoint import read_checkpoint, save_checkpoint
from src.core.errors import ConfigError, NumericError, TrainingDivergedError
from src.core.feature_processor import FeatureProcessor, load_features
from src.core.models import FeatureSequence, ModelConfig, TrainingConfig
from src.core.network import DmscNetwork
from src.core.optim import SgdState, sgd_step
from src.core.sampler import group_by_language, sample_batch
from src.utils.config_utils import build_model, read_key_values, split_values
from src.utils.file_utils import ensure_directory_exists
from src.utils.logging_utils import get_app_logger
from src.utils.rng_utils import rng_for

# Initialize logger
logger = get_app_logger()

CHECKPOINT_FILE = "checkpoint.dmsc"
LOSS_TRACE_FILE = "loss.csv"
LOSS_TRACE_HEADER = ["step", "lr", "loss"]


@dataclass
class TrainingResult:
    checkpoint_path: str
    loss_trace_path: str
    steps: int
    final_loss: float
    final_lr: float


def load_training_config(path: str, overrides: Optional[Dict[str, str]] = None) -> Tuple[ModelConfig, TrainingConfig]:
    """Split one key=value file into the model config and the training config"""
    values = read_key_values(path)
    values.update(overrides or {})
    routed = split_values(values, ModelConfig, TrainingConfig)
    model_config = build_model(ModelConfig, routed[ModelConfig], f"model config in {path}")
    train_config = build_model(TrainingConfig, routed[TrainingConfig], f"training config in {path}")
    return model_config, train_config


class LossTrace:
    """CSV of (step, lr, loss), one row per optimizer step"""

    def __init__(self, path: str, resume_step: int = 0):
        self.path = path
        rows: List[List[str]] = []
        if resume_step and os.path.isfile(path):
            with open(path, newline="") as f:
                rows = [row for row in csv.reader(f)][1:]
            rows = [row for row in rows if row and int(row[0]) <= resume_step]
        self.handle = open(path, "w", newline="")
        self.writer = csv.writer(self.handle)
        self.writer.writerow(LOSS_TRACE_HEADER)
        self.writer.writerows(rows)

    def append(self, step: int, lr: float, loss: float) -> None:
        self.writer.writerow([step, repr(lr), repr(loss)])

    def close(self) -> None:
        self.handle.close()


class TrainingService:
    """Service for training networks with SGD on a DMSF corpus"""

    def __init__(self):
        logger.debug("TrainingService initialized")

    def snapshot(self, state: SgdState, train_config: TrainingConfig):
        return state.to_training_state(train_config.seed, train_config.mean_norm_window_frames)

    def check_labels(self, dataset: Sequence[FeatureSequence], model_config: ModelConfig) -> None:
        if not dataset:
            raise ConfigError("training dataset is empty")
        labels = [seq.label for seq in dataset]
        if min(labels) < 0 or max(labels) >= model_config.num_classes:
            raise ConfigError(
                f"labels span [{min(labels)}, {max(labels)}] but the model has {model_config.num_classes} classes"
            )

    def train(
        self,
        model_config: ModelConfig,
        train_config: TrainingConfig,
        dataset: Optional[Sequence[FeatureSequence]] = None,
        resume: bool = False,
    ) -> TrainingResult:
        """Run SGD until max_steps or until the learning rate falls below lr_floor

        With `resume`, parameters, BN statistics and schedule state are
        restored from the run's checkpoint and the step count continues.
        """
        ensure_directory_exists(train_config.out_dir)
        checkpoint_path = os.path.join(train_config.out_dir, CHECKPOINT_FILE)
        trace_path = os.path.join(train_config.out_dir, LOSS_TRACE_FILE)

        if dataset is None:
            if not train_config.train_data:
                raise ConfigError("train_data is not set")
            dataset = load_features(train_config.train_data, expected_channels=model_config.input_dim)
        self.check_labels(dataset, model_config)
        dataset = FeatureProcessor(train_config.mean_norm_window_frames).prepare_all(dataset)
        groups = group_by_language(dataset)
        batch_spec = train_config.batch_spec()

        state = SgdState(
            learning_rate=train_config.learning_rate,
            l2=train_config.l2,
            decay_factor=train_config.lr_decay_factor,
            patience_steps=train_config.plateau_patience_steps,
            smoothing=train_config.plateau_smoothing,
            lr_floor=train_config.lr_floor,
        )
        last_good: Optional[str] = None
        if resume and os.path.isfile(checkpoint_path):
            checkpoint = read_checkpoint(checkpoint_path)
            if checkpoint.config != model_config:
                raise ConfigError(f"checkpoint {checkpoint_path} was trained with a different model config")
            network = checkpoint.to_network()
            if checkpoint.state is not None:
                state.restore(checkpoint.state)
            last_good = checkpoint_path
            logger.info(f"Resuming from {checkpoint_path} at step {state.step}")
        else:
            network = DmscNetwork.build(model_config, train_config.seed)
        network.train()
        if network.min_frames > batch_spec.segment_len_min_frames:
            raise ConfigError(
                f"segment_len_min_frames={batch_spec.segment_len_min_frames} is shorter than "
                f"the model's minimum of {network.min_frames} frames"
            )

        params = network.named_parameters()
        trace = LossTrace(trace_path, resume_step=state.step)
        loss_value = math.nan
        logger.info(
            f"Training {model_config.variant}: {network.num_parameters()} parameters, "
            f"{len(dataset)} utterances, {len(groups)} languages"
        )
        try:
            while state.step < train_config.max_steps and not state.finished:
                rng = rng_for(train_config.seed, "train.sampler", state.step)
                batch = sample_batch(groups, batch_spec, rng)
                segments = [segment for segment, _ in batch]
                labels = [label for _, label in batch]
                network.zero_grad()
                try:
                    loss = network.loss(segments, labels)
                    loss_value = loss.item()
                    if not math.isfinite(loss_value):
                        raise NumericError(f"loss is {loss_value}")
                    loss.backward()
                    lr = state.learning_rate
                    sgd_step(params, state)
                except NumericError as e:
                    logger.error(f"Training diverged at step {state.step}: {e}")
                    raise TrainingDivergedError(
                        f"training diverged at step {state.step}: {e}; last good checkpoint: {last_good or 'none'}",
                        last_good,
                    ) from e
                if state.observe(loss_value):
                    logger.info(f"Step {state.step}: loss plateau, learning rate now {state.learning_rate:.3e}")
                trace.append(state.step, lr, loss_value)
                if state.step % train_config.log_every_steps == 0:
                    logger.info(f"Step {state.step}: loss {loss_value:.5f} (smoothed {state.smoothed_loss:.5f}), lr {lr:.3e}")
                if state.step % train_config.checkpoint_every_steps == 0:
                    last_good = save_checkpoint(network, checkpoint_path, self.snapshot(state, train_config))
        finally:
            trace.close()

        save_checkpoint(network, checkpoint_path, self.snapshot(state, train_config))
        reason = "learning rate below floor" if state.finished else "step budget reached"
        logger.info(f"Training stopped at step {state.step} ({reason}): loss {loss_value:.5f}, lr {state.learning_rate:.3e}")
        return TrainingResult(
            checkpoint_path=checkpoint_path,
            loss_trace_path=trace_path,
            steps=state.step,
            final_loss=loss_value,
            final_lr=state.learning_rate,
        )


def get_training_service() -> TrainingService:
    return TrainingService()
