"""Plain SGD with L2 decay and a plateau learning-rate schedule."""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from src.core.errors import NumericError
from src.core.models import TrainingState
from src.core.tensor import Tensor


@dataclass
class SgdState:
    learning_rate: float
    l2: float = 0.0
    step: int = 0
    decay_factor: float = 0.5
    patience_steps: int = 2000
    smoothing: float = 0.98
    lr_floor: float = 1e-6
    smoothed_loss: Optional[float] = None
    best_loss: Optional[float] = None
    plateau_steps: int = 0

    @property
    def finished(self) -> bool:
        return self.learning_rate < self.lr_floor

    def observe(self, loss: float) -> bool:
        """Track the smoothed loss; return True when the learning rate was just decayed

        The loss is smoothed with an exponential moving average. When it
        has not improved on its best value for `patience_steps` consecutive
        steps the rate is multiplied by `decay_factor`.
        """
        if self.smoothed_loss is None:
            self.smoothed_loss = loss
        else:
            self.smoothed_loss = self.smoothing * self.smoothed_loss + (1.0 - self.smoothing) * loss
        if self.best_loss is None or self.smoothed_loss < self.best_loss:
            self.best_loss = self.smoothed_loss
            self.plateau_steps = 0
            return False
        self.plateau_steps += 1
        if self.plateau_steps < self.patience_steps:
            return False
        self.learning_rate *= self.decay_factor
        self.plateau_steps = 0
        self.best_loss = self.smoothed_loss
        return True

    def to_training_state(self, seed: int, mean_norm_window: int = 0) -> TrainingState:
        return TrainingState(
            mean_norm_window_frames=mean_norm_window,
            step=self.step,
            learning_rate=self.learning_rate,
            best_loss=self.best_loss,
            smoothed_loss=self.smoothed_loss,
            plateau_steps=self.plateau_steps,
            seed=seed,
        )

    def restore(self, state: TrainingState) -> "SgdState":
        self.step = state.step
        self.learning_rate = state.learning_rate
        self.best_loss = state.best_loss
        self.smoothed_loss = state.smoothed_loss
        self.plateau_steps = state.plateau_steps
        return self


def sgd_step(params: Sequence[Tuple[str, Tensor]], state: SgdState) -> None:
    """p <- p - lr * (g + l2 * p) for every named parameter, then advance the step counter

    Parameters without a gradient are treated as having a zero data
    gradient and only decay.
    """
    for name, param in params:
        if param.grad is not None and not np.all(np.isfinite(param.grad)):
            raise NumericError(f"non-finite gradient in parameter '{name}' at step {state.step}")
    for _, param in params:
        grad = param.grad if param.grad is not None else 0.0
        param.data -= state.learning_rate * (grad + state.l2 * param.data)
    state.step += 1
