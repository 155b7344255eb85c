"""Central finite-difference checks of analytic gradients."""
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from src.core.tensor import Tensor, kink_monitor, no_grad

STEP = 1e-5
TOLERANCE = 1e-4
# Gradients smaller than this are compared on an absolute scale
RELATIVE_FLOOR = 1e-2


@dataclass
class GradcheckResult:
    name: str
    max_rel_err: float
    checked: int
    skipped: int
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.max_rel_err < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = RELATIVE_FLOOR) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def _evaluate(loss_fn: Callable[[], Tensor]) -> Tuple[float, List[bytes]]:
    with no_grad(), kink_monitor() as kinks:
        value = loss_fn().item()
    return value, kinks


def numerical_gradient(
    loss_fn: Callable[[], Tensor],
    param: Tensor,
    indices: Sequence[Tuple[int, ...]],
    step: float = STEP,
) -> Tuple[np.ndarray, np.ndarray]:
    """Central differences at `indices`; the mask flags coordinates that crossed a kink"""
    values = np.zeros(len(indices))
    crossed = np.zeros(len(indices), dtype=bool)
    for i, index in enumerate(indices):
        original = param.data[index]
        param.data[index] = original + step
        plus, plus_kinks = _evaluate(loss_fn)
        param.data[index] = original - step
        minus, minus_kinks = _evaluate(loss_fn)
        param.data[index] = original
        values[i] = (plus - minus) / (2.0 * step)
        crossed[i] = plus_kinks != minus_kinks
    return values, crossed


def analytic_gradients(loss_fn: Callable[[], Tensor], params: Sequence[Tuple[str, Tensor]]) -> List[np.ndarray]:
    for _, param in params:
        param.zero_grad()
    loss_fn().backward()
    return [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for _, p in params]


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tuple[str, Tensor]],
    step: float = STEP,
    tolerance: float = TOLERANCE,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> List[GradcheckResult]:
    """Compare backward against central differences for every named parameter

    With `max_entries` set, at most that many coordinates per parameter are
    checked, chosen by `rng`.
    """
    rng = rng or np.random.default_rng(0)
    grads = analytic_gradients(loss_fn, params)
    results = []
    for (name, param), grad in zip(params, grads):
        indices = list(np.ndindex(*param.shape))
        if max_entries is not None and len(indices) > max_entries:
            chosen = np.sort(rng.choice(len(indices), size=max_entries, replace=False))
            indices = [indices[i] for i in chosen]
        numeric, crossed = numerical_gradient(loss_fn, param, indices, step)
        analytic = np.array([grad[index] for index in indices])
        errors = relative_error(analytic, numeric)[~crossed]
        results.append(GradcheckResult(
            name=name,
            max_rel_err=float(errors.max()) if errors.size else 0.0,
            checked=int(errors.size),
            skipped=int(crossed.sum()),
            tolerance=tolerance,
        ))
    return results
