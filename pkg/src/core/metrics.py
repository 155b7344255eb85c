"""Language-detection metrics over a ScoreTable: pairwise Cavg and EER.

Cavg
    For every ordered pair (target t, non-target n) the trials are the
    utterances of t and of n, each decided by comparing only the scores of
    t and n: accept t when score[t] > score[n], ties reject.
    C(t, n) = P_tgt * P_miss(t) + (1 - P_tgt) * P_fa(t, n), P_tgt = 0.5,
    and Cavg is the mean over all L(L-1) ordered pairs.

EER
    Every (utterance, language) cell is a detection trial, a target when the
    language is the utterance's truth. Operating points are taken at every
    distinct score (accept score >= threshold); the EER is where the lower
    convex hull of those (P_fa, P_miss) points crosses P_miss = P_fa, with
    linear interpolation between hull vertices.
"""
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import MetricError
from src.core.models import MetricReport, PairCost, ScoreTable

P_TARGET = 0.5


def _check_languages(table: ScoreTable) -> None:
    if table.num_langs < 2:
        raise MetricError(f"Cavg needs at least two languages, got {table.num_langs}")
    counts = np.bincount(table.truth, minlength=table.num_langs)
    missing = [name for name, count in zip(table.lang_names, counts) if count == 0]
    if missing:
        raise MetricError(f"undefined language pairs: no trials for {', '.join(missing)}")


def pair_costs(table: ScoreTable, p_target: float = P_TARGET) -> List[PairCost]:
    _check_languages(table)
    costs = []
    for t, target in enumerate(table.lang_names):
        own = table.scores[table.truth == t]
        for n, nontarget in enumerate(table.lang_names):
            if n == t:
                continue
            other = table.scores[table.truth == n]
            p_miss = float(np.mean(~(own[:, t] > own[:, n])))
            p_fa = float(np.mean(other[:, t] > other[:, n]))
            costs.append(PairCost(
                target=target,
                nontarget=nontarget,
                p_miss=p_miss,
                p_fa=p_fa,
                cost=p_target * p_miss + (1.0 - p_target) * p_fa,
            ))
    return costs


def cavg(table: ScoreTable, p_target: float = P_TARGET) -> float:
    return float(np.mean([pair.cost for pair in pair_costs(table, p_target)]))


def detection_trials(table: ScoreTable) -> Tuple[np.ndarray, np.ndarray]:
    """Flattened (scores, is_target) over every utterance-language cell"""
    is_target = np.zeros(table.scores.shape, dtype=bool)
    is_target[np.arange(len(table.truth)), table.truth] = True
    return table.scores.reshape(-1), is_target.reshape(-1)


def det_points(scores: np.ndarray, is_target: np.ndarray) -> np.ndarray:
    """Rows (threshold, p_fa, p_miss), accepting score >= threshold; the last row rejects everything"""
    targets, nontargets = scores[is_target], scores[~is_target]
    if not targets.size or not nontargets.size:
        raise MetricError("EER needs both target and non-target trials")
    thresholds = np.unique(scores)
    targets.sort()
    nontargets.sort()
    p_miss = np.searchsorted(targets, thresholds, side="left") / targets.size
    p_fa = 1.0 - np.searchsorted(nontargets, thresholds, side="left") / nontargets.size
    points = np.column_stack([thresholds, p_fa, p_miss])
    return np.vstack([points, [np.inf, 0.0, 1.0]])


def _cross(o: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def lower_hull(points: np.ndarray) -> np.ndarray:
    """Lower convex hull of (threshold, x, y) rows in x order; rows keep their thresholds"""
    order = np.lexsort((-points[:, 2], points[:, 1]))
    hull: List[np.ndarray] = []
    for row in points[order]:
        while len(hull) >= 2 and _cross(hull[-2][1:], hull[-1][1:], row[1:]) <= 0:
            hull.pop()
        hull.append(row)
    return np.array(hull)


def eer_with_threshold(scores: np.ndarray, is_target: np.ndarray) -> Tuple[float, float]:
    """(EER in percent, threshold of the hull vertex nearest the crossing)"""
    points = det_points(np.asarray(scores, dtype=np.float64), np.asarray(is_target, dtype=bool))
    hull = lower_hull(points)
    largest = float(np.max(points[:-1, 0]))
    for first, second in zip(hull[:-1], hull[1:]):
        d1, d2 = first[2] - first[1], second[2] - second[1]
        if d1 >= 0 >= d2:
            alpha = 0.0 if d1 == d2 else d1 / (d1 - d2)
            rate = first[1] + alpha * (second[1] - first[1])
            threshold = first[0] if alpha <= 0.5 else second[0]
            return 100.0 * float(rate), min(float(threshold), largest)
    # unreachable: the hull runs from P_miss - P_fa = -1 to +1
    raise MetricError("ROC hull never crosses the equal-error line")


def eer(table: ScoreTable) -> float:
    scores, is_target = detection_trials(table)
    return eer_with_threshold(scores, is_target)[0]


def evaluate_table(table: ScoreTable, languages: Optional[Sequence[str]] = None) -> MetricReport:
    """Cavg, EER and the per-pair costs, optionally over a renormalised language subset"""
    if languages:
        try:
            table = table.restrict(list(languages))
        except ValueError as e:
            raise MetricError(str(e)) from e
    costs = pair_costs(table)
    scores, is_target = detection_trials(table)
    rate, threshold = eer_with_threshold(scores, is_target)
    return MetricReport(
        cavg=float(np.mean([pair.cost for pair in costs])),
        eer=rate,
        eer_threshold=threshold,
        pair_costs=costs,
        languages=list(table.lang_names),
        num_utterances=len(table.truth),
    )
