import math

import numpy as np

from boxgeom.nms import score_order
from models.config import Interpolation
from models.detection import MatchResult


def heading_weights(heading_error: np.ndarray) -> np.ndarray:
    """max(0, 1 - |dtheta| / pi) per detection; 0 where no heading error is recorded"""
    weights = 1.0 - np.abs(np.asarray(heading_error, dtype=np.float64)) / math.pi
    return np.where(np.isnan(weights), 0.0, np.clip(weights, 0.0, 1.0))


def precision_recall(matches: MatchResult, n_gt: int, weights: np.ndarray = None) -> tuple[np.ndarray, np.ndarray]:
    """Precision and recall after each detection in descending score order.

    True positives count `weights` toward precision and one toward recall.
    """
    order = score_order(matches.scores)
    tp = matches.tp[order]
    hits = tp.astype(np.float64)
    weighted = hits if weights is None else np.where(tp, np.asarray(weights)[order], 0.0)
    ranks = np.arange(1, len(order) + 1)
    return np.cumsum(weighted) / ranks, np.cumsum(hits) / max(n_gt, 1)


def interpolated_area(precision: np.ndarray, recall: np.ndarray, interpolation: Interpolation = "all") -> float:
    match interpolation:
        case "all":
            mrec = np.concatenate([[0.0], recall, [1.0]])
            mpre = np.concatenate([[0.0], precision, [0.0]])
            envelope = np.maximum.accumulate(mpre[::-1])[::-1]
            return float(np.sum(np.diff(mrec) * envelope[1:]))
        case "r11" | "r40":
            thresholds = np.linspace(0.0, 1.0, 11) if interpolation == "r11" else np.linspace(1.0 / 40, 1.0, 40)
            values = [precision[recall >= t].max() if np.any(recall >= t) else 0.0 for t in thresholds]
            return float(np.mean(values))
        case _:
            raise ValueError(f"unknown interpolation {interpolation}")


def average_precision(matches: MatchResult, n_gt: int, interpolation: Interpolation = "all") -> float:
    """Area under the precision envelope; NaN when there is no ground truth"""
    if n_gt == 0:
        return math.nan
    if len(matches) == 0:
        return 0.0
    precision, recall = precision_recall(matches, n_gt)
    return interpolated_area(precision, recall, interpolation)


def average_precision_heading(matches: MatchResult, n_gt: int, interpolation: Interpolation = "all") -> float:
    if n_gt == 0:
        return math.nan
    if len(matches) == 0:
        return 0.0
    precision, recall = precision_recall(matches, n_gt, heading_weights(matches.heading_error))
    return interpolated_area(precision, recall, interpolation)
