import numpy as np

from losses.elementwise import sigmoid_cross_entropy, smooth_l1, softmax_cross_entropy
from losses.term import LossTerm
from models.targets import RCNNTargets

CENTER = slice(0, 3)
DIMS = slice(3, 6)


def refine_channels(heading_bins: int) -> int:
    return 6 + 2 * heading_bins


def heading_slices(heading_bins: int) -> tuple[slice, slice]:
    return slice(6, 6 + heading_bins), slice(6 + heading_bins, 6 + 2 * heading_bins)


def binary_cross_entropy(scores: np.ndarray, labels: np.ndarray, clamp: float = 1e-7) -> float:
    """Mean binary cross-entropy of probabilities"""
    scores = np.clip(np.asarray(scores, dtype=np.float64), clamp, 1.0 - clamp)
    labels = np.asarray(labels, dtype=np.float64)
    return float(np.mean(-labels * np.log(scores) - (1.0 - labels) * np.log(1.0 - scores)))


def rcnn_cls_loss(logits: np.ndarray, labels: np.ndarray) -> LossTerm:
    """Mean binary cross-entropy of proposal logits [M]"""
    if len(logits) == 0:
        return LossTerm(0.0, {"cls": np.zeros_like(logits)}, empty=True)
    loss, grad = sigmoid_cross_entropy(logits, np.asarray(labels, dtype=np.float64))
    return LossTerm(float(np.mean(loss)), {"cls": grad / len(logits)})


def refine_loss(refine: np.ndarray, targets: RCNNTargets, heading_bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-proposal refinement loss of rows [M, 6 + 2K] and its gradient: smooth-L1 on the canonical-frame center
    and log dims, heading bin cross-entropy plus smooth-L1 on the target bin's residual"""
    logits, residuals = heading_slices(heading_bins)
    rows = np.arange(len(refine))
    grad = np.zeros_like(refine)
    center, d_center = smooth_l1(refine[:, CENTER] - targets.center)
    dims, d_dims = smooth_l1(refine[:, DIMS] - targets.log_dims)
    ce, d_logits = softmax_cross_entropy(refine[:, logits], targets.heading_bin)
    columns = residuals.start + targets.heading_bin
    res, d_res = smooth_l1(refine[rows, columns] - targets.heading_res)
    grad[:, CENTER] = d_center
    grad[:, DIMS] = d_dims
    grad[:, logits] = d_logits
    grad[rows, columns] += d_res
    return center.sum(axis=1) + dims.sum(axis=1) + ce + res, grad


def rcnn_reg_loss(refine: np.ndarray, targets: RCNNTargets, heading_bins: int) -> LossTerm:
    """Refinement loss summed over positive proposals, over the number of proposals"""
    grad = np.zeros_like(refine)
    positive = np.asarray(targets.positive, dtype=bool)
    if not positive.any():
        return LossTerm(0.0, {"refine": grad}, empty=True)
    m = len(refine)
    loss, d_refine = refine_loss(refine, targets, heading_bins)
    grad[positive] = d_refine[positive] / m
    return LossTerm(float(np.sum(loss[positive])) / m, {"refine": grad})
