import logging
from typing import Optional

import numpy as np

from boxgeom.iou import bev_iou_matrix


def score_order(scores: np.ndarray) -> np.ndarray:
    """Indices by descending score, lower index first on equal scores"""
    return np.lexsort((np.arange(len(scores)), -np.asarray(scores, dtype=np.float64)))


def nms(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float, max_keep: Optional[int] = None) -> np.ndarray:
    """Greedy BEV non-maximum suppression; returns kept indices in descending-score order"""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 7)
    order = score_order(scores)
    max_keep = len(order) if max_keep is None else max_keep
    # boxes whose centers are farther apart than their half-diagonals cannot overlap
    radius = 0.5 * np.hypot(boxes[:, 3], boxes[:, 4])
    alive = np.ones(len(order), dtype=bool)
    kept = []
    for position, index in enumerate(order):
        if len(kept) >= max_keep:
            break
        if not alive[position]:
            continue
        kept.append(index)
        rest = position + 1 + np.flatnonzero(alive[position + 1:])
        if len(rest) == 0:
            continue
        others = order[rest]
        near = np.hypot(boxes[others, 0] - boxes[index, 0], boxes[others, 1] - boxes[index, 1]) \
            < radius[others] + radius[index]
        if not near.any():
            continue
        overlap = bev_iou_matrix(boxes[index], boxes[others[near]])[0]
        alive[rest[near][overlap > iou_threshold]] = False
    logging.getLogger(__name__).debug("nms kept %s of %s boxes", len(kept), len(order))
    return np.array(kept, dtype=np.int64)
