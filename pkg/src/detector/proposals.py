import logging
from dataclasses import dataclass

import numpy as np

from boxgeom.iou import bev_iou_matrix
from boxgeom.nms import nms
from models.config import RPNConfig
from utils import draw_indices


@dataclass(frozen=True)
class ProposalSet:
    """Scored boxes with the pixel each came from; labels and IoUs are set for training sets only"""
    boxes: np.ndarray
    scores: np.ndarray
    pixels: np.ndarray
    labels: np.ndarray
    iou: np.ndarray
    matched: np.ndarray
    missing_positives: bool = False
    missing_negatives: bool = False

    def __len__(self) -> int:
        return len(self.boxes)

    @property
    def empty(self) -> bool:
        return len(self.boxes) == 0

    def take(self, index: np.ndarray, **flags) -> 'ProposalSet':
        return ProposalSet(self.boxes[index], self.scores[index], self.pixels[index], self.labels[index],
                           self.iou[index], self.matched[index], **flags)


def _candidates(boxes: np.ndarray, scores: np.ndarray, rows: np.ndarray, cols: np.ndarray,
                gt_boxes: np.ndarray) -> ProposalSet:
    candidate_boxes = boxes[rows, cols]
    if len(gt_boxes) and len(candidate_boxes):
        overlaps = bev_iou_matrix(candidate_boxes, gt_boxes)
        matched = np.argmax(overlaps, axis=1)
        iou = overlaps[np.arange(len(candidate_boxes)), matched]
    else:
        matched = np.full(len(candidate_boxes), -1, dtype=np.int64)
        iou = np.zeros(len(candidate_boxes))
    return ProposalSet(candidate_boxes, scores[rows, cols], np.column_stack([rows, cols]).astype(np.int64),
                       np.zeros(len(candidate_boxes), dtype=bool), iou, matched)


def column_best(scores: np.ndarray, valid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pixel of the highest-scoring valid proposal per (image half, column); lowest row wins ties"""
    height, _ = scores.shape
    masked = np.where(valid, scores, -np.inf)
    rows, cols = [], []
    for start, stop in ((0, height // 2), (height // 2, height)):
        if stop <= start:
            continue
        half = masked[start:stop]
        best = np.argmax(half, axis=0)
        columns = np.flatnonzero(np.isfinite(half[best, np.arange(half.shape[1])]))
        rows.append(start + best[columns])
        cols.append(columns)
    return np.concatenate(rows), np.concatenate(cols)


def select_proposals_train(boxes: np.ndarray, scores: np.ndarray, valid: np.ndarray, gt_boxes: np.ndarray,
                           rng: np.random.Generator, config: RPNConfig) -> ProposalSet:
    """Column-wise best proposals of each image half, labelled by BEV IoU, subsampled to a fixed positive and
    negative count (with replacement when a class is short)"""
    logger = logging.getLogger(__name__)
    rows, cols = column_best(scores, valid)
    candidates = _candidates(boxes, scores, rows, cols, np.asarray(gt_boxes).reshape(-1, 7))
    positive = candidates.iou >= config.proposal_iou
    candidates = ProposalSet(candidates.boxes, candidates.scores, candidates.pixels, positive, candidates.iou,
                             candidates.matched)
    positives, negatives = np.flatnonzero(positive), np.flatnonzero(~positive)
    chosen = np.concatenate([positives[draw_indices(len(positives), config.train_positives, rng)],
                             negatives[draw_indices(len(negatives), config.train_negatives, rng)]])
    missing_positives, missing_negatives = len(positives) == 0, len(negatives) == 0
    if missing_positives or missing_negatives:
        logger.warning("proposal set has %s positive and %s negative candidates", len(positives), len(negatives))
    return candidates.take(chosen.astype(np.int64), missing_positives=missing_positives,
                           missing_negatives=missing_negatives)


def select_proposals_infer(boxes: np.ndarray, scores: np.ndarray, valid: np.ndarray,
                           config: RPNConfig) -> ProposalSet:
    """Valid pixels above the score threshold, reduced by NMS to at most `max_proposals`"""
    rows, cols = np.nonzero(valid & (scores >= config.score_threshold))
    candidates = _candidates(boxes, scores, rows, cols, np.zeros((0, 7)))
    kept = nms(candidates.boxes, candidates.scores, config.nms_iou, config.max_proposals)
    return candidates.take(kept)
