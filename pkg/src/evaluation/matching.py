import logging
from typing import Sequence

import numpy as np

from boxgeom.iou import bev_iou_matrix, iou_3d_matrix
from boxgeom.nms import score_order
from models.box import boxes_to_array
from models.config import EvalConfig
from models.detection import Detection, GroundTruth, MatchResult
from utils import wrap_angle


def iou_matrix(dets: np.ndarray, gts: np.ndarray, mode: str) -> np.ndarray:
    match mode:
        case "bev":
            return bev_iou_matrix(dets, gts)
        case "3d":
            return iou_3d_matrix(dets, gts)
        case _:
            raise ValueError(f"unknown IoU mode {mode}")


def match_boxes(det_boxes: np.ndarray, scores: np.ndarray, gt_boxes: np.ndarray, iou_threshold: float,
                mode: str = "3d") -> MatchResult:
    """Greedy matching in descending score order: each detection takes the unmatched ground truth it overlaps most,
    if that overlap reaches the threshold. Results stay aligned with the given detection order."""
    det_boxes = np.asarray(det_boxes, dtype=np.float64).reshape(-1, 7)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 7)
    scores = np.asarray(scores, dtype=np.float64)
    n = len(det_boxes)
    tp = np.zeros(n, dtype=bool)
    matched_gt = np.full(n, -1, dtype=np.int64)
    heading_error = np.full(n, np.nan)
    if n and len(gt_boxes):
        overlaps = iou_matrix(det_boxes, gt_boxes, mode)
        taken = np.zeros(len(gt_boxes), dtype=bool)
        for index in score_order(scores):
            candidates = np.where(taken, -np.inf, overlaps[index])
            best = int(np.argmax(candidates))
            if candidates[best] >= iou_threshold:
                taken[best] = True
                tp[index] = True
                matched_gt[index] = best
                heading_error[index] = wrap_angle(det_boxes[index, 6] - gt_boxes[best, 6])
    return MatchResult(scores, tp, matched_gt, heading_error, len(gt_boxes))


def match(dets: Sequence[Detection], gts: Sequence[GroundTruth], cfg: EvalConfig) -> MatchResult:
    """Matches detections of a single frame; `matched_gt` indexes into `gts`"""
    frames = {d.frame for d in dets} | {g.frame for g in gts}
    if len(frames) > 1:
        logging.getLogger(__name__).warning("matching %s frames as one; use the bucketed report per frame",
                                            len(frames))
    return match_boxes(boxes_to_array(d.box for d in dets), np.array([d.score for d in dets]),
                       boxes_to_array(g.box for g in gts), cfg.iou_threshold, cfg.mode)
