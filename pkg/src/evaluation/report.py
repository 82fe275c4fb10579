import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from evaluation.matching import match_boxes
from evaluation.metrics import average_precision, average_precision_heading
from models import FrameId
from models.box import boxes_to_array
from models.config import EvalConfig
from models.detection import Detection, GroundTruth, MatchResult
from models.run import BucketRow

OVERALL = "all"
REPORT_HEADER = f"{'range':<12} {'n_gt':>6} {'n_det':>6} {'AP':>8} {'APH':>8}"


@dataclass(frozen=True)
class FrameMatch:
    result: MatchResult
    # range bucket of every detection and of every ground truth of the frame
    det_buckets: np.ndarray
    gt_buckets: np.ndarray


def _buckets(boxes: np.ndarray, cfg: EvalConfig) -> np.ndarray:
    distances = np.linalg.norm(boxes[:, :3], axis=1)
    return np.array([cfg.bucket_of(float(d)) for d in distances], dtype=np.int64)


def match_frame(dets: Sequence[Detection], gts: Sequence[GroundTruth], cfg: EvalConfig) -> FrameMatch:
    det_boxes = boxes_to_array(d.box for d in dets)
    gt_boxes = boxes_to_array(g.box for g in gts)
    result = match_boxes(det_boxes, np.array([d.score for d in dets], dtype=np.float64), gt_boxes,
                         cfg.iou_threshold, cfg.mode)
    gt_buckets = _buckets(gt_boxes, cfg)
    # matched detections follow their ground truth, the rest their own center range
    det_buckets = _buckets(det_boxes, cfg)
    det_buckets[result.tp] = gt_buckets[result.matched_gt[result.tp]]
    return FrameMatch(result, det_buckets, gt_buckets)


def group_by_frame(dets: Sequence[Detection],
                   gts: Sequence[GroundTruth]) -> list[tuple[FrameId, list[Detection], list[GroundTruth]]]:
    frames: dict[FrameId, tuple[list[Detection], list[GroundTruth]]] = {}
    for det in dets:
        frames.setdefault(det.frame, ([], []))[0].append(det)
    for gt in gts:
        frames.setdefault(gt.frame, ([], []))[1].append(gt)
    return [(frame, *frames[frame]) for frame in sorted(frames)]


def bucketed_report(dets: Sequence[Detection], gts: Sequence[GroundTruth], cfg: EvalConfig,
                    threads: int = 1) -> list[BucketRow]:
    """AP and APH per range bucket, then over everything. Frames are matched in parallel and reduced in frame
    order, so the result does not depend on `threads`."""
    logger = logging.getLogger(__name__)
    frames = group_by_frame(dets, gts)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            matches = list(executor.map(lambda f: match_frame(f[1], f[2], cfg), frames))
    else:
        matches = [match_frame(d, g, cfg) for _, d, g in frames]
    logger.debug("matched %s frames (%s detections, %s ground truths)", len(frames), len(dets), len(gts))

    combined = MatchResult.concatenate([m.result for m in matches])
    det_buckets = np.concatenate([m.det_buckets for m in matches]) if matches else np.zeros(0, dtype=np.int64)
    gt_buckets = np.concatenate([m.gt_buckets for m in matches]) if matches else np.zeros(0, dtype=np.int64)

    rows = []
    for bucket in range(len(cfg.bucket_edges)):
        n_gt = int(np.count_nonzero(gt_buckets == bucket))
        subset = combined.subset(det_buckets == bucket, n_gt)
        rows.append(_row(cfg.bucket_label(bucket), subset, cfg))
    rows.append(_row(OVERALL, combined, cfg))
    return rows


def _row(label: str, matches: MatchResult, cfg: EvalConfig) -> BucketRow:
    return BucketRow(label, matches.n_gt, len(matches), average_precision(matches, matches.n_gt, cfg.interpolation),
                     average_precision_heading(matches, matches.n_gt, cfg.interpolation))


def format_report(rows: Sequence[BucketRow]) -> str:
    return "\n".join([REPORT_HEADER, *(row.format() for row in rows)])
