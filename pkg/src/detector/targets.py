import numpy as np

from boxgeom.coding import encode_boxes, heading_bins
from boxgeom.frames import to_canonical
from models.box import Box7
from models.config import BinConfig
from models.range_image import RangeImage
from models.targets import RCNNTargets, RPNTargets
from utils import wrap_angle

# slack on box faces so surface returns count as inside
SURFACE_MARGIN = 1e-6


def pixel_box_index(image: RangeImage, gt_boxes: np.ndarray) -> np.ndarray:
    """Index of the first box containing each valid pixel's point, -1 elsewhere"""
    gt_index = np.full((image.height, image.width), -1, dtype=np.int64)
    rows, cols = np.nonzero(image.valid)
    points = image.xyz[rows, cols]
    unassigned = np.ones(len(points), dtype=bool)
    for index, row in enumerate(np.asarray(gt_boxes).reshape(-1, 7)):
        box = Box7.from_array(row)
        local = to_canonical(points, box)
        half = np.array([box.l, box.w, box.h]) / 2.0 + SURFACE_MARGIN
        inside = unassigned & np.all(np.abs(local) <= half, axis=1)
        gt_index[rows[inside], cols[inside]] = index
        unassigned &= ~inside
    return gt_index


def _same_box(gt_index: np.ndarray, neighbour: np.ndarray) -> np.ndarray:
    return (gt_index >= 0) & (gt_index == neighbour)


def build_rpn_targets(image: RangeImage, gt_boxes: np.ndarray, bins: BinConfig) -> RPNTargets:
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 7)
    valid = image.valid
    gt_index = pixel_box_index(image, gt_boxes)
    fg = gt_index >= 0

    # rows do not wrap, columns wrap around the azimuth
    top_index = np.full_like(gt_index, -1)
    top_index[1:] = gt_index[:-1]
    top_mask = np.zeros_like(valid)
    top_mask[1:] = valid[1:] & valid[:-1]
    left_index = np.roll(gt_index, 1, axis=1)
    left_mask = valid & np.roll(valid, 1, axis=1)

    fg_rows, fg_cols = np.nonzero(fg)
    box_targets = encode_boxes(image.xyz[fg_rows, fg_cols], gt_boxes[gt_index[fg_rows, fg_cols]], bins)
    return RPNTargets(valid=valid, fg=fg,
                      top=_same_box(gt_index, top_index), top_mask=top_mask,
                      left=_same_box(gt_index, left_index), left_mask=left_mask,
                      gt_index=gt_index,
                      points_per_box=np.bincount(gt_index[fg], minlength=len(gt_boxes)),
                      fg_rows=fg_rows, fg_cols=fg_cols, box_targets=box_targets, gt_boxes=gt_boxes)


def build_rcnn_targets(proposals: np.ndarray, labels: np.ndarray, matched: np.ndarray, gt_boxes: np.ndarray,
                       heading_bin_count: int) -> RCNNTargets:
    """Refinement targets of positive proposals in their own canonical frame; zeros for negatives"""
    m = len(proposals)
    center = np.zeros((m, 3))
    log_dims = np.zeros((m, 3))
    relative = np.zeros(m)
    positive = np.asarray(labels, dtype=bool)
    for k in np.flatnonzero(positive):
        proposal = Box7.from_array(proposals[k])
        gt = gt_boxes[matched[k]]
        center[k] = to_canonical(gt[None, :3], proposal)[0]
        log_dims[k] = np.log(gt[3:6] / proposals[k, 3:6])
        relative[k] = wrap_angle(gt[6] - proposals[k, 6])
    bin_index, residual = heading_bins(relative, heading_bin_count)
    return RCNNTargets(labels=positive.astype(np.float64), positive=positive, center=center, log_dims=log_dims,
                       heading_bin=bin_index, heading_res=residual)
