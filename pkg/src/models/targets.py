from dataclasses import dataclass

import numpy as np

from boxgeom.coding import BoxTargets


@dataclass(frozen=True)
class RPNTargets:
    """Per-pixel training labels of one range image"""
    valid: np.ndarray
    fg: np.ndarray
    # similarity with the top / left neighbour, defined only where both pixels are valid
    top: np.ndarray
    top_mask: np.ndarray
    left: np.ndarray
    left_mask: np.ndarray
    # index of the box a pixel belongs to, -1 for background
    gt_index: np.ndarray
    # [n_gt] points of each box in the range image
    points_per_box: np.ndarray
    # encoded box of every foreground pixel, in row-major pixel order
    fg_rows: np.ndarray
    fg_cols: np.ndarray
    box_targets: BoxTargets
    gt_boxes: np.ndarray

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    @property
    def n_gt(self) -> int:
        return len(self.gt_boxes)

    @property
    def fg_weights(self) -> np.ndarray:
        """1 / n_i of each foreground pixel"""
        return 1.0 / self.points_per_box[self.gt_index[self.fg_rows, self.fg_cols]]


@dataclass(frozen=True)
class RCNNTargets:
    """Per-proposal labels: IoU class and, for positives, the refinement targets in the proposal frame"""
    labels: np.ndarray
    positive: np.ndarray
    center: np.ndarray
    log_dims: np.ndarray
    heading_bin: np.ndarray
    heading_res: np.ndarray
