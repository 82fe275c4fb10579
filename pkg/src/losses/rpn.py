import logging

import numpy as np

from boxgeom.coding import BoxHeadLayout, BoxTargets
from losses.elementwise import smooth_l1, softmax_cross_entropy
from losses.focal import focal_loss_logits
from losses.term import LossTerm
from models.config import FocalConfig
from models.targets import RPNTargets


def rpn_cls_loss(fg_logits: np.ndarray, top_logits: np.ndarray, left_logits: np.ndarray, targets: RPNTargets,
                 cfg: FocalConfig = FocalConfig()) -> LossTerm:
    """Foreground, top-similarity and left-similarity focal losses summed, over the number of valid pixels"""
    n_valid = targets.n_valid
    if n_valid == 0:
        logging.getLogger(__name__).warning("rpn classification loss over a range image without valid pixels")
        zeros = np.zeros_like(fg_logits)
        return LossTerm(0.0, {"fg": zeros, "top": zeros.copy(), "left": zeros.copy()}, empty=True)

    value = 0.0
    grads = {}
    for name, logits, labels, mask in (("fg", fg_logits, targets.fg, targets.valid),
                                       ("top", top_logits, targets.top, targets.top_mask),
                                       ("left", left_logits, targets.left, targets.left_mask)):
        loss, grad = focal_loss_logits(logits, labels, cfg)
        value += float(np.sum(loss[mask]))
        grads[name] = np.where(mask, grad, 0.0) / n_valid
    return LossTerm(value / n_valid, grads)


def bin_loss(head: np.ndarray, targets: BoxTargets, layout: BoxHeadLayout) -> tuple[np.ndarray, np.ndarray]:
    """Per-row bin loss of head rows [P, channels]: cross-entropy over the x, y and heading bins, smooth-L1 on the
    residuals of the target bins, the z residual and the log dims"""
    rows = np.arange(len(head))
    loss = np.zeros(len(head))
    grad = np.zeros_like(head)
    for logits, residuals, index, residual in ((layout.x_logits, layout.x_res, targets.x_bin, targets.x_res),
                                               (layout.y_logits, layout.y_res, targets.y_bin, targets.y_res),
                                               (layout.h_logits, layout.h_res, targets.heading_bin,
                                                targets.heading_res)):
        ce, d_logits = softmax_cross_entropy(head[:, logits], index)
        loss += ce
        grad[:, logits] += d_logits
        columns = residuals.start + index
        value, d_value = smooth_l1(head[rows, columns] - residual)
        loss += value
        grad[rows, columns] += d_value
    value, d_value = smooth_l1(head[:, layout.z_res] - targets.z_res)
    loss += value
    grad[:, layout.z_res] += d_value
    value, d_value = smooth_l1(head[:, layout.dims] - targets.log_dims)
    loss += value.sum(axis=1)
    grad[:, layout.dims] += d_value
    return loss, grad


def rpn_box_loss(box_head: np.ndarray, targets: RPNTargets, layout: BoxHeadLayout) -> LossTerm:
    """Sum over foreground pixels of the bin loss weighted by 1 / n_i, over the number of ground-truth boxes"""
    grad = np.zeros_like(box_head)
    n_boxes = targets.n_gt
    if n_boxes == 0 or len(targets.fg_rows) == 0:
        return LossTerm(0.0, {"box": grad}, empty=True)
    rows, cols = targets.fg_rows, targets.fg_cols
    weights = targets.fg_weights / n_boxes
    loss, d_head = bin_loss(box_head[rows, cols], targets.box_targets, layout)
    grad[rows, cols] = d_head * weights[:, None]
    return LossTerm(float(np.sum(loss * weights)), {"box": grad})
