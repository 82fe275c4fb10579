import numpy as np
import shapely

from models.box import Box7, boxes_to_array


def bev_corners(boxes: np.ndarray) -> np.ndarray:
    """Counter-clockwise footprint corners [..., 4, 2] of boxes [..., 7]"""
    boxes = np.asarray(boxes, dtype=np.float64)
    half_l, half_w = boxes[..., 3:4] / 2.0, boxes[..., 4:5] / 2.0
    local_x = np.concatenate([half_l, -half_l, -half_l, half_l], axis=-1)
    local_y = np.concatenate([half_w, half_w, -half_w, -half_w], axis=-1)
    cos, sin = np.cos(boxes[..., 6:7]), np.sin(boxes[..., 6:7])
    x = boxes[..., 0:1] + local_x * cos - local_y * sin
    y = boxes[..., 1:2] + local_x * sin + local_y * cos
    return np.stack([x, y], axis=-1)


def bev_polygons(boxes: np.ndarray) -> np.ndarray:
    return shapely.polygons(bev_corners(boxes))


def _as_array(boxes) -> np.ndarray:
    if isinstance(boxes, Box7):
        return boxes.as_array()[None]
    if isinstance(boxes, (list, tuple)) and boxes and isinstance(boxes[0], Box7):
        return boxes_to_array(boxes)
    return np.asarray(boxes, dtype=np.float64).reshape(-1, 7)


def bev_intersection_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return shapely.area(shapely.intersection(bev_polygons(a)[:, None], bev_polygons(b)[None, :]))


def bev_iou_matrix(a, b) -> np.ndarray:
    a, b = _as_array(a), _as_array(b)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    inter = bev_intersection_matrix(a, b)
    area_a = a[:, 3] * a[:, 4]
    area_b = b[:, 3] * b[:, 4]
    return inter / (area_a[:, None] + area_b[None, :] - inter)


def iou_3d_matrix(a, b) -> np.ndarray:
    """BEV intersection times vertical overlap, over the volume union"""
    a, b = _as_array(a), _as_array(b)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    inter_bev = bev_intersection_matrix(a, b)
    top = np.minimum(a[:, None, 2] + a[:, None, 5] / 2.0, b[None, :, 2] + b[None, :, 5] / 2.0)
    bottom = np.maximum(a[:, None, 2] - a[:, None, 5] / 2.0, b[None, :, 2] - b[None, :, 5] / 2.0)
    inter = inter_bev * np.maximum(top - bottom, 0.0)
    volume_a = a[:, 3] * a[:, 4] * a[:, 5]
    volume_b = b[:, 3] * b[:, 4] * b[:, 5]
    return inter / (volume_a[:, None] + volume_b[None, :] - inter)


def bev_iou(a: Box7, b: Box7) -> float:
    return float(bev_iou_matrix(a, b)[0, 0])


def iou_3d(a: Box7, b: Box7) -> float:
    return float(iou_3d_matrix(a, b)[0, 0])
