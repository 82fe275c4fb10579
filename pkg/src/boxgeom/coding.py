import logging
import math
from dataclasses import dataclass

import numpy as np

from models.box import Box7
from models.config import BinConfig

TWO_PI = 2.0 * math.pi
# decoded head dims stay within e^(+-4) of the anchor
MAX_LOG_DIM = 4.0


@dataclass(frozen=True)
class BoxTargets:
    """Bin-based regression targets of boxes relative to anchor points, one row per (point, box) pair.

    Location residuals are in units of the bin size and heading residuals in units of half a heading bin, so every
    residual of an in-range target lies in [-0.5, 0.5] or [-1, 1]. `clamped` marks targets beyond the search range.
    """
    x_bin: np.ndarray
    y_bin: np.ndarray
    x_res: np.ndarray
    y_res: np.ndarray
    z_res: np.ndarray
    log_dims: np.ndarray
    heading_bin: np.ndarray
    heading_res: np.ndarray
    clamped: np.ndarray

    def __len__(self) -> int:
        return len(self.x_bin)


def _location_bins(delta: np.ndarray, bins: BinConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    shifted = delta + bins.search_range
    index = np.floor(shifted / bins.bin_size).astype(np.int64)
    clamped = (index < 0) | (index >= bins.loc_bins)
    index = np.clip(index, 0, bins.loc_bins - 1)
    residual = np.clip((shifted - (index + 0.5) * bins.bin_size) / bins.bin_size, -0.5, 0.5)
    return index, residual, clamped


def heading_bins(theta: np.ndarray, n_bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Bins centred on multiples of 2pi / n_bins; residual in units of half a bin"""
    width = TWO_PI / n_bins
    shifted = np.mod(np.asarray(theta, dtype=np.float64) + width / 2.0, TWO_PI)
    index = np.minimum(np.floor(shifted / width).astype(np.int64), n_bins - 1)
    return index, (shifted - (index + 0.5) * width) / (width / 2.0)


def heading_from_bins(index: np.ndarray, residual: np.ndarray, n_bins: int) -> np.ndarray:
    width = TWO_PI / n_bins
    theta = index * width + residual * (width / 2.0)
    return np.mod(theta + math.pi, TWO_PI) - math.pi


def encode_boxes(points: np.ndarray, boxes: np.ndarray, bins: BinConfig) -> BoxTargets:
    """Encodes boxes [P, 7] relative to anchor points [P, 3]"""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 7)
    x_bin, x_res, x_clamped = _location_bins(boxes[:, 0] - points[:, 0], bins)
    y_bin, y_res, y_clamped = _location_bins(boxes[:, 1] - points[:, 1], bins)
    h_bin, h_res = heading_bins(boxes[:, 6], bins.heading_bins)
    clamped = x_clamped | y_clamped
    if clamped.any():
        logging.getLogger(__name__).warning("%s box targets lie outside the %.1f m search range",
                                            int(clamped.sum()), bins.search_range)
    return BoxTargets(x_bin, y_bin, x_res, y_res, boxes[:, 2] - points[:, 2],
                      np.log(boxes[:, 3:6] / np.array(bins.anchor)), h_bin, h_res, clamped)


def decode_boxes(points: np.ndarray, targets: BoxTargets, bins: BinConfig) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    offset = bins.bin_size / 2.0 - bins.search_range
    x = points[:, 0] + targets.x_bin * bins.bin_size + offset + targets.x_res * bins.bin_size
    y = points[:, 1] + targets.y_bin * bins.bin_size + offset + targets.y_res * bins.bin_size
    z = points[:, 2] + targets.z_res
    dims = np.exp(targets.log_dims) * np.array(bins.anchor)
    theta = heading_from_bins(targets.heading_bin, targets.heading_res, bins.heading_bins)
    return np.column_stack([x, y, z, dims, theta])


def encode_box(point_xyz, box: Box7, bins: BinConfig) -> BoxTargets:
    return encode_boxes(np.asarray(point_xyz)[None], box.as_array()[None], bins)


def decode_box(point_xyz, targets: BoxTargets, bins: BinConfig) -> Box7:
    return Box7.from_array(decode_boxes(np.asarray(point_xyz)[None], targets, bins)[0])


@dataclass(frozen=True)
class BoxHeadLayout:
    """Channel layout of the per-pixel box head: x, y and heading bin logits, then the matching per-bin residuals,
    then the z residual and the three log-dimension ratios"""
    loc_bins: int
    heading_bins: int

    @classmethod
    def from_bins(cls, bins: BinConfig) -> 'BoxHeadLayout':
        return cls(bins.loc_bins, bins.heading_bins)

    def __span(self, start: int, length: int) -> slice:
        return slice(start, start + length)

    @property
    def x_logits(self) -> slice:
        return self.__span(0, self.loc_bins)

    @property
    def y_logits(self) -> slice:
        return self.__span(self.loc_bins, self.loc_bins)

    @property
    def h_logits(self) -> slice:
        return self.__span(2 * self.loc_bins, self.heading_bins)

    @property
    def x_res(self) -> slice:
        return self.__span(2 * self.loc_bins + self.heading_bins, self.loc_bins)

    @property
    def y_res(self) -> slice:
        return self.__span(3 * self.loc_bins + self.heading_bins, self.loc_bins)

    @property
    def h_res(self) -> slice:
        return self.__span(4 * self.loc_bins + self.heading_bins, self.heading_bins)

    @property
    def z_res(self) -> int:
        return 4 * self.loc_bins + 2 * self.heading_bins

    @property
    def dims(self) -> slice:
        return self.__span(self.z_res + 1, 3)

    @property
    def channels(self) -> int:
        return self.z_res + 4

    def targets_of(self, head: np.ndarray) -> BoxTargets:
        """Reads argmax bins and their residuals from head rows [P, channels]"""
        rows = np.arange(len(head))
        x_bin = np.argmax(head[:, self.x_logits], axis=1)
        y_bin = np.argmax(head[:, self.y_logits], axis=1)
        h_bin = np.argmax(head[:, self.h_logits], axis=1)
        return BoxTargets(x_bin, y_bin,
                          head[:, self.x_res][rows, x_bin], head[:, self.y_res][rows, y_bin],
                          head[:, self.z_res], np.clip(head[:, self.dims], -MAX_LOG_DIM, MAX_LOG_DIM),
                          h_bin, head[:, self.h_res][rows, h_bin],
                          np.zeros(len(head), dtype=bool))

    def decode(self, head: np.ndarray, points: np.ndarray, bins: BinConfig) -> np.ndarray:
        return decode_boxes(points, self.targets_of(head), bins)
