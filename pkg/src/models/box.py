import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from errors import DimensionError
from utils import wrap_angle


@dataclass(frozen=True)
class Box7:
    """Oriented 3D box: center (x, y, z), dims (l, w, h) in meters, heading theta in [-pi, pi)"""
    x: float
    y: float
    z: float
    l: float
    w: float
    h: float
    theta: float

    def __post_init__(self):
        if not (self.l > 0 and self.w > 0 and self.h > 0):
            raise DimensionError(f"box dims must be positive, got ({self.l}, {self.w}, {self.h})")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @classmethod
    def from_array(cls, values: Iterable[float]) -> 'Box7':
        values = [float(v) for v in values]
        if len(values) != 7:
            raise DimensionError(f"a box needs 7 values, got {len(values)}")
        return cls(*values)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.l, self.w, self.h, self.theta], dtype=np.float64)

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    @property
    def distance(self) -> float:
        return math.sqrt(self.x ** 2 + self.y ** 2 + self.z ** 2)

    @property
    def volume(self) -> float:
        return self.l * self.w * self.h


def boxes_to_array(boxes: Iterable[Box7]) -> np.ndarray:
    rows = [box.as_array() for box in boxes]
    return np.stack(rows) if rows else np.zeros((0, 7), dtype=np.float64)


def array_to_boxes(array: np.ndarray) -> list[Box7]:
    return [Box7.from_array(row) for row in np.asarray(array).reshape(-1, 7)]
