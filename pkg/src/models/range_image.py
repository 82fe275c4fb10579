import math
from dataclasses import dataclass

import numpy as np

from errors import CalibrationError, DimensionError
from literals import CHANNELS


@dataclass(frozen=True)
class PointCloud:
    """Unordered LiDAR returns, one (x, y, z, intensity) row per point"""
    points: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 4).copy()
        points[:, 3] = np.clip(points[:, 3], 0.0, 1.0)
        object.__setattr__(self, "points", points)

    @classmethod
    def from_xyz(cls, xyz: np.ndarray, intensity=0.0) -> 'PointCloud':
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        return cls(np.column_stack([xyz, np.broadcast_to(intensity, (len(xyz),))]))

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class LaserCalibration:
    """Per-laser inclination (rad) and height (m), sorted by inclination descending"""
    inclinations: np.ndarray
    heights: np.ndarray
    azimuth_steps: int

    def __post_init__(self):
        inclinations = np.asarray(self.inclinations, dtype=np.float64).reshape(-1)
        heights = np.asarray(self.heights, dtype=np.float64).reshape(-1)
        if len(inclinations) != len(heights) or len(inclinations) == 0:
            raise DimensionError("a calibration needs one height per inclination and at least one laser")
        if np.any(np.diff(inclinations) >= 0):
            raise CalibrationError("laser inclinations must be strictly descending")
        if self.azimuth_steps < 1:
            raise DimensionError(f"azimuth_steps must be positive, got {self.azimuth_steps}")
        object.__setattr__(self, "inclinations", inclinations)
        object.__setattr__(self, "heights", heights)

    @property
    def n_lasers(self) -> int:
        return len(self.inclinations)

    def to_dict(self) -> dict:
        return {
            "azimuth_steps": self.azimuth_steps,
            "lasers": [{"inclination": float(incl), "height": float(height)}
                       for incl, height in zip(self.inclinations, self.heights)],
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'LaserCalibration':
        lasers = data["lasers"]
        return cls(np.array([laser["inclination"] for laser in lasers]),
                   np.array([laser["height"] for laser in lasers]),
                   int(data["azimuth_steps"]))


@dataclass(frozen=True)
class AngularResolution:
    rad_per_pixel_row: float
    rad_per_pixel_col: float

    def __post_init__(self):
        if not (self.rad_per_pixel_row > 0 and self.rad_per_pixel_col > 0):
            raise DimensionError("angular resolution must be positive on both axes")

    @classmethod
    def from_calibration(cls, calib: LaserCalibration) -> 'AngularResolution':
        col = 2.0 * math.pi / calib.azimuth_steps
        if calib.n_lasers < 2:
            return cls(col, col)
        row = float(calib.inclinations[0] - calib.inclinations[-1]) / (calib.n_lasers - 1)
        return cls(row, col)

    @classmethod
    def from_range_image(cls, image: 'RangeImage') -> 'AngularResolution':
        """Row resolution from a line fit of the inclination channel against row index"""
        col = 2.0 * math.pi / image.width
        rows, _ = np.nonzero(image.valid)
        inclinations = image.channel("inclination")[image.valid]
        if len(np.unique(rows)) < 2:
            return cls(col, col)
        slope, _ = np.polyfit(rows.astype(np.float64), inclinations, 1)
        return cls(abs(float(slope)) or col, col)

    def downsampled(self, row_factor: int, col_factor: int) -> 'AngularResolution':
        return AngularResolution(self.rad_per_pixel_row * row_factor, self.rad_per_pixel_col * col_factor)


@dataclass(frozen=True)
class RangeImage:
    """H x W x 8 channel planes in CHANNELS order plus a validity mask; invalid pixels hold zeros"""
    data: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        valid = np.asarray(self.valid, dtype=bool)
        if data.ndim != 3 or data.shape[2] != len(CHANNELS):
            raise DimensionError(f"range image data must be H x W x {len(CHANNELS)}, got {data.shape}")
        if valid.shape != data.shape[:2]:
            raise DimensionError(f"validity mask {valid.shape} does not match image {data.shape[:2]}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def empty(cls, height: int, width: int) -> 'RangeImage':
        return cls(np.zeros((height, width, len(CHANNELS))), np.zeros((height, width), dtype=bool))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def ranges(self) -> np.ndarray:
        return self.data[:, :, CHANNELS["range"]]

    @property
    def xyz(self) -> np.ndarray:
        return self.data[:, :, CHANNELS["x"]:CHANNELS["z"] + 1]

    def channel(self, name: str) -> np.ndarray:
        return self.data[:, :, CHANNELS[name]]

    def channel_name(self, index: int) -> str:
        return CHANNELS.inverse[index]
