import logging
import math

import numpy as np

from literals import CHANNELS
from models.range_image import LaserCalibration, PointCloud, RangeImage

TWO_PI = 2.0 * math.pi


def wrap_column(c, width: int):
    """Continuous column wrap to [0, width)"""
    wrapped = np.mod(c, width)
    # np.mod can round tiny negatives up to exactly `width`
    wrapped = np.where(wrapped >= width, wrapped - width, wrapped)
    return float(wrapped) if np.ndim(wrapped) == 0 else wrapped


def clamp_row(r, height: int):
    clamped = np.clip(r, 0.0, height - 1)
    return float(clamped) if np.ndim(clamped) == 0 else clamped


def azimuth_of(xyz: np.ndarray) -> np.ndarray:
    azimuth = np.mod(np.arctan2(xyz[..., 1], xyz[..., 0]), TWO_PI)
    return np.where(azimuth >= TWO_PI, azimuth - TWO_PI, azimuth)


def assign_lasers(xyz: np.ndarray, calib: LaserCalibration) -> tuple[np.ndarray, np.ndarray]:
    """Laser id by smallest |predicted z - observed z| (lowest index on ties) and azimuth in [0, 2pi)"""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    ground = np.hypot(xyz[:, 0], xyz[:, 1])
    predicted = calib.heights[None, :] + ground[:, None] * np.tan(calib.inclinations)[None, :]
    laser_ids = np.argmin(np.abs(predicted - xyz[:, 2:3]), axis=1)
    return laser_ids, azimuth_of(xyz)


def assign_laser(point, calib: LaserCalibration) -> tuple[int, float]:
    laser_ids, azimuths = assign_lasers(np.asarray(point, dtype=np.float64)[:3], calib)
    return int(laser_ids[0]), float(azimuths[0])


def azimuth_columns(azimuths: np.ndarray, steps: int) -> np.ndarray:
    return np.minimum(np.floor(azimuths / TWO_PI * steps).astype(np.int64), steps - 1)


def build_range_image(cloud: PointCloud, calib: LaserCalibration) -> RangeImage:
    """Projects a cloud onto the L x A grid of a calibration, keeping the closest point per pixel"""
    logger = logging.getLogger(__name__)
    height, width = calib.n_lasers, calib.azimuth_steps
    image = RangeImage.empty(height, width)
    if len(cloud) == 0:
        return image

    xyz = cloud.xyz
    laser_ids, azimuths = assign_lasers(xyz, calib)
    columns = azimuth_columns(azimuths, width)
    ranges = np.linalg.norm(xyz, axis=1)
    cells = laser_ids * width + columns

    # sort by cell, then range, then input index: the first entry of each cell wins
    order = np.lexsort((np.arange(len(cells)), ranges, cells))
    sorted_cells = cells[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_cells[1:] != sorted_cells[:-1]
    kept = order[first]
    logger.debug("projected %s points onto %s pixels (%s collisions)", len(cells), len(kept), len(cells) - len(kept))

    rows, cols = laser_ids[kept], columns[kept]
    data = image.data
    data[rows, cols, CHANNELS["range"]] = ranges[kept]
    data[rows, cols, CHANNELS["intensity"]] = cloud.intensity[kept]
    data[rows, cols, CHANNELS["inclination"]] = calib.inclinations[rows]
    data[rows, cols, CHANNELS["azimuth"]] = azimuths[kept]
    data[rows, cols, CHANNELS["x"]:CHANNELS["z"] + 1] = xyz[kept]
    image.valid[rows, cols] = True
    return image


def image_to_cloud(image: RangeImage) -> PointCloud:
    return PointCloud(np.column_stack([image.xyz[image.valid], image.channel("intensity")[image.valid]]))
