import json
import logging
import os
import struct
from typing import Union

import numpy as np

from errors import FormatError, UsageError
from literals import CHANNELS, POINT_RECORD_BYTES, RANGE_IMAGE_DTYPE_FLOAT32, RANGE_IMAGE_MAGIC
from models.range_image import LaserCalibration, PointCloud, RangeImage

type PathLike = Union[str, os.PathLike]

"""
magic, H, W, C, dtype tag
"""
RANGE_IMAGE_HEADER = struct.Struct("<4sIIIB")


def _read_bytes(path: PathLike) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except FileNotFoundError:
        raise UsageError(f"file not found: {path}") from None


def read_point_cloud(path: PathLike) -> PointCloud:
    """Reads little-endian float32 (x, y, z, intensity) records, 16 bytes per point"""
    payload = _read_bytes(path)
    complete = len(payload) - len(payload) % POINT_RECORD_BYTES
    if complete != len(payload):
        raise FormatError(f"{path}: trailing partial point record of {len(payload) - complete} bytes", complete)
    records = np.frombuffer(payload, dtype="<f4").reshape(-1, 4).astype(np.float64)
    bad = np.flatnonzero(~np.all(np.isfinite(records[:, :3]), axis=1))
    if len(bad):
        raise FormatError(f"{path}: non-finite coordinates in point {bad[0]}", int(bad[0]) * POINT_RECORD_BYTES)
    logging.getLogger(__name__).debug("read %s points from %s", len(records), path)
    return PointCloud(records)


def write_point_cloud(path: PathLike, cloud: PointCloud):
    with open(path, "wb") as f:
        f.write(cloud.points.astype("<f4").tobytes())


def write_range_image(path: PathLike, image: RangeImage):
    header = RANGE_IMAGE_HEADER.pack(RANGE_IMAGE_MAGIC, image.height, image.width, len(CHANNELS),
                                     RANGE_IMAGE_DTYPE_FLOAT32)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(image.data, dtype="<f4").tobytes())
        f.write(image.valid.astype(np.uint8).tobytes())


def read_range_image(path: PathLike) -> RangeImage:
    payload = _read_bytes(path)
    if len(payload) < RANGE_IMAGE_HEADER.size:
        raise FormatError(f"{path}: header needs {RANGE_IMAGE_HEADER.size} bytes", len(payload))
    magic, height, width, channels, dtype_tag = RANGE_IMAGE_HEADER.unpack_from(payload)
    if magic != RANGE_IMAGE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", 0)
    if channels != len(CHANNELS):
        raise FormatError(f"{path}: expected {len(CHANNELS)} channels, got {channels}", 12)
    if dtype_tag != RANGE_IMAGE_DTYPE_FLOAT32:
        raise FormatError(f"{path}: unsupported dtype tag {dtype_tag}", 16)

    offset = RANGE_IMAGE_HEADER.size
    n_values = height * width * channels
    expected = offset + 4 * n_values + height * width
    if len(payload) < expected:
        raise FormatError(f"{path}: truncated, expected {expected} bytes", len(payload))
    data = np.frombuffer(payload, dtype="<f4", count=n_values, offset=offset).reshape(height, width, channels)
    valid = np.frombuffer(payload, dtype=np.uint8, count=height * width, offset=offset + 4 * n_values)
    return RangeImage(data.astype(np.float64), valid.reshape(height, width) != 0)


def write_calibration(path: PathLike, calib: LaserCalibration):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(calib.to_dict(), f, indent=2)
        f.write("\n")


def read_calibration(path: PathLike) -> LaserCalibration:
    payload = _read_bytes(path)
    try:
        return LaserCalibration.from_dict(json.loads(payload))
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON: {e.msg}", e.pos) from None
    except (KeyError, TypeError) as e:
        raise FormatError(f"{path}: calibration is missing field {e}") from None
