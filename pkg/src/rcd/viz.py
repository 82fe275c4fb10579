import csv
import logging
import os
from typing import Iterable, Union

import numpy as np

from literals import PATTERN_CSV_HEADER, SAMPLES_CSV_HEADER
from models.range_image import RangeImage
from rcd.pattern import PatternTransform

type PathLike = Union[str, os.PathLike]
type SampleRow = tuple[int, int, int, float, float]

MARK_VALUE = 255
# brightest value left for the range channel, so marks stay distinguishable
MAX_SHADE = 200


def footprint_rows(transform: PatternTransform, pixels: Iterable[tuple[int, int]]) -> list[SampleRow]:
    """The N sample locations of each requested pixel, one row per sample"""
    rows = []
    for pixel_row, pixel_col in pixels:
        for n, (row, col) in enumerate(transform.locations[pixel_row, pixel_col]):
            rows.append((pixel_row, pixel_col, n, float(row), float(col)))
    return rows


def footprint_extent(transform: PatternTransform, pixel: tuple[int, int]) -> tuple[float, float]:
    """(row, col) pixel extent of the samples of one pixel, columns unwrapped around the pixel"""
    locations = transform.locations[pixel]
    width = transform.sigma.shape[1]
    cols = locations[:, 1] - pixel[1]
    cols = np.where(cols > width / 2, cols - width, np.where(cols < -width / 2, cols + width, cols))
    return float(np.ptp(locations[:, 0])), float(np.ptp(cols))


def write_samples_csv(path: PathLike, rows: list[SampleRow]):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(SAMPLES_CSV_HEADER)
        for pixel_row, pixel_col, n, row, col in rows:
            writer.writerow([pixel_row, pixel_col, n, f"{row:.6f}", f"{col:.6f}"])


def write_pattern_csv(path: PathLike, initial: np.ndarray, learned: np.ndarray):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(PATTERN_CSV_HEADER)
        for n, (start, end) in enumerate(zip(initial, learned)):
            writer.writerow([n, *(f"{v:.8f}" for v in (*start, *end))])


def range_overlay(image: RangeImage, rows: list[SampleRow]) -> np.ndarray:
    """8-bit grey image of the range channel (near is bright, invalid is black) with sample locations marked"""
    logger = logging.getLogger(__name__)
    ranges = image.ranges
    shade = np.zeros(ranges.shape, dtype=np.uint8)
    if image.valid.any():
        near, far = float(ranges[image.valid].min()), float(ranges[image.valid].max())
        scaled = 1.0 - (ranges - near) / max(far - near, 1e-9)
        shade[image.valid] = np.round(40 + scaled[image.valid] * (MAX_SHADE - 40)).astype(np.uint8)
    for _, _, _, row, col in rows:
        r, c = int(round(row)), int(round(col)) % image.width
        if 0 <= r < image.height:
            shade[r, c] = MARK_VALUE
        else:
            logger.warning("sample (%.2f, %.2f) falls outside the image", row, col)
    return shade


def write_pgm(path: PathLike, pixels: np.ndarray):
    """Binary greyscale PGM (P5, maxval 255)"""
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    height, width = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())
