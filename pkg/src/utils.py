import math
import re

import numpy as np

from errors import NonFiniteError, UsageError

SIZE_PATTERN = re.compile(r"^\s*(\d+)\s*[xX]\s*(\d+)\s*$")


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for (seed, *keys); the same tuple always yields the same stream"""
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def draw_indices(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """k uniform draws from range(n): without replacement when n >= k, with replacement otherwise"""
    if n == 0 or k == 0:
        return np.zeros(0, dtype=np.int64)
    return np.sort(rng.choice(n, size=k, replace=n < k))


def wrap_angle(theta):
    """Wraps radians to [-pi, pi)"""
    wrapped = np.mod(np.asarray(theta, dtype=np.float64) + math.pi, 2.0 * math.pi) - math.pi
    wrapped = np.where(wrapped >= math.pi, wrapped - 2.0 * math.pi, wrapped)
    return float(wrapped) if np.ndim(wrapped) == 0 else wrapped


def ensure_finite(stage: str, *arrays: np.ndarray):
    for array in arrays:
        if not np.all(np.isfinite(array)):
            raise NonFiniteError(stage)


def parse_size(text: str) -> tuple[int, int]:
    match = SIZE_PATTERN.match(text)
    if match is None:
        raise UsageError(f"size must look like HxW, got '{text}'")
    height, width = int(match.group(1)), int(match.group(2))
    if height < 1 or width < 1:
        raise UsageError(f"size must be positive, got '{text}'")
    return height, width


def parse_pixels(text: str) -> list[tuple[int, int]]:
    """Parses 'r,c;r,c' into pixel tuples"""
    pixels = []
    for chunk in filter(None, (part.strip() for part in text.split(";"))):
        row, _, col = chunk.partition(",")
        try:
            pixels.append((int(row), int(col)))
        except ValueError:
            raise UsageError(f"pixel must look like row,col, got '{chunk}'") from None
    if not pixels:
        raise UsageError("at least one pixel is required")
    return pixels
