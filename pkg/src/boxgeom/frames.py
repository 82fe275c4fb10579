import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from errors import DimensionError
from models.box import Box7

DEFAULT_GRID = (12, 8, 6)


def to_canonical(points: np.ndarray, box: Box7) -> np.ndarray:
    """World points [N, 3] into the box frame: centered on the box, x along its heading"""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cos, sin = math.cos(box.theta), math.sin(box.theta)
    dx, dy = points[:, 0] - box.x, points[:, 1] - box.y
    return np.column_stack([dx * cos + dy * sin, -dx * sin + dy * cos, points[:, 2] - box.z])


def from_canonical(points: np.ndarray, box: Box7) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cos, sin = math.cos(box.theta), math.sin(box.theta)
    return np.column_stack([box.x + points[:, 0] * cos - points[:, 1] * sin,
                            box.y + points[:, 0] * sin + points[:, 1] * cos,
                            box.z + points[:, 2]])


def points_in_box(points: np.ndarray, box: Box7) -> np.ndarray:
    local = to_canonical(points, box)
    half = np.array([box.l, box.w, box.h]) / 2.0
    return np.all(np.abs(local) <= half, axis=1)


@dataclass(frozen=True)
class PooledBoxFeatures:
    """Features of the points inside one box, pooled on a fixed grid in the box frame"""
    # [gl, gw, gh, C]; empty cells are zero
    values: np.ndarray
    # [gl, gw, gh] points per cell
    counts: np.ndarray
    # per channel: True for max pooling, False for average pooling
    is_max: np.ndarray
    # indices (into the pooled point set) of the points inside the box, and their flat cell ids
    members: np.ndarray
    cells: np.ndarray
    # [n_cells, C] index of the point that won each max-pooled cell, -1 elsewhere
    winners: np.ndarray

    @property
    def grid(self) -> tuple[int, int, int]:
        return self.values.shape[:3]

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.grid))


def grid_cells(local: np.ndarray, box: Box7, grid: Sequence[int] = DEFAULT_GRID) -> np.ndarray:
    """Flat cell id per canonical point: floor binning, the upper edge of the box folded into the last cell"""
    dims = np.array([box.l, box.w, box.h])
    counts = np.array(grid)
    index = np.floor((local + dims / 2.0) / dims * counts).astype(np.int64)
    index = np.clip(index, 0, counts - 1)
    return np.ravel_multi_index(index.T, tuple(grid))


def grid_pool(points: np.ndarray, features: np.ndarray, box: Box7, is_max: Sequence[bool],
              grid: Sequence[int] = DEFAULT_GRID) -> PooledBoxFeatures:
    """Average-pools the channels flagged False and max-pools those flagged True over the points inside `box`"""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    features = np.asarray(features)
    is_max = np.asarray(is_max, dtype=bool)
    if features.shape != (len(points), len(is_max)):
        raise DimensionError(f"grid_pool: features {features.shape} do not match {len(points)} points "
                             f"x {len(is_max)} channels")
    n_cells, channels = int(np.prod(grid)), len(is_max)
    local = to_canonical(points, box)
    half = np.array([box.l, box.w, box.h]) / 2.0
    members = np.flatnonzero(np.all(np.abs(local) <= half, axis=1))
    cells = grid_cells(local[members], box, grid)
    counts = np.bincount(cells, minlength=n_cells)
    values = np.zeros((n_cells, channels), dtype=features.dtype)
    winners = np.full((n_cells, channels), -1, dtype=np.int64)

    occupied = counts > 0
    for channel in np.flatnonzero(~is_max):
        sums = np.bincount(cells, weights=features[members, channel], minlength=n_cells)
        values[occupied, channel] = sums[occupied] / counts[occupied]
    for channel in np.flatnonzero(is_max):
        column = features[members, channel]
        # per cell: largest value first, lowest point index on ties
        order = np.lexsort((members, -column, cells))
        first = np.ones(len(order), dtype=bool)
        first[1:] = cells[order][1:] != cells[order][:-1]
        top = order[first]
        values[cells[top], channel] = column[top]
        winners[cells[top], channel] = members[top]
    return PooledBoxFeatures(values.reshape(*grid, channels), counts.reshape(grid), is_max, members, cells, winners)


def grid_pool_vjp(upstream: np.ndarray, pooled: PooledBoxFeatures, n_points: int) -> np.ndarray:
    """Gradient w.r.t. the pooled point features [n_points, C]"""
    channels = len(pooled.is_max)
    flat = upstream.reshape(pooled.n_cells, channels)
    counts = pooled.counts.reshape(-1)
    d_features = np.zeros((n_points, channels), dtype=upstream.dtype)
    if len(pooled.members) == 0:
        return d_features
    avg = ~pooled.is_max
    d_features[pooled.members[:, None], np.flatnonzero(avg)[None, :]] = \
        flat[pooled.cells][:, avg] / counts[pooled.cells][:, None]
    for channel in np.flatnonzero(pooled.is_max):
        won = pooled.winners[:, channel] >= 0
        d_features[pooled.winners[won, channel], channel] += flat[won, channel]
    return d_features
