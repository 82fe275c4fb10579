from dataclasses import dataclass
from typing import Optional

import numpy as np

from models.range_image import AngularResolution
from rangeimage.projection import wrap_column


def dilation_rate(r, lam: float, range_floor: Optional[float] = None):
    """Dilation angle arctan(lam / r) in radians; non-positive ranges use `range_floor` when one is given"""
    r = np.asarray(r, dtype=np.float64)
    if range_floor is not None:
        r = np.where(r > 0, r, range_floor)
    rate = np.arctan(lam / r)
    return float(rate) if rate.ndim == 0 else rate


def conditioning_range(ranges: np.ndarray, valid: np.ndarray, range_floor: float) -> np.ndarray:
    return np.where(valid & (ranges > 0), ranges, range_floor)


def grid_pattern(rows: int, cols: int, span: float = 0.5) -> np.ndarray:
    """N = rows * cols (row, col) offsets on a uniform grid over [-span, span]^2 with zero mean"""

    def axis(n: int) -> np.ndarray:
        return np.zeros(1) if n == 1 else np.linspace(-span, span, n)

    row_offsets, col_offsets = np.meshgrid(axis(rows), axis(cols), indexing="ij")
    pattern = np.column_stack([row_offsets.reshape(-1), col_offsets.reshape(-1)])
    return pattern - pattern.mean(axis=0)


@dataclass(frozen=True)
class PatternTransform:
    """Sample locations of every pixel plus what the backward pass needs"""
    # [H, W, N, 2] pixel coordinates, rows clamped and columns wrapped
    locations: np.ndarray
    # [H, W] dilation angle per pixel
    sigma: np.ndarray
    # [H, W] conditioning range per pixel
    ranges: np.ndarray
    # [H, W, N] true where the row coordinate was not clamped
    row_free: np.ndarray


def pixel_grid(height: int, width: int) -> np.ndarray:
    rows, cols = np.meshgrid(np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64), indexing="ij")
    return np.stack([rows, cols], axis=-1)


def transform_pattern(ranges: np.ndarray, valid: np.ndarray, pattern: np.ndarray, lam: float,
                      res: AngularResolution, range_floor: float = 0.5,
                      fixed_dilation: Optional[float] = None) -> PatternTransform:
    """Scales the shared pattern by each pixel's dilation angle, converts radians to pixels per axis and offsets it
    to the pixel; rows are clamped to the image and columns wrapped around the azimuth"""
    height, width = ranges.shape
    conditioning = conditioning_range(ranges, valid, range_floor)
    if fixed_dilation is None:
        sigma = np.arctan(lam / conditioning)
    else:
        sigma = np.full(ranges.shape, float(fixed_dilation))
    per_pixel = np.array([res.rad_per_pixel_row, res.rad_per_pixel_col])
    raw = pixel_grid(height, width)[:, :, None, :] + sigma[:, :, None, None] * (pattern / per_pixel)[None, None]
    row_free = (raw[..., 0] >= 0.0) & (raw[..., 0] <= height - 1)
    locations = np.stack([np.clip(raw[..., 0], 0.0, height - 1), wrap_column(raw[..., 1], width)], axis=-1)
    return PatternTransform(locations, sigma, conditioning, row_free)


def transform_pattern_vjp(d_locations: np.ndarray, transform: PatternTransform, pattern: np.ndarray, lam: float,
                          res: AngularResolution, fixed_dilation: Optional[float] = None) -> tuple[np.ndarray, float]:
    """Gradients of the sample locations w.r.t. the pattern and the nominal width"""
    per_pixel = np.array([res.rad_per_pixel_row, res.rad_per_pixel_col])
    d_raw = d_locations.copy()
    d_raw[..., 0] *= transform.row_free
    scaled = d_raw / per_pixel
    d_pattern = np.einsum("hw,hwnk->nk", transform.sigma, scaled)
    if fixed_dilation is not None:
        return d_pattern, 0.0
    d_sigma = np.einsum("hwnk,nk->hw", scaled, pattern)
    r = transform.ranges
    d_lam = float(np.sum(d_sigma * r / (r ** 2 + lam ** 2)))
    return d_pattern, d_lam


def footprint_width(r, lam: float, span: float = 0.5):
    """Lateral metric width covered by a pattern of half-width `span` at range r"""
    r = np.asarray(r, dtype=np.float64)
    return 2.0 * r * np.tan(span * np.arctan(lam / r))


@dataclass(frozen=True)
class PatternDrift:
    displacement: np.ndarray
    initial_radius: np.ndarray
    final_radius: np.ndarray

    @property
    def radial_change(self) -> np.ndarray:
        return self.final_radius - self.initial_radius

    def summary(self) -> dict[str, float]:
        """Mean radial change of the inner and outer half of the samples, split at the median initial radius"""
        median = np.median(self.initial_radius)
        inner = self.initial_radius <= median
        outer = ~inner
        return {
            "mean_displacement": float(self.displacement.mean()),
            "inner_radial_change": float(self.radial_change[inner].mean()) if inner.any() else 0.0,
            "outer_radial_change": float(self.radial_change[outer].mean()) if outer.any() else 0.0,
        }


def pattern_drift(initial: np.ndarray, learned: np.ndarray) -> PatternDrift:
    """How far each sample moved and whether it moved toward or away from the pattern center"""
    return PatternDrift(np.linalg.norm(learned - initial, axis=1),
                        np.linalg.norm(initial - initial.mean(axis=0), axis=1),
                        np.linalg.norm(learned - learned.mean(axis=0), axis=1))
