from dataclasses import dataclass

import numpy as np

from errors import DimensionError
from rangeimage.projection import wrap_column


@dataclass(frozen=True)
class BilinearStencil:
    """The 2x2 neighbourhood and interpolation weights of every sample location.

    Rows use the lower neighbour clipped to H - 2 so the last row is reached with a fractional weight of 1; columns
    take their right neighbour modulo W.
    """
    height: int
    width: int
    r0: np.ndarray
    r1: np.ndarray
    c0: np.ndarray
    c1: np.ndarray
    fr: np.ndarray
    fc: np.ndarray

    @classmethod
    def at(cls, locations: np.ndarray, height: int, width: int) -> 'BilinearStencil':
        rows = np.clip(locations[..., 0], 0.0, height - 1)
        cols = wrap_column(locations[..., 1], width)
        r0 = np.clip(np.floor(rows).astype(np.int64), 0, max(height - 2, 0))
        r1 = np.minimum(r0 + 1, height - 1)
        c0 = np.minimum(np.floor(cols).astype(np.int64), width - 1)
        c1 = (c0 + 1) % width
        return cls(height, width, r0, r1, c0, c1, rows - r0, cols - c0)

    def corners(self) -> tuple[tuple[np.ndarray, np.ndarray, np.ndarray], ...]:
        """(flat pixel index, weight) for the four neighbours, in the order 00, 01, 10, 11"""
        fr, fc = self.fr, self.fc
        return (
            (self.r0 * self.width + self.c0, (1.0 - fr) * (1.0 - fc)),
            (self.r0 * self.width + self.c1, (1.0 - fr) * fc),
            (self.r1 * self.width + self.c0, fr * (1.0 - fc)),
            (self.r1 * self.width + self.c1, fr * fc),
        )


def _check(x: np.ndarray, stencil: BilinearStencil):
    if x.ndim != 3 or x.shape[:2] != (stencil.height, stencil.width):
        raise DimensionError(f"sampler input {x.shape} does not match a {stencil.height}x{stencil.width} stencil")


def sample(x: np.ndarray, stencil: BilinearStencil) -> np.ndarray:
    _check(x, stencil)
    flat = x.reshape(-1, x.shape[2])
    out = None
    for index, weight in stencil.corners():
        term = weight[..., None] * flat[index]
        out = term if out is None else out + term
    return out


def sample_vjp(upstream: np.ndarray, x: np.ndarray, stencil: BilinearStencil) -> tuple[np.ndarray, np.ndarray]:
    """Gradients w.r.t. the sampled tensor [H, W, C] and the sample locations [..., 2]"""
    _check(x, stencil)
    channels = x.shape[2]
    flat = x.reshape(-1, channels)
    n_pixels = stencil.height * stencil.width

    # scatter with bincount: one pass per corner, summed in a fixed order
    dx = np.zeros(n_pixels * channels)
    channel_ids = np.arange(channels)
    for index, weight in stencil.corners():
        targets = (index[..., None] * channels + channel_ids).reshape(-1)
        dx += np.bincount(targets, weights=(weight[..., None] * upstream).reshape(-1), minlength=n_pixels * channels)

    (i00, _), (i01, _), (i10, _), (i11, _) = stencil.corners()
    v00, v01, v10, v11 = flat[i00], flat[i01], flat[i10], flat[i11]
    fr, fc = stencil.fr[..., None], stencil.fc[..., None]
    d_row = np.sum(upstream * ((1.0 - fc) * (v10 - v00) + fc * (v11 - v01)), axis=-1)
    d_col = np.sum(upstream * ((1.0 - fr) * (v01 - v00) + fr * (v11 - v10)), axis=-1)
    return dx.reshape(x.shape), np.stack([d_row, d_col], axis=-1)


def bilinear_sample(x: np.ndarray, locations: np.ndarray) -> np.ndarray:
    """Samples x [H, W, C] at fractional (row, col) locations [..., 2], giving [..., C]"""
    return sample(x, BilinearStencil.at(locations, x.shape[0], x.shape[1]))


def bilinear_sample_vjp(upstream: np.ndarray, x: np.ndarray, locations: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return sample_vjp(upstream, x, BilinearStencil.at(locations, x.shape[0], x.shape[1]))
