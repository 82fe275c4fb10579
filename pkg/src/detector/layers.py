from typing import Optional, override

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from errors import DimensionError, UsageError
from models import ParamName
from numerics.ops import Elu, LayerNorm, PointwiseConv
from numerics.tensor import Op, Param, collect_params


class MaxPoolH(Op):
    """[1, k] max pooling with stride k along the width; the height is untouched"""

    def __init__(self, k: int):
        self.k = k
        self.__argmax: Optional[np.ndarray] = None
        self.__shape: Optional[tuple[int, ...]] = None

    @override
    def forward(self, x: np.ndarray) -> np.ndarray:
        height, width, channels = x.shape
        if width % self.k != 0:
            raise DimensionError(f"width {width} is not divisible by the pooling size {self.k}")
        windows = x.reshape(height, width // self.k, self.k, channels)
        self.__argmax = np.argmax(windows, axis=2)
        self.__shape = x.shape
        return np.take_along_axis(windows, self.__argmax[:, :, None, :], axis=2)[:, :, 0, :]

    @override
    def vjp(self, upstream: np.ndarray) -> tuple[np.ndarray]:
        if self.__argmax is None:
            raise UsageError("MaxPoolH: vjp called before forward")
        height, width, channels = self.__shape
        grad = np.zeros((height, width // self.k, self.k, channels), dtype=upstream.dtype)
        np.put_along_axis(grad, self.__argmax[:, :, None, :], upstream[:, :, None, :], axis=2)
        return (grad.reshape(self.__shape),)


def max_pool_ranges(ranges: np.ndarray, valid: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Range image coarsened with the same [1, k] kernel: farthest valid return per window"""
    height, width = ranges.shape
    masked = np.where(valid, ranges, 0.0).reshape(height, width // k, k)
    return masked.max(axis=2), valid.reshape(height, width // k, k).any(axis=2)


class UpsampleH(Op):
    def __init__(self, k: int):
        self.k = k

    @override
    def forward(self, x: np.ndarray) -> np.ndarray:
        return np.repeat(x, self.k, axis=1)

    @override
    def vjp(self, upstream: np.ndarray) -> tuple[np.ndarray]:
        height, width, channels = upstream.shape
        return (upstream.reshape(height, width // self.k, self.k, channels).sum(axis=2),)


class Bottleneck(Op):
    """PConv -> norm -> ELU -> PConv -> norm, added to the (projected) input, then ELU"""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, dtype=np.float64, eps: float = 1e-5):
        c_mid = max(c_out // 2, 1)
        self.conv1 = PointwiseConv.initialize(c_in, c_mid, rng, dtype)
        self.norm1 = LayerNorm(c_mid, eps, dtype)
        self.act1 = Elu()
        self.conv2 = PointwiseConv.initialize(c_mid, c_out, rng, dtype)
        self.norm2 = LayerNorm(c_out, eps, dtype)
        self.project = PointwiseConv.initialize(c_in, c_out, rng, dtype) if c_in != c_out else None
        self.act_out = Elu()

    @override
    def forward(self, x: np.ndarray) -> np.ndarray:
        branch = self.norm2.forward(self.conv2.forward(self.act1.forward(self.norm1.forward(self.conv1.forward(x)))))
        skip = x if self.project is None else self.project.forward(x)
        return self.act_out.forward(branch + skip)

    @override
    def vjp(self, upstream: np.ndarray) -> tuple[np.ndarray]:
        (d_sum,) = self.act_out.vjp(upstream)
        d_branch = d_sum
        for op in (self.norm2, self.conv2, self.act1, self.norm1, self.conv1):
            (d_branch,) = op.vjp(d_branch)
        d_skip = d_sum if self.project is None else self.project.vjp(d_sum)[0]
        return (d_branch + d_skip,)

    @override
    def params(self) -> dict[ParamName, Param]:
        ops = [("conv1.", self.conv1), ("norm1.", self.norm1), ("conv2.", self.conv2), ("norm2.", self.norm2)]
        if self.project is not None:
            ops.append(("project.", self.project))
        named = {}
        for prefix, op in ops:
            named.update(collect_params(prefix, op))
        return named


def _patches(padded: np.ndarray, shape: tuple[int, int, int]) -> np.ndarray:
    """[B, X, Y, Z, C * 27] neighbourhoods of a padded grid, channel-major"""
    windows = sliding_window_view(padded, (3, 3, 3), axis=(1, 2, 3))
    batch, channels = padded.shape[0], padded.shape[-1]
    return windows.reshape(batch, *shape, channels * 27)


class Conv3d(Op):
    """3 x 3 x 3 convolution with zero padding over [B, X, Y, Z, C] grids, computed with im2col.

    `apply` and `backprop` are the stateless halves of forward / vjp, for callers that run several chunks through
    the same weights before going backwards.
    """

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, dtype=np.float64):
        scale = np.sqrt(2.0 / (27 * c_in))
        self.w = Param(rng.normal(0.0, scale, size=(c_in * 27, c_out)).astype(dtype))
        self.b = Param(np.zeros(c_out, dtype=dtype))
        self.__x: Optional[np.ndarray] = None

    @staticmethod
    def __pad(x: np.ndarray) -> np.ndarray:
        return np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1), (0, 0)))

    def apply(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 5 or x.shape[-1] * 27 != self.w.shape[0]:
            raise DimensionError(f"Conv3d expects [B, X, Y, Z, {self.w.shape[0] // 27}], got {x.shape}")
        return _patches(self.__pad(x), x.shape[1:4]) @ self.w.value + self.b.value

    def backprop(self, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        batch, size_x, size_y, size_z, channels = x.shape
        patches = _patches(self.__pad(x), x.shape[1:4])
        flat_g = upstream.reshape(-1, upstream.shape[-1])
        self.w.accumulate(patches.reshape(-1, patches.shape[-1]).T @ flat_g)
        self.b.accumulate(flat_g.sum(axis=0))
        d_patches = (upstream @ self.w.value.T).reshape(batch, size_x, size_y, size_z, channels, 3, 3, 3)
        d_padded = np.zeros((batch, size_x + 2, size_y + 2, size_z + 2, channels), dtype=upstream.dtype)
        for i in range(3):
            for j in range(3):
                for k in range(3):
                    d_padded[:, i:i + size_x, j:j + size_y, k:k + size_z, :] += d_patches[..., i, j, k]
        return d_padded[:, 1:-1, 1:-1, 1:-1, :]

    @override
    def forward(self, x: np.ndarray) -> np.ndarray:
        out = self.apply(x)
        self.__x = x
        return out

    @override
    def vjp(self, upstream: np.ndarray) -> tuple[np.ndarray]:
        if self.__x is None:
            raise UsageError("Conv3d: vjp called before forward")
        return (self.backprop(self.__x, upstream),)

    @override
    def params(self) -> dict[ParamName, Param]:
        return {"w": self.w, "b": self.b}


def max_pool3d(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2 x 2 x 2 max pooling with stride 2 over [B, X, Y, Z, C]; returns (pooled, winner within each block)"""
    batch, size_x, size_y, size_z, channels = x.shape
    if size_x % 2 or size_y % 2 or size_z % 2:
        raise DimensionError(f"max_pool3d needs even grid sizes, got {x.shape[1:4]}")
    blocks = x.reshape(batch, size_x // 2, 2, size_y // 2, 2, size_z // 2, 2, channels)
    blocks = blocks.transpose(0, 1, 3, 5, 7, 2, 4, 6).reshape(batch, size_x // 2, size_y // 2, size_z // 2,
                                                             channels, 8)
    argmax = np.argmax(blocks, axis=-1)
    return np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0], argmax


def max_pool3d_vjp(upstream: np.ndarray, argmax: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    batch, size_x, size_y, size_z, channels = shape
    blocks = np.zeros((*upstream.shape, 8), dtype=upstream.dtype)
    np.put_along_axis(blocks, argmax[..., None], upstream[..., None], axis=-1)
    blocks = blocks.reshape(batch, size_x // 2, size_y // 2, size_z // 2, channels, 2, 2, 2)
    return blocks.transpose(0, 1, 5, 2, 6, 3, 7, 4).reshape(shape)
