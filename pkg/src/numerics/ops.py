from typing import Optional, override

import numpy as np

from errors import DimensionError, UsageError
from models import ParamName
from numerics.tensor import Op, Param


def pointwise_conv(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """1x1 convolution: out[..., :] = x[..., :] @ w + b"""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"pointwise_conv: input channels {x.shape[-1]} do not match weights {w.shape}")
    if b.shape != (w.shape[1],):
        raise DimensionError(f"pointwise_conv: bias {b.shape} does not match weights {w.shape}")
    return x @ w + b


def pointwise_conv_vjp(upstream: np.ndarray, x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    flat_x = x.reshape(-1, x.shape[-1])
    flat_g = upstream.reshape(-1, upstream.shape[-1])
    return upstream @ w.T, flat_x.T @ flat_g, flat_g.sum(axis=0)


def layer_norm(x: np.ndarray, eps: float = 1e-5, gain: Optional[np.ndarray] = None,
               bias: Optional[np.ndarray] = None) -> np.ndarray:
    """Normalizes each channel vector (last axis) to zero mean and unit variance, then applies gain and bias"""
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    out = centered * inv_std
    if gain is not None:
        out = out * gain
    if bias is not None:
        out = out + bias
    return out


def layer_norm_vjp(upstream: np.ndarray, x: np.ndarray, eps: float,
                   gain: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    channels = x.shape[-1]
    centered = x - x.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    normalized = centered * inv_std
    d_normalized = upstream * gain
    dx = inv_std / channels * (channels * d_normalized
                               - d_normalized.sum(axis=-1, keepdims=True)
                               - normalized * (d_normalized * normalized).sum(axis=-1, keepdims=True))
    flat_g = upstream.reshape(-1, channels)
    return dx, (flat_g * normalized.reshape(-1, channels)).sum(axis=0), flat_g.sum(axis=0)


def elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_vjp(upstream: np.ndarray, x: np.ndarray) -> np.ndarray:
    return upstream * np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def sigmoid(x: np.ndarray) -> np.ndarray:
    positive = x >= 0
    z = np.exp(-np.abs(x))
    return np.where(positive, 1.0 / (1.0 + z), z / (1.0 + z))


class PointwiseConv(Op):
    def __init__(self, w: np.ndarray, b: np.ndarray):
        self.w = Param(w)
        self.b = Param(b)
        self.__x: Optional[np.ndarray] = None

    @classmethod
    def initialize(cls, c_in: int, c_out: int, rng: np.random.Generator, dtype=np.float64,
                   bias: float = 0.0) -> 'PointwiseConv':
        scale = np.sqrt(2.0 / max(c_in, 1))
        return cls(rng.normal(0.0, scale, size=(c_in, c_out)).astype(dtype), np.full(c_out, bias, dtype=dtype))

    @property
    def c_in(self) -> int:
        return self.w.shape[0]

    @property
    def c_out(self) -> int:
        return self.w.shape[1]

    @override
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.__x = x
        return pointwise_conv(x, self.w.value, self.b.value)

    @override
    def vjp(self, upstream: np.ndarray) -> tuple[np.ndarray]:
        if self.__x is None:
            raise UsageError("PointwiseConv: vjp called before forward")
        dx, dw, db = pointwise_conv_vjp(upstream, self.__x, self.w.value)
        self.w.accumulate(dw)
        self.b.accumulate(db)
        return (dx,)

    @override
    def params(self) -> dict[ParamName, Param]:
        return {"w": self.w, "b": self.b}


class LayerNorm(Op):
    def __init__(self, channels: int, eps: float = 1e-5, dtype=np.float64):
        self.gain = Param(np.ones(channels, dtype=dtype))
        self.bias = Param(np.zeros(channels, dtype=dtype))
        self.eps = eps
        self.__x: Optional[np.ndarray] = None

    @override
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.__x = x
        return layer_norm(x, self.eps, self.gain.value, self.bias.value)

    @override
    def vjp(self, upstream: np.ndarray) -> tuple[np.ndarray]:
        if self.__x is None:
            raise UsageError("LayerNorm: vjp called before forward")
        dx, dgain, dbias = layer_norm_vjp(upstream, self.__x, self.eps, self.gain.value)
        self.gain.accumulate(dgain)
        self.bias.accumulate(dbias)
        return (dx,)

    @override
    def params(self) -> dict[ParamName, Param]:
        return {"gain": self.gain, "bias": self.bias}


class Elu(Op):
    def __init__(self):
        self.__x: Optional[np.ndarray] = None

    @override
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.__x = x
        return elu(x)

    @override
    def vjp(self, upstream: np.ndarray) -> tuple[np.ndarray]:
        if self.__x is None:
            raise UsageError("Elu: vjp called before forward")
        return (elu_vjp(upstream, self.__x),)
