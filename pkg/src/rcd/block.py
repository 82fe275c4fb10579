import logging
import math
from dataclasses import dataclass
from typing import Optional, override

import numpy as np

from errors import DimensionError, UsageError
from models import ParamName
from models.config import RCDConfig
from models.range_image import AngularResolution, RangeImage
from numerics.ops import elu, elu_vjp, layer_norm, layer_norm_vjp, pointwise_conv, pointwise_conv_vjp
from numerics.tensor import Op, Param
from rcd.gating import soft_range_gate, soft_range_gate_vjp
from rcd.pattern import PatternTransform, grid_pattern, transform_pattern, transform_pattern_vjp
from rcd.sampler import BilinearStencil, sample, sample_vjp
from utils import ensure_finite


@dataclass
class RCDParams:
    """Learnable state of one block. The nominal width and the gate scale are stored as logarithms so gradient steps
    keep them positive."""
    pattern: Param
    log_lambda: Param
    log_gamma: Param
    squeeze_w: Param
    squeeze_b: Param
    pass_w: Param
    pass_b: Param
    final_w: Param
    final_b: Param
    norm_gain: Param
    norm_bias: Param

    @classmethod
    def initialize(cls, c_in: int, c_out: int, config: RCDConfig, rng: np.random.Generator,
                   dtype=np.float64) -> 'RCDParams':
        c_pass = c_out if config.pass_channels is None else config.pass_channels
        c_sample = config.sample_channels
        c_cat = config.n_samples * c_sample + c_pass

        def he(c_from: int, c_to: int) -> Param:
            return Param(rng.normal(0.0, math.sqrt(2.0 / max(c_from, 1)), size=(c_from, c_to)).astype(dtype))

        def zeros(n: int) -> Param:
            return Param(np.zeros(n, dtype=dtype))

        return cls(
            pattern=Param(grid_pattern(config.pattern_rows, config.pattern_cols, config.pattern_span).astype(dtype)),
            log_lambda=Param(np.array(math.log(config.lambda_init), dtype=dtype)),
            log_gamma=Param(np.array(math.log(config.gamma_init), dtype=dtype)),
            squeeze_w=he(c_in, c_sample), squeeze_b=zeros(c_sample),
            pass_w=he(c_in, c_pass), pass_b=zeros(c_pass),
            final_w=he(c_cat, c_out), final_b=zeros(c_out),
            norm_gain=Param(np.ones(c_out, dtype=dtype)), norm_bias=zeros(c_out),
        )

    @property
    def nominal_width(self) -> float:
        return float(np.exp(self.log_lambda.value))

    @property
    def gate_scale(self) -> float:
        return float(np.exp(self.log_gamma.value))

    @property
    def n_samples(self) -> int:
        return self.pattern.shape[0]

    @property
    def sample_channels(self) -> int:
        return self.squeeze_w.shape[1]

    @property
    def c_in(self) -> int:
        return self.squeeze_w.shape[0]

    @property
    def c_out(self) -> int:
        return self.final_w.shape[1]

    def named(self) -> dict[ParamName, Param]:
        return dict(vars(self))


@dataclass(frozen=True)
class RCDState:
    """Everything the backward pass reads, kept from one forward pass"""
    x: np.ndarray
    center_ranges: np.ndarray
    transform: PatternTransform
    stencil: BilinearStencil
    squeezed: np.ndarray
    sampled: np.ndarray
    sampled_ranges: np.ndarray
    weights: np.ndarray
    concat: np.ndarray
    pre_norm: np.ndarray
    normed: np.ndarray


def rcd_block_forward(x: np.ndarray, ranges: np.ndarray, valid: np.ndarray, params: RCDParams,
                      res: AngularResolution, config: RCDConfig) -> tuple[np.ndarray, RCDState]:
    """squeeze PConv -> range-conditioned sampling with soft range gating -> concat with the pass-through PConv ->
    final PConv -> layer norm -> ELU"""
    if x.ndim != 3 or x.shape[:2] != ranges.shape or x.shape[2] != params.c_in:
        raise DimensionError(f"rcd block expects H x W x {params.c_in} matching ranges {ranges.shape}, got {x.shape}")
    height, width, _ = x.shape
    gamma = params.gate_scale

    transform = transform_pattern(ranges, valid, params.pattern.value, params.nominal_width, res,
                                  config.range_floor, config.fixed_dilation)
    stencil = BilinearStencil.at(transform.locations, height, width)
    squeezed = pointwise_conv(x, params.squeeze_w.value, params.squeeze_b.value)
    ensure_finite("rcd.squeeze", squeezed)
    sampled = sample(squeezed, stencil)
    sampled_ranges = sample(ranges[..., None].astype(sampled.dtype), stencil)[..., 0]
    gated, weights = soft_range_gate(sampled, sampled_ranges, ranges, gamma)
    ensure_finite("rcd.gate", gated)

    passed = pointwise_conv(x, params.pass_w.value, params.pass_b.value)
    concat = np.concatenate([gated.reshape(height, width, -1), passed], axis=-1)
    pre_norm = pointwise_conv(concat, params.final_w.value, params.final_b.value)
    ensure_finite("rcd.final", pre_norm)
    normed = layer_norm(pre_norm, config.norm_eps, params.norm_gain.value, params.norm_bias.value)
    out = elu(normed)
    ensure_finite("rcd.output", out)
    state = RCDState(x, ranges, transform, stencil, squeezed, sampled, sampled_ranges, weights, concat, pre_norm,
                     normed)
    return out, state


def rcd_block_vjp(upstream: np.ndarray, state: Optional[RCDState], params: RCDParams, res: AngularResolution,
                  config: RCDConfig) -> tuple[np.ndarray, dict[ParamName, np.ndarray]]:
    """Gradient w.r.t. the block input and every parameter, for the forward pass recorded in `state`"""
    if state is None:
        raise UsageError("rcd block: backward pass without a recorded forward pass")
    height, width, _ = state.x.shape
    n_samples, channels = params.n_samples, params.sample_channels
    lam, gamma = params.nominal_width, params.gate_scale

    d_normed = elu_vjp(upstream, state.normed)
    d_pre, d_gain, d_bias = layer_norm_vjp(d_normed, state.pre_norm, config.norm_eps, params.norm_gain.value)
    d_concat, d_final_w, d_final_b = pointwise_conv_vjp(d_pre, state.concat, params.final_w.value)
    d_gated = d_concat[..., :n_samples * channels].reshape(height, width, n_samples, channels)
    d_passed = d_concat[..., n_samples * channels:]

    d_sampled, d_sampled_ranges, d_gamma = soft_range_gate_vjp(d_gated, state.sampled, state.sampled_ranges,
                                                               state.center_ranges, gamma, state.weights)
    d_squeezed, d_locations = sample_vjp(d_sampled, state.squeezed, state.stencil)
    _, d_locations_range = sample_vjp(d_sampled_ranges[..., None], state.center_ranges[..., None], state.stencil)
    d_pattern, d_lam = transform_pattern_vjp(d_locations + d_locations_range, state.transform, params.pattern.value,
                                             lam, res, config.fixed_dilation)

    dx_squeeze, d_squeeze_w, d_squeeze_b = pointwise_conv_vjp(d_squeezed, state.x, params.squeeze_w.value)
    dx_pass, d_pass_w, d_pass_b = pointwise_conv_vjp(d_passed, state.x, params.pass_w.value)
    dx = dx_squeeze + dx_pass
    ensure_finite("rcd.backward", dx, d_pattern, d_final_w)
    grads = {
        "pattern": d_pattern,
        "log_lambda": np.array(d_lam * lam),
        "log_gamma": np.array(d_gamma * gamma),
        "squeeze_w": d_squeeze_w, "squeeze_b": d_squeeze_b,
        "pass_w": d_pass_w, "pass_b": d_pass_b,
        "final_w": d_final_w, "final_b": d_final_b,
        "norm_gain": d_gain, "norm_bias": d_bias,
    }
    return dx, grads


class RCDBlock(Op):
    """Range-conditioned dilated convolution as an Op over (features, ranges, valid mask)"""

    def __init__(self, params: RCDParams, config: RCDConfig, res: AngularResolution):
        self.rcd_params = params
        self.config = config
        self.res = res
        self.__state: Optional[RCDState] = None
        self.__logger = logging.getLogger(self.__class__.__name__)

    @classmethod
    def initialize(cls, c_in: int, c_out: int, config: RCDConfig, res: AngularResolution, rng: np.random.Generator,
                   dtype=np.float64) -> 'RCDBlock':
        return cls(RCDParams.initialize(c_in, c_out, config, rng, dtype), config, res)

    @override
    def forward(self, x: np.ndarray, ranges: np.ndarray, valid: np.ndarray) -> np.ndarray:
        out, self.__state = rcd_block_forward(x, ranges, np.asarray(valid, dtype=bool), self.rcd_params, self.res,
                                              self.config)
        if self.__logger.isEnabledFor(logging.DEBUG):
            self.__logger.debug("forward %s -> %s (lambda %.4f, gamma %.4f)", x.shape, out.shape,
                                self.rcd_params.nominal_width, self.rcd_params.gate_scale)
        return out

    def apply(self, x: np.ndarray, image: RangeImage) -> np.ndarray:
        return self.forward(x, image.ranges, image.valid)

    @override
    def vjp(self, upstream: np.ndarray) -> tuple[np.ndarray, None, None]:
        dx, grads = rcd_block_vjp(upstream, self.__state, self.rcd_params, self.res, self.config)
        named = self.rcd_params.named()
        for name, grad in grads.items():
            named[name].accumulate(grad)
        return dx, None, None

    @override
    def params(self) -> dict[ParamName, Param]:
        named = self.rcd_params.named()
        if self.config.fixed_dilation is not None:
            named.pop("log_lambda")
        return named

    def sample_locations(self, image: RangeImage) -> PatternTransform:
        return transform_pattern(image.ranges, image.valid, self.rcd_params.pattern.value,
                                 self.rcd_params.nominal_width, self.res, self.config.range_floor,
                                 self.config.fixed_dilation)
