import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from boxgeom.coding import BoxHeadLayout
from detector.layers import Bottleneck, MaxPoolH, UpsampleH, max_pool_ranges
from errors import ConfigError
from literals import CHANNELS
from models import ParamName
from models.config import RunConfig
from models.range_image import AngularResolution, RangeImage
from numerics.ops import PointwiseConv, sigmoid
from numerics.tensor import Param, collect_params
from rcd.block import RCDBlock

# head weights start small so the initial box logits are close to uniform
HEAD_INIT_SCALE = 0.1


@dataclass(frozen=True)
class RPNHeads:
    """Full-resolution outputs: foreground, top-similarity and left-similarity logits, box head and embeddings"""
    fg: np.ndarray
    top: np.ndarray
    left: np.ndarray
    box: np.ndarray
    embedding: np.ndarray

    @property
    def fg_scores(self) -> np.ndarray:
        return sigmoid(self.fg)


def zero_head_grads(heads: RPNHeads) -> RPNHeads:
    return RPNHeads(*(np.zeros_like(a) for a in (heads.fg, heads.top, heads.left, heads.box, heads.embedding)))


def input_features(image: RangeImage, scales) -> np.ndarray:
    if image.data.shape[2] != len(CHANNELS):
        raise ConfigError(f"the RPN expects the {len(CHANNELS)}-channel range image layout, got {image.data.shape}")
    return image.data * np.asarray(scales)


class MiniRPN:
    """RCD stem followed, for the "mini" backbone, by two width-downsampling bottleneck stages (optionally each with
    its own RCD block over the coarsened range image) and an aggregation path back to full resolution"""

    def __init__(self, config: RunConfig, res: AngularResolution, rng: np.random.Generator, dtype=np.float64):
        rpn = config.rpn
        self.config = config
        self.layout = BoxHeadLayout.from_bins(config.bins)
        self.__logger = logging.getLogger(self.__class__.__name__)
        stem, stage, k = rpn.stem_channels, rpn.stage_channels, rpn.downsample
        self.stem = RCDBlock.initialize(len(CHANNELS), stem, config.rcd, res, rng, dtype)
        self.mini = rpn.backbone == "mini"
        self.rcd1: Optional[RCDBlock] = None
        self.rcd2: Optional[RCDBlock] = None
        if self.mini:
            self.pool1, self.pool2 = MaxPoolH(k), MaxPoolH(k)
            self.stage1 = Bottleneck(stem, stage, rng, dtype)
            self.stage2 = Bottleneck(stage, stage, rng, dtype)
            if rpn.multi_scale_rcd:
                self.rcd1 = RCDBlock.initialize(stage, stage, config.rcd, res.downsampled(1, k), rng, dtype)
                self.rcd2 = RCDBlock.initialize(stage, stage, config.rcd, res.downsampled(1, k * k), rng, dtype)
            self.up2, self.up1 = UpsampleH(k), UpsampleH(k)
            self.agg1 = Bottleneck(stage, stage, rng, dtype)
            self.agg0 = Bottleneck(stage + stem, stem, rng, dtype)
        self.n_out = 3 + self.layout.channels + rpn.embedding_channels
        self.heads = PointwiseConv.initialize(stem, self.n_out, rng, dtype)
        self.heads.w.value *= HEAD_INIT_SCALE
        self.heads.b.value[0] = -math.log((1.0 - rpn.fg_prior) / rpn.fg_prior)

    def forward(self, image: RangeImage) -> RPNHeads:
        x = input_features(image, self.config.rpn.input_scales)
        ranges, valid = image.ranges, image.valid
        s0 = self.stem.forward(x, ranges, valid)
        if self.mini:
            k = self.config.rpn.downsample
            r1, v1 = max_pool_ranges(ranges, valid, k)
            r2, v2 = max_pool_ranges(r1, v1, k)
            s1 = self.stage1.forward(self.pool1.forward(s0))
            if self.rcd1 is not None:
                s1 = self.rcd1.forward(s1, r1, v1)
            s2 = self.stage2.forward(self.pool2.forward(s1))
            if self.rcd2 is not None:
                s2 = self.rcd2.forward(s2, r2, v2)
            a1 = self.agg1.forward(self.up2.forward(s2) + s1)
            features = self.agg0.forward(np.concatenate([self.up1.forward(a1), s0], axis=-1))
        else:
            features = s0
        out = self.heads.forward(features)
        box = self.layout.channels
        self.__logger.debug("rpn forward on %sx%s", image.height, image.width)
        return RPNHeads(out[..., 0], out[..., 1], out[..., 2], out[..., 3:3 + box], out[..., 3 + box:])

    def backward(self, grads: RPNHeads) -> np.ndarray:
        """Accumulates parameter gradients; returns the gradient w.r.t. the scaled input features"""
        d_out = np.concatenate([grads.fg[..., None], grads.top[..., None], grads.left[..., None], grads.box,
                                grads.embedding], axis=-1)
        (d_features,) = self.heads.vjp(d_out)
        if self.mini:
            stage = self.config.rpn.stage_channels
            (d_cat,) = self.agg0.vjp(d_features)
            (d_a1,) = self.up1.vjp(d_cat[..., :stage])
            d_s0 = d_cat[..., stage:]
            (d_sum,) = self.agg1.vjp(d_a1)
            (d_s2,) = self.up2.vjp(d_sum)
            d_s1 = d_sum
            if self.rcd2 is not None:
                d_s2 = self.rcd2.vjp(d_s2)[0]
            (d_p2,) = self.stage2.vjp(d_s2)
            d_s1 = d_s1 + self.pool2.vjp(d_p2)[0]
            if self.rcd1 is not None:
                d_s1 = self.rcd1.vjp(d_s1)[0]
            (d_p1,) = self.stage1.vjp(d_s1)
            d_s0 = d_s0 + self.pool1.vjp(d_p1)[0]
        else:
            d_s0 = d_features
        return self.stem.vjp(d_s0)[0]

    def params(self) -> dict[ParamName, Param]:
        named = collect_params("stem.", self.stem)
        if self.mini:
            for prefix, op in (("stage1.", self.stage1), ("stage2.", self.stage2), ("agg1.", self.agg1),
                               ("agg0.", self.agg0), ("rcd1.", self.rcd1), ("rcd2.", self.rcd2)):
                if op is not None:
                    named.update(collect_params(prefix, op))
        named.update(collect_params("heads.", self.heads))
        return named

    def rcd_blocks(self) -> list[RCDBlock]:
        return [block for block in (self.stem, self.rcd1, self.rcd2) if block is not None]

    def decode(self, heads: RPNHeads, image: RangeImage) -> np.ndarray:
        """Box proposal [H, W, 7] of every pixel, decoded relative to the pixel's own point"""
        height, width = image.height, image.width
        flat = heads.box.reshape(-1, self.layout.channels)
        boxes = self.layout.decode(flat, image.xyz.reshape(-1, 3), self.config.bins)
        return boxes.reshape(height, width, 7)


def rpn_forward(image: RangeImage, rpn: MiniRPN) -> RPNHeads:
    return rpn.forward(image)
