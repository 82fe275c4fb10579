import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from boxgeom.coding import MAX_LOG_DIM, heading_from_bins
from boxgeom.frames import PooledBoxFeatures, from_canonical, grid_pool, grid_pool_vjp, to_canonical
from detector.layers import Conv3d, max_pool3d, max_pool3d_vjp
from detector.rpn import HEAD_INIT_SCALE, RPNHeads
from errors import UsageError
from losses.rcnn import CENTER, DIMS, heading_slices, refine_channels
from models import ParamName
from models.box import Box7
from models.config import RunConfig
from models.range_image import RangeImage
from numerics.ops import PointwiseConv, elu, elu_vjp, sigmoid
from numerics.tensor import Param, collect_params
from utils import ensure_finite, wrap_angle

"""Average-pooled point channels: canonical xyz, fg score, decoded box center, log dims over the proposal's and
sin / cos of the decoded heading relative to the proposal. The RPN embeddings follow, max-pooled."""
SEMANTIC_CHANNELS = 12
FG_CHANNEL = 3


def pooling_box(proposal: np.ndarray, margin: float) -> Box7:
    x, y, z, l, w, h, theta = (float(v) for v in proposal)
    return Box7(x, y, z, l + 2.0 * margin, w + 2.0 * margin, h + 2.0 * margin, theta)


@dataclass(frozen=True)
class ProposalGeometry:
    """Points inside one pooling box and the channels that carry no gradient back into the RPN"""
    # flat pixel index of each point
    pixels: np.ndarray
    points: np.ndarray
    # [n, SEMANTIC_CHANNELS - 1]: every semantic channel except the fg score
    fixed: np.ndarray


def proposal_geometry(proposal: np.ndarray, pixels: np.ndarray, points: np.ndarray, decoded: np.ndarray,
                      margin: float) -> ProposalGeometry:
    box = pooling_box(proposal, margin)
    local = to_canonical(points, box)
    inside = np.all(np.abs(local) <= np.array([box.l, box.w, box.h]) / 2.0, axis=1)
    centers = to_canonical(decoded[inside, :3], box)
    log_dims = np.log(np.clip(decoded[inside, 3:6], 1e-3, None) / proposal[3:6])
    relative = decoded[inside, 6] - proposal[6]
    fixed = np.column_stack([local[inside], centers, log_dims, np.sin(relative), np.cos(relative)])
    return ProposalGeometry(pixels[inside], points[inside], fixed)


@dataclass(frozen=True)
class PooledProposals:
    # [M, gl, gw, gh, SEMANTIC_CHANNELS + E]
    grids: np.ndarray
    geometry: list[ProposalGeometry]
    pooled: list[PooledBoxFeatures]
    # fg scores of the whole image, needed to route gradients back to the logits
    fg_scores: np.ndarray


def pool_proposals(proposals: np.ndarray, image: RangeImage, heads: RPNHeads, decoded: np.ndarray, margin: float,
                   grid: Sequence[int], geometry: Optional[list[ProposalGeometry]] = None) -> PooledProposals:
    """Pools the point features of every proposal on its canonical grid.

    Passing the `geometry` of an earlier call keeps point membership and the gradient-free channels fixed, so that
    only the fg scores and embeddings are recomputed.
    """
    proposals = np.asarray(proposals, dtype=np.float64).reshape(-1, 7)
    embedding_channels = heads.embedding.shape[-1]
    fg_scores = sigmoid(heads.fg).reshape(-1)
    embeddings = heads.embedding.reshape(-1, embedding_channels)
    if geometry is None:
        pixels = np.flatnonzero(image.valid.reshape(-1))
        points = image.xyz.reshape(-1, 3)[pixels]
        boxes = decoded.reshape(-1, 7)[pixels]
        geometry = [proposal_geometry(p, pixels, points, boxes, margin) for p in proposals]

    is_max = np.arange(SEMANTIC_CHANNELS + embedding_channels) >= SEMANTIC_CHANNELS
    grids = np.zeros((len(proposals), *grid, len(is_max)), dtype=heads.embedding.dtype)
    pooled = []
    for k, (proposal, geo) in enumerate(zip(proposals, geometry)):
        features = np.column_stack([geo.fixed[:, :FG_CHANNEL], fg_scores[geo.pixels], geo.fixed[:, FG_CHANNEL:],
                                    embeddings[geo.pixels]])
        pooled_k = grid_pool(geo.points, features, pooling_box(proposal, margin), is_max, grid)
        grids[k] = pooled_k.values
        pooled.append(pooled_k)
    return PooledProposals(grids, geometry, pooled, fg_scores)


def pool_proposals_vjp(upstream: np.ndarray, pooled: PooledProposals,
                       shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Gradients w.r.t. the fg logits [H, W] and the embeddings [H, W, E]"""
    embedding_channels = upstream.shape[-1] - SEMANTIC_CHANNELS
    d_fg = np.zeros(shape[0] * shape[1], dtype=upstream.dtype)
    d_embedding = np.zeros((shape[0] * shape[1], embedding_channels), dtype=upstream.dtype)
    scores = pooled.fg_scores
    for k, (geo, pooled_k) in enumerate(zip(pooled.geometry, pooled.pooled)):
        if len(geo.pixels) == 0:
            continue
        d_features = grid_pool_vjp(upstream[k], pooled_k, len(geo.pixels))
        s = scores[geo.pixels]
        d_fg[geo.pixels] += d_features[:, FG_CHANNEL] * s * (1.0 - s)
        d_embedding[geo.pixels] += d_features[:, SEMANTIC_CHANNELS:]
    return d_fg.reshape(shape), d_embedding.reshape(*shape, embedding_channels)


class RCNNHead:
    """3x3x3 conv, ELU, stride-2 max pooling and one dense layer, run over proposals in chunks"""

    def __init__(self, c_in: int, grid: Sequence[int], conv_channels: int, heading_bins: int, chunk_size: int,
                 rng: np.random.Generator, dtype=np.float64):
        self.conv = Conv3d(c_in, conv_channels, rng, dtype)
        self.chunk_size = chunk_size
        n_cells = math.prod(size // 2 for size in grid)
        self.dense = PointwiseConv.initialize(n_cells * conv_channels, 1 + refine_channels(heading_bins), rng, dtype)
        self.dense.w.value *= HEAD_INIT_SCALE
        self.__chunks: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []

    def forward(self, grids: np.ndarray) -> np.ndarray:
        chunks, flats = [], []
        for start in range(0, len(grids), self.chunk_size):
            x = grids[start:start + self.chunk_size]
            conv = self.conv.apply(x)
            pooled, argmax = max_pool3d(elu(conv))
            chunks.append((x, conv, argmax))
            flats.append(pooled.reshape(len(x), -1))
        self.__chunks = chunks
        flat = np.concatenate(flats) if flats else np.zeros((0, self.dense.c_in), dtype=grids.dtype)
        return self.dense.forward(flat)

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        (d_flat,) = self.dense.vjp(upstream)
        d_grids, start = [], 0
        for x, conv, argmax in self.__chunks:
            d_pooled = d_flat[start:start + len(x)].reshape(argmax.shape)
            d_act = max_pool3d_vjp(d_pooled, argmax, conv.shape)
            d_grids.append(self.conv.backprop(x, elu_vjp(d_act, conv)))
            start += len(x)
        if not d_grids:
            return np.zeros((0,), dtype=upstream.dtype)
        return np.concatenate(d_grids)

    def params(self) -> dict[ParamName, Param]:
        return collect_params("conv.", self.conv) | collect_params("dense.", self.dense)


def decode_refinements(proposals: np.ndarray, refine: np.ndarray, heading_bins: int) -> np.ndarray:
    """Refined boxes [M, 7]: center offset and heading in each proposal's frame, dims as log ratios"""
    logits, residuals = heading_slices(heading_bins)
    rows = np.arange(len(refine))
    bins = np.argmax(refine[:, logits], axis=1)
    heading = heading_from_bins(bins, refine[rows, residuals.start + bins], heading_bins)
    boxes = np.zeros((len(refine), 7))
    for k, proposal in enumerate(np.asarray(proposals, dtype=np.float64).reshape(-1, 7)):
        box = Box7.from_array(proposal)
        boxes[k, :3] = from_canonical(refine[k, CENTER][None], box)[0]
    boxes[:, 3:6] = proposals[:, 3:6] * np.exp(np.clip(refine[:, DIMS], -MAX_LOG_DIM, MAX_LOG_DIM))
    boxes[:, 6] = wrap_angle(proposals[:, 6] + heading)
    return boxes


@dataclass(frozen=True)
class RCNNOutput:
    logits: np.ndarray
    refine: np.ndarray
    boxes: np.ndarray

    @property
    def scores(self) -> np.ndarray:
        return sigmoid(self.logits)

    def __len__(self) -> int:
        return len(self.logits)


class RCNN:
    def __init__(self, config: RunConfig, rng: np.random.Generator, dtype=np.float64):
        self.config = config.rcnn
        self.heading_bins = config.bins.heading_bins
        self.head = RCNNHead(SEMANTIC_CHANNELS + config.rpn.embedding_channels, config.rcnn.grid,
                             config.rcnn.conv_channels, self.heading_bins, config.rcnn.chunk_size, rng, dtype)
        self.__logger = logging.getLogger(self.__class__.__name__)
        self.__pooled: Optional[PooledProposals] = None
        self.__shape: Optional[tuple[int, int]] = None

    def forward(self, proposals: np.ndarray, image: RangeImage, heads: RPNHeads, decoded: np.ndarray,
                geometry: Optional[list[ProposalGeometry]] = None) -> RCNNOutput:
        proposals = np.asarray(proposals, dtype=np.float64).reshape(-1, 7)
        pooled = pool_proposals(proposals, image, heads, decoded, self.config.pool_margin, self.config.grid,
                                geometry)
        out = self.head.forward(pooled.grids)
        ensure_finite("rcnn.head", out)
        self.__pooled, self.__shape = pooled, (image.height, image.width)
        empty = sum(1 for geo in pooled.geometry if len(geo.pixels) == 0)
        if empty:
            self.__logger.debug("%s of %s proposals hold no points", empty, len(proposals))
        refine = out[:, 1:]
        return RCNNOutput(out[:, 0], refine, decode_refinements(proposals, refine, self.heading_bins))

    @property
    def geometry(self) -> Optional[list[ProposalGeometry]]:
        return None if self.__pooled is None else self.__pooled.geometry

    def backward(self, d_logits: np.ndarray, d_refine: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Accumulates head gradients; returns gradients w.r.t. the RPN fg logits and embeddings"""
        if self.__pooled is None:
            raise UsageError("RCNN: backward called before forward")
        d_out = np.concatenate([np.asarray(d_logits)[:, None], d_refine], axis=1)
        d_grids = self.head.backward(d_out)
        if len(d_grids) == 0:
            embedding_channels = self.__pooled.grids.shape[-1] - SEMANTIC_CHANNELS
            return np.zeros(self.__shape), np.zeros((*self.__shape, embedding_channels))
        return pool_proposals_vjp(d_grids, self.__pooled, self.__shape)

    def params(self) -> dict[ParamName, Param]:
        return self.head.params()


def rcnn_forward(proposals: np.ndarray, image: RangeImage, heads: RPNHeads, decoded: np.ndarray,
                 rcnn: RCNN) -> RCNNOutput:
    return rcnn.forward(proposals, image, heads, decoded)
