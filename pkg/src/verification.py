import dataclasses
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, override

import numpy as np

from boxgeom.coding import BoxHeadLayout, encode_boxes
from detector.pipeline import DetectorOp, TwoStageDetector
from detector.scenes import generate_scene
from losses.focal import focal_loss_logits
from losses.rcnn import refine_loss
from losses.rpn import bin_loss
from models import ParamName
from models.config import BinConfig, FocalConfig, RCDConfig, RunConfig
from models.range_image import AngularResolution
from models.targets import RCNNTargets
from numerics.gradcheck import GradCheckReport, grad_check
from numerics.ops import Elu, LayerNorm, PointwiseConv
from numerics.tensor import FunctionOp, Op, Param
from rcd.block import RCDBlock
from rcd.gating import soft_range_gate, soft_range_gate_vjp
from rcd.sampler import bilinear_sample, bilinear_sample_vjp

DEFAULT_TOL = 1e-5
COMPOSITE_TOL = 1e-4
COMPOSITE_SIZE = (8, 16)
# finite differences per parameter group of the composite
COMPOSITE_SAMPLE = 6


@dataclass(frozen=True)
class Case:
    name: str
    op: Op
    inputs: list[np.ndarray]
    wrt: Optional[Sequence[int]] = None
    tol: float = DEFAULT_TOL
    sample: Optional[int] = None


class CorruptedGradient(Op):
    """Scales the input gradients of another op; a negative control for the suite"""

    def __init__(self, op: Op, factor: float = 1.1):
        self.__op = op
        self.__factor = factor

    @override
    def forward(self, *inputs: np.ndarray) -> np.ndarray:
        return self.__op.forward(*inputs)

    @override
    def vjp(self, upstream: np.ndarray) -> tuple:
        return tuple(None if g is None else g * self.__factor for g in self.__op.vjp(upstream))

    @override
    def params(self) -> dict[ParamName, Param]:
        return self.__op.params()


def _ranges(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    return rng.uniform(4.0, 40.0, size=shape)


def _locations(rng: np.random.Generator, height: int, width: int, n: int) -> np.ndarray:
    """Fractional sample locations kept away from integer rows and columns, where bilinear weights have kinks"""
    base = rng.integers(0, [max(height - 1, 1), width], size=(height, width, n, 2)).astype(np.float64)
    return base + rng.uniform(0.1, 0.9, size=base.shape) * np.array([1.0 if height > 1 else 0.0, 1.0])


def op_cases(rng: np.random.Generator, size: tuple[int, int]) -> list[Case]:
    height, width = size
    x = rng.normal(size=(height, width, 4))
    norm = LayerNorm(4)
    norm.gain.value[...] = rng.uniform(0.5, 1.5, size=4)
    sampled = rng.normal(size=(height, width, 5, 3))
    center = _ranges(rng, (height, width))
    sampled_ranges = center[..., None] + rng.normal(scale=2.0, size=(height, width, 5))
    gamma = 3.0
    return [
        Case("pointwise_conv", PointwiseConv.initialize(4, 3, rng), [x]),
        Case("layer_norm", norm, [x]),
        Case("elu", Elu(), [x]),
        Case("bilinear_sample", FunctionOp(bilinear_sample, bilinear_sample_vjp),
             [x, _locations(rng, height, width, 3)]),
        Case("soft_range_gate",
             FunctionOp(lambda s, r, c: soft_range_gate(s, r, c, gamma)[0],
                        lambda g, s, r, c: soft_range_gate_vjp(g, s, r, c, gamma,
                                                               soft_range_gate(s, r, c, gamma)[1])[:2] + (None,),
                        "soft_range_gate"),
             [sampled, sampled_ranges, center], wrt=[0, 1]),
    ]


def block_cases(rng: np.random.Generator, size: tuple[int, int]) -> list[Case]:
    height, width = size
    # even grids keep every offset off zero, where samples would sit on the kinks of the bilinear weights
    config = RCDConfig(pattern_rows=2, pattern_cols=4, sample_channels=2, lambda_init=1.5, gamma_init=2.0)
    res = AngularResolution(0.05, 0.05)
    block = RCDBlock.initialize(3, 4, config, res, rng)
    ranges = _ranges(rng, size)
    valid = rng.uniform(size=size) > 0.1
    return [Case("rcd_block", block, [rng.normal(size=(height, width, 3)), ranges, valid], wrt=[0])]


def loss_cases(rng: np.random.Generator) -> list[Case]:
    bins = BinConfig()
    layout = BoxHeadLayout.from_bins(bins)
    n = 6
    points = rng.normal(scale=5.0, size=(n, 3))
    boxes = np.column_stack([points + rng.uniform(-2.0, 2.0, size=(n, 3)), rng.uniform(1.0, 5.0, size=(n, 3)),
                             rng.uniform(-np.pi, np.pi, size=n)])
    targets = encode_boxes(points, boxes, bins)
    labels = rng.uniform(size=(4, 5)) > 0.5
    focal = FocalConfig()
    heading_bins = bins.heading_bins
    rcnn_targets = RCNNTargets(labels=np.ones(n), positive=np.ones(n, dtype=bool),
                               center=rng.normal(scale=0.3, size=(n, 3)), log_dims=rng.normal(scale=0.2, size=(n, 3)),
                               heading_bin=rng.integers(0, heading_bins, size=n),
                               heading_res=rng.uniform(-0.9, 0.9, size=n))

    def rowwise(fn: Callable) -> Callable:
        return lambda g, head: g[:, None] * fn(head)[1]

    return [
        Case("focal_loss", FunctionOp(lambda z: focal_loss_logits(z, labels, focal)[0],
                                      lambda g, z: g * focal_loss_logits(z, labels, focal)[1], "focal_loss"),
             [rng.normal(size=(4, 5))]),
        Case("bin_loss", FunctionOp(lambda head: bin_loss(head, targets, layout)[0],
                                    rowwise(lambda head: bin_loss(head, targets, layout)), "bin_loss"),
             [rng.normal(scale=0.3, size=(n, layout.channels))]),
        Case("refine_loss", FunctionOp(lambda r: refine_loss(r, rcnn_targets, heading_bins)[0],
                                       rowwise(lambda r: refine_loss(r, rcnn_targets, heading_bins)), "refine_loss"),
             [rng.normal(scale=0.3, size=(n, 6 + 2 * heading_bins))]),
    ]


def composite_config(seed: int) -> RunConfig:
    """A one-block RPN with a small refinement head, sized for the micro-scene"""
    height, width = COMPOSITE_SIZE
    base = RunConfig(seed=seed)
    return dataclasses.replace(
        base,
        rcd=dataclasses.replace(base.rcd, pattern_rows=2, pattern_cols=2, sample_channels=2, lambda_init=1.5),
        scene=dataclasses.replace(base.scene, height=height, width=width, min_objects=1, max_objects=1,
                                  range_limits=(6.0, 10.0)),
        rpn=dataclasses.replace(base.rpn, backbone="stem", stem_channels=4, embedding_channels=3),
        rcnn=dataclasses.replace(base.rcnn, grid=(2, 2, 2), conv_channels=2, chunk_size=2),
    )


def composite_case(seed: int) -> Case:
    config = composite_config(seed)
    rng = np.random.default_rng(seed)
    scene = generate_scene(config, seed, 0)
    detector = TwoStageDetector(config, rng=rng)
    jitter = np.column_stack([rng.normal(scale=0.3, size=(len(scene.boxes), 3)), np.zeros((len(scene.boxes), 4))])
    proposals = np.vstack([scene.boxes, scene.boxes + jitter])
    return Case("rpn_rcnn_composite", DetectorOp(detector, scene.image, proposals), [], wrt=[],
                tol=COMPOSITE_TOL, sample=COMPOSITE_SAMPLE)


def run_suite(seed: int, size: tuple[int, int], corrupt: bool = False,
              composite: bool = True) -> list[GradCheckReport]:
    logger = logging.getLogger(__name__)
    rng = np.random.default_rng(seed)
    cases = op_cases(rng, size) + block_cases(rng, size) + loss_cases(rng)
    if composite:
        cases.append(composite_case(seed))
    if corrupt:
        cases[0] = dataclasses.replace(cases[0], op=CorruptedGradient(cases[0].op))
    reports = []
    for case in cases:
        report = grad_check(case.op, case.inputs, tol=case.tol, wrt=case.wrt, seed=seed, name=case.name,
                            sample=case.sample)
        logger.info("%-20s max rel. error %.3e (%s) %s", case.name, report.max_rel_error, report.worst_group(),
                    "ok" if report.passed else "FAILED")
        reports.append(report)
    return reports
