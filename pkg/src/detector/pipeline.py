import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union, override

import numpy as np

from boxgeom.nms import nms
from detector.proposals import ProposalSet, select_proposals_infer, select_proposals_train
from detector.rcnn import RCNN, ProposalGeometry
from detector.rpn import MiniRPN, RPNHeads
from detector.scenes import scene_calibration
from detector.targets import build_rcnn_targets, build_rpn_targets
from literals import CONFIG_FILE
from losses import LossParts
from losses.rcnn import rcnn_cls_loss, rcnn_reg_loss
from losses.rpn import rpn_box_loss, rpn_cls_loss
from models import FrameId, ParamName
from models.box import Box7
from models.config import RunConfig
from models.detection import Detection
from models.range_image import AngularResolution, RangeImage
from numerics.tensor import Op, Param, dtype_of
from rcd.checkpoint import load_params, save_params
from utils import rng_for


@dataclass(frozen=True)
class StepResult:
    losses: LossParts
    n_proposals: int
    n_positive: int
    # loss terms with nothing to average over, by name
    empty: tuple[str, ...] = ()


class TwoStageDetector:
    """RCD range-image RPN followed by the proposal-pooling refinement head"""

    def __init__(self, config: RunConfig, res: Optional[AngularResolution] = None,
                 rng: Optional[np.random.Generator] = None):
        self.config = config
        self.dtype = dtype_of(config.trainer.dtype)
        if res is None:
            res = AngularResolution.from_calibration(scene_calibration(config.scene))
        rng = rng if rng is not None else rng_for(config.seed)
        self.rpn = MiniRPN(config, res, rng, self.dtype)
        self.rcnn = RCNN(config, rng, self.dtype)
        self.__logger = logging.getLogger(self.__class__.__name__)

    def params(self) -> dict[ParamName, Param]:
        named = {f"rpn.{name}": param for name, param in self.rpn.params().items()}
        named.update({f"rcnn.{name}": param for name, param in self.rcnn.params().items()})
        return named

    def zero_grad(self):
        for param in self.params().values():
            param.zero_grad()

    def train_step(self, image: RangeImage, gt_boxes: np.ndarray, rng: np.random.Generator) -> StepResult:
        """Forward pass over one scene with the joint loss; parameter gradients are accumulated, not applied"""
        bins, heading_bins = self.config.bins, self.config.bins.heading_bins
        gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 7)
        heads = self.rpn.forward(image)
        targets = build_rpn_targets(image, gt_boxes, bins)
        cls = rpn_cls_loss(heads.fg, heads.top, heads.left, targets, self.config.focal)
        box = rpn_box_loss(heads.box, targets, self.rpn.layout)

        decoded = self.rpn.decode(heads, image)
        proposals = select_proposals_train(decoded, heads.fg_scores, image.valid, gt_boxes, rng, self.config.rpn)
        rcnn_targets = build_rcnn_targets(proposals.boxes, proposals.labels, proposals.matched, gt_boxes,
                                          heading_bins)
        out = self.rcnn.forward(proposals.boxes, image, heads, decoded)
        rcnn_cls = rcnn_cls_loss(out.logits, rcnn_targets.labels)
        rcnn_reg = rcnn_reg_loss(out.refine, rcnn_targets, heading_bins)

        d_fg, d_embedding = self.rcnn.backward(rcnn_cls.grads["cls"], rcnn_reg.grads["refine"])
        self.rpn.backward(RPNHeads(cls.grads["fg"] + d_fg, cls.grads["top"], cls.grads["left"], box.grads["box"],
                                   d_embedding))
        terms = (("rpn_cls", cls), ("rpn_box", box), ("rcnn_cls", rcnn_cls), ("rcnn_reg", rcnn_reg))
        return StepResult(LossParts(cls.value, box.value, rcnn_cls.value, rcnn_reg.value), len(proposals),
                          int(np.count_nonzero(proposals.labels)), tuple(name for name, t in terms if t.empty))

    def propose(self, image: RangeImage) -> tuple[RPNHeads, np.ndarray, ProposalSet]:
        heads = self.rpn.forward(image)
        decoded = self.rpn.decode(heads, image)
        return heads, decoded, select_proposals_infer(decoded, heads.fg_scores, image.valid, self.config.rpn)

    def detect(self, image: RangeImage, frame: FrameId = "0") -> list[Detection]:
        """Refined boxes of one range image after NMS, by descending score"""
        heads, decoded, proposals = self.propose(image)
        if proposals.empty:
            return []
        out = self.rcnn.forward(proposals.boxes, image, heads, decoded)
        scores = out.scores
        kept = nms(out.boxes, scores, self.config.rpn.nms_iou, self.config.rpn.max_proposals)
        self.__logger.debug("%s proposals -> %s detections", len(proposals), len(kept))
        return [Detection(frame, Box7.from_array(out.boxes[k]), float(scores[k])) for k in kept]

    def save(self, directory: Union[str, os.PathLike], extra: Optional[dict] = None) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / CONFIG_FILE).write_text(self.config.dumps() + "\n", encoding="utf-8")
        stem = self.rpn.stem.rcd_params
        summary = {"lambda": stem.nominal_width, "gamma": stem.gate_scale, "n_samples": stem.n_samples}
        return save_params(directory, self.params(), {**summary, **(extra or {})})

    @classmethod
    def load(cls, directory: Union[str, os.PathLike]) -> 'TwoStageDetector':
        detector = cls(RunConfig.load(Path(directory) / CONFIG_FILE))
        load_params(directory, detector.params())
        return detector


class DetectorOp(Op):
    """The RPN and the refinement head as one Op without inputs, for gradient checking.

    Proposals and their pooling geometry are fixed on the first forward pass; the output stacks the flattened RPN
    head tensors and the refinement outputs of every proposal.
    """

    def __init__(self, detector: TwoStageDetector, image: RangeImage, proposals: np.ndarray):
        self.detector = detector
        self.image = image
        self.proposals = np.asarray(proposals, dtype=np.float64).reshape(-1, 7)
        self.__geometry: Optional[list[ProposalGeometry]] = None
        self.__shapes: Optional[tuple[tuple[int, ...], ...]] = None

    @override
    def forward(self) -> np.ndarray:
        heads = self.detector.rpn.forward(self.image)
        decoded = self.detector.rpn.decode(heads, self.image)
        out = self.detector.rcnn.forward(self.proposals, self.image, heads, decoded, self.__geometry)
        self.__geometry = self.detector.rcnn.geometry
        parts = (heads.fg, heads.top, heads.left, heads.box, heads.embedding, out.logits, out.refine)
        self.__shapes = tuple(part.shape for part in parts)
        return np.concatenate([part.reshape(-1) for part in parts])

    @override
    def vjp(self, upstream: np.ndarray) -> tuple:
        sizes = [int(np.prod(shape)) for shape in self.__shapes]
        pieces = np.split(upstream, np.cumsum(sizes)[:-1])
        fg, top, left, box, embedding, logits, refine = (p.reshape(s) for p, s in zip(pieces, self.__shapes))
        d_fg, d_embedding = self.detector.rcnn.backward(logits, refine)
        self.detector.rpn.backward(RPNHeads(fg + d_fg, top, left, box, embedding + d_embedding))
        return ()

    @override
    def params(self) -> dict[ParamName, Param]:
        return self.detector.params()
