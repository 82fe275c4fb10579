from dataclasses import dataclass

from losses.focal import focal_loss, focal_loss_logits
from losses.rcnn import rcnn_cls_loss, rcnn_reg_loss
from losses.rpn import bin_loss, rpn_box_loss, rpn_cls_loss
from losses.term import LossTerm


@dataclass(frozen=True)
class LossParts:
    rpn_cls: float = 0.0
    rpn_box: float = 0.0
    rcnn_cls: float = 0.0
    rcnn_reg: float = 0.0

    @property
    def total(self) -> float:
        return total_loss(self)

    def as_row(self) -> tuple[float, float, float, float]:
        return self.rpn_cls, self.rpn_box, self.rcnn_cls, self.rcnn_reg

    def __add__(self, other: 'LossParts') -> 'LossParts':
        return LossParts(*(a + b for a, b in zip(self.as_row(), other.as_row())))

    def scaled(self, factor: float) -> 'LossParts':
        return LossParts(*(a * factor for a in self.as_row()))


def total_loss(parts: LossParts) -> float:
    """Joint objective with unit weights"""
    return parts.rpn_cls + parts.rpn_box + parts.rcnn_cls + parts.rcnn_reg
