import math
from dataclasses import dataclass
from typing import Optional

from models import RunId, Seed


@dataclass(frozen=True)
class Run:
    run_id: RunId
    seed: Seed
    config: str
    created_at: Optional[str] = None


@dataclass(frozen=True)
class TraceRow:
    """Loss terms and stem RCD scalars after one optimizer step"""
    iteration: int
    rpn_cls: float
    rpn_box: float
    rcnn_cls: float
    rcnn_reg: float
    lam: float
    gamma: float

    @property
    def total(self) -> float:
        return self.rpn_cls + self.rpn_box + self.rcnn_cls + self.rcnn_reg

    def as_csv_row(self) -> tuple:
        return (self.iteration, *(repr(float(v)) for v in (self.rpn_cls, self.rpn_box, self.rcnn_cls,
                                                             self.rcnn_reg, self.lam, self.gamma)))


@dataclass(frozen=True)
class BucketRow:
    """AP and APH of the detections whose box center falls in one range bucket; NaN when it holds no ground truth"""
    bucket: str
    n_gt: int
    n_det: int
    ap: float
    aph: float

    def format(self) -> str:
        def number(value: float) -> str:
            return "nan" if math.isnan(value) else f"{value:.4f}"
        return f"{self.bucket:<12} {self.n_gt:>6} {self.n_det:>6} {number(self.ap):>8} {number(self.aph):>8}"
