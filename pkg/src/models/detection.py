from dataclasses import dataclass
from typing import Optional

import numpy as np

from models import FrameId
from models.box import Box7


@dataclass(frozen=True)
class Detection:
    frame: FrameId
    box: Box7
    score: float


@dataclass(frozen=True)
class GroundTruth:
    frame: FrameId
    box: Box7
    difficulty: Optional[int] = None


@dataclass(frozen=True)
class MatchResult:
    """Per-detection outcome, aligned with the detection order given to the matcher"""
    scores: np.ndarray
    tp: np.ndarray
    matched_gt: np.ndarray
    heading_error: np.ndarray
    n_gt: int

    def __len__(self) -> int:
        return len(self.scores)

    def subset(self, mask: np.ndarray, n_gt: int) -> 'MatchResult':
        return MatchResult(self.scores[mask], self.tp[mask], self.matched_gt[mask], self.heading_error[mask], n_gt)

    @classmethod
    def concatenate(cls, results: list['MatchResult']) -> 'MatchResult':
        if not results:
            return cls(np.zeros(0), np.zeros(0, dtype=bool), np.zeros(0, dtype=np.int64), np.zeros(0), 0)
        return cls(np.concatenate([r.scores for r in results]),
                   np.concatenate([r.tp for r in results]),
                   np.concatenate([r.matched_gt for r in results]),
                   np.concatenate([r.heading_error for r in results]),
                   sum(r.n_gt for r in results))
