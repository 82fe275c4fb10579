from abc import ABC, abstractmethod
from typing import Optional

from models import RunId, Seed
from models.run import BucketRow, Run, TraceRow


class EvaluationMixin(ABC):
    @abstractmethod
    def save_evaluation(self, run_id: Optional[RunId], label: str, rows: list[BucketRow]) -> int:
        """Stores one bucketed report; returns its evaluation id"""
        pass

    @abstractmethod
    def get_evaluation(self, evaluation_id: int) -> list[BucketRow]:
        """Rows of an evaluation in bucket order. Returns an empty list if no such evaluation exists."""
        pass


class RunStore(EvaluationMixin, ABC):
    @abstractmethod
    def create_run(self, seed: Seed, config: str) -> RunId:
        pass

    @abstractmethod
    def get_run(self, run_id: RunId) -> Optional[Run]:
        pass

    @abstractmethod
    def latest_run(self) -> Optional[Run]:
        pass

    @abstractmethod
    def log_iteration(self, run_id: RunId, row: TraceRow):
        pass

    @abstractmethod
    def get_trace(self, run_id: RunId) -> list[TraceRow]:
        """Trace rows of a run by ascending iteration"""
        pass

    def close(self):
        pass
