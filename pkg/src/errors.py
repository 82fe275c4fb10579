from typing import Optional


class RcdError(Exception):
    """Base class for every failure raised by this package"""


class DimensionError(RcdError, ValueError):
    pass


class NonFiniteError(RcdError, ArithmeticError):
    def __init__(self, stage: str, detail: str = ""):
        self.stage = stage
        super().__init__(f"non-finite values at stage '{stage}'{f': {detail}' if detail else ''}")


class CalibrationError(RcdError):
    pass


class FormatError(RcdError, IOError):
    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        super().__init__(message if offset is None else f"{message} (at byte offset {offset})")


class UsageError(RcdError):
    pass


class ConfigError(UsageError):
    pass


class TrainingDivergedError(RcdError):
    def __init__(self, iteration: int, checkpoint: Optional[str]):
        self.iteration = iteration
        self.checkpoint = checkpoint
        super().__init__(f"loss became non-finite at iteration {iteration}; "
                         f"last good checkpoint: {checkpoint or 'none'}")
