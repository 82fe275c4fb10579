from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from errors import UsageError
from models import ParamName
from models.config import Precision

type Tensor = np.ndarray


def dtype_of(precision: Precision) -> np.dtype:
    match precision:
        case "float64":
            return np.dtype(np.float64)
        case "float32":
            return np.dtype(np.float32)


@dataclass
class Param:
    """A learnable array and its accumulated gradient"""
    value: np.ndarray
    grad: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.value = np.array(self.value, dtype=np.result_type(self.value, np.float32))
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0

    def accumulate(self, grad: np.ndarray):
        self.grad += grad


class Op(ABC):
    """A differentiable operation with a hand-written vector-Jacobian product.

    `forward` retains whatever `vjp` needs; `vjp` returns one gradient per forward input (None for inputs that are
    not differentiated, such as range images and masks) and accumulates parameter gradients into `Param.grad`.
    """

    @abstractmethod
    def forward(self, *inputs: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def vjp(self, upstream: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        pass

    def params(self) -> dict[ParamName, Param]:
        return {}

    def zero_grad(self):
        for param in self.params().values():
            param.zero_grad()


class FunctionOp(Op):
    """Adapts a pair of pure functions (forward, vjp) to the Op protocol"""

    def __init__(self, forward_fn, vjp_fn, name: Optional[str] = None):
        self.__forward_fn = forward_fn
        self.__vjp_fn = vjp_fn
        self.__inputs: Optional[tuple[np.ndarray, ...]] = None
        self.name = name or getattr(forward_fn, "__name__", "op")

    def forward(self, *inputs: np.ndarray) -> np.ndarray:
        self.__inputs = inputs
        return np.asarray(self.__forward_fn(*inputs))

    def vjp(self, upstream: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        if self.__inputs is None:
            raise UsageError(f"{self.name}: vjp called before forward")
        grads = self.__vjp_fn(upstream, *self.__inputs)
        return grads if isinstance(grads, tuple) else (grads,)


def collect_params(prefix: str, *ops: Op) -> dict[ParamName, Param]:
    named = {}
    for op in ops:
        for name, param in op.params().items():
            named[f"{prefix}{name}"] = param
    return named
