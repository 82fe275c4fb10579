import math
from typing import Mapping

import numpy as np

from models import ParamName
from models.config import TrainerConfig
from numerics.tensor import Param


def cosine_learning_rate(base: float, iteration: int, total: int) -> float:
    """Cosine decay from `base` at iteration 0 to 0 at `total`"""
    if total <= 0:
        return base
    progress = min(max(iteration / total, 0.0), 1.0)
    return 0.5 * base * (1.0 + math.cos(math.pi * progress))


def global_norm(params: Mapping[ParamName, Param]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(param.grad, dtype=np.float64))) for param in params.values()))


def clip_gradients(params: Mapping[ParamName, Param], max_norm: float) -> float:
    """Rescales all gradients together so their global L2 norm is at most `max_norm`; returns the norm before"""
    norm = global_norm(params)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for param in params.values():
            param.grad *= scale
    return norm


class Adam:
    """Adam over a fixed, name-ordered parameter set, with a cosine-decayed learning rate"""

    def __init__(self, params: Mapping[ParamName, Param], config: TrainerConfig):
        self.params = dict(sorted(params.items()))
        self.config = config
        self.t = 0
        self.__m = {name: np.zeros_like(p.value) for name, p in self.params.items()}
        self.__v = {name: np.zeros_like(p.value) for name, p in self.params.items()}

    @property
    def learning_rate(self) -> float:
        return cosine_learning_rate(self.config.learning_rate, self.t, self.config.iterations)

    def step(self, scale: float = 1.0) -> float:
        """Applies one update from the accumulated gradients times `scale`; returns the clipped-away global norm"""
        if scale != 1.0:
            for param in self.params.values():
                param.grad *= scale
        norm = clip_gradients(self.params, self.config.grad_clip)
        lr = self.learning_rate
        self.t += 1
        beta1, beta2 = self.config.beta1, self.config.beta2
        for name, param in self.params.items():
            m, v = self.__m[name], self.__v[name]
            m *= beta1
            m += (1.0 - beta1) * param.grad
            v *= beta2
            v += (1.0 - beta2) * np.square(param.grad)
            m_hat = m / (1.0 - beta1 ** self.t)
            v_hat = v / (1.0 - beta2 ** self.t)
            param.value -= (lr * m_hat / (np.sqrt(v_hat) + self.config.adam_eps)).astype(param.value.dtype)
        return norm

    def zero_grad(self):
        for param in self.params.values():
            param.zero_grad()
