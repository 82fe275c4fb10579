from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class LossTerm:
    """A loss value with its gradients w.r.t. each named prediction; `empty` flags a loss with nothing to average"""
    value: float
    grads: dict[str, np.ndarray] = field(default_factory=dict)
    empty: bool = False
