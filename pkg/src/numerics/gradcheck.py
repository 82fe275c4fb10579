import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from errors import NonFiniteError
from numerics.tensor import Op

DEFAULT_STEP = 1e-5
# gradient groups smaller than this are compared on an absolute scale
SCALE_FLOOR = 1e-4


@dataclass(frozen=True)
class GradCheckReport:
    name: str
    tol: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def worst_group(self) -> Optional[str]:
        return max(self.errors, key=self.errors.get) if self.errors else None


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = SCALE_FLOOR) -> float:
    if analytic.size == 0:
        return 0.0
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), floor)
    return float(np.max(np.abs(analytic - numeric))) / scale


def _objective(op: Op, inputs: list[np.ndarray], upstream: np.ndarray) -> float:
    return float(np.sum(op.forward(*inputs) * upstream))


def numeric_gradient(op: Op, inputs: list[np.ndarray], target: np.ndarray, upstream: np.ndarray,
                     h: float = DEFAULT_STEP, entries: Optional[np.ndarray] = None) -> np.ndarray:
    """Central differences of sum(op(inputs) * upstream) w.r.t. the elements of `target` (perturbed in place).

    With `entries`, only those flat indices are differentiated; the others stay zero.
    """
    grad = np.zeros(target.shape, dtype=np.float64)
    flat = target.reshape(-1)
    for i in (range(flat.size) if entries is None else entries):
        original = flat[i]
        flat[i] = original + h
        plus = _objective(op, inputs, upstream)
        flat[i] = original - h
        minus = _objective(op, inputs, upstream)
        flat[i] = original
        grad.reshape(-1)[i] = (plus - minus) / (2.0 * h)
    return grad


def _entries(size: int, sample: Optional[int], rng: np.random.Generator) -> Optional[np.ndarray]:
    if sample is None or sample >= size:
        return None
    return np.sort(rng.choice(size, size=sample, replace=False))


def _compare(analytic: np.ndarray, numeric: np.ndarray, entries: Optional[np.ndarray]) -> float:
    if entries is None:
        return relative_error(analytic, numeric)
    return relative_error(np.asarray(analytic).reshape(-1)[entries], numeric.reshape(-1)[entries])


def grad_check(op: Op, inputs: Sequence[np.ndarray], tol: float = 1e-5, h: float = DEFAULT_STEP,
               wrt: Optional[Sequence[int]] = None, seed: int = 0, name: Optional[str] = None,
               upstream: Optional[np.ndarray] = None, sample: Optional[int] = None) -> GradCheckReport:
    """Compares the analytic VJP of `op` against central differences for the inputs in `wrt` and every parameter.

    `sample` limits each group to that many randomly drawn entries, for ops too large to difference exhaustively.
    """
    logger = logging.getLogger(__name__)
    name = name or op.__class__.__name__
    inputs = [np.array(x, dtype=np.float64) if np.issubdtype(np.asarray(x).dtype, np.floating) else np.asarray(x)
              for x in inputs]
    wrt = range(len(inputs)) if wrt is None else wrt
    rng = np.random.default_rng(seed)

    out = op.forward(*inputs)
    if upstream is None:
        upstream = rng.normal(size=np.shape(out))
    op.zero_grad()
    input_grads = op.vjp(np.asarray(upstream, dtype=np.float64))
    param_grads = {param_name: param.grad.copy() for param_name, param in op.params().items()}

    errors = {}
    for index in wrt:
        analytic = input_grads[index]
        if analytic is None:
            continue
        if not np.all(np.isfinite(analytic)):
            raise NonFiniteError(f"{name}: analytic gradient of input {index}")
        entries = _entries(inputs[index].size, sample, rng)
        numeric = numeric_gradient(op, inputs, inputs[index], upstream, h, entries)
        errors[f"input{index}"] = _compare(analytic, numeric, entries)
    for param_name, param in op.params().items():
        analytic = param_grads[param_name]
        if not np.all(np.isfinite(analytic)):
            raise NonFiniteError(f"{name}: analytic gradient of {param_name}")
        entries = _entries(param.value.size, sample, rng)
        numeric = numeric_gradient(op, inputs, param.value, upstream, h, entries)
        errors[param_name] = _compare(analytic, numeric, entries)

    report = GradCheckReport(name, tol, errors)
    logger.debug("grad_check %s: max rel. error %.3e (%s)", name, report.max_rel_error, report.worst_group())
    return report
