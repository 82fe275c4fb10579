import numpy as np

from numerics.ops import sigmoid


def smooth_l1(x: np.ndarray, delta: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise smooth-L1 value and derivative"""
    x = np.asarray(x, dtype=np.float64)
    small = np.abs(x) < delta
    value = np.where(small, 0.5 * x * x / delta, np.abs(x) - 0.5 * delta)
    grad = np.where(small, x / delta, np.sign(x))
    return value, grad


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row cross-entropy of logits [..., K] against integer labels [...], and its gradient w.r.t. the logits"""
    log_probs = log_softmax(logits)
    one_hot = np.eye(logits.shape[-1], dtype=logits.dtype)[labels]
    value = -np.sum(one_hot * log_probs, axis=-1)
    return value, np.exp(log_probs) - one_hot


def softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Binary cross-entropy on logits, computed as softplus(z) - y * z"""
    return softplus(logits) - labels * logits, sigmoid(logits) - labels
