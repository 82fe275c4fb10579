from typing import Optional

import numpy as np

from models.config import FocalConfig
from numerics.ops import sigmoid


def focal_loss(score, label, cfg: FocalConfig = FocalConfig(), alpha: Optional[float] = None):
    """-alpha * (1 - p)^focus * log(p), with p the probability given to the true class.

    `score` is the foreground probability, clamped to [clamp, 1 - clamp]; alpha defaults to the foreground or
    background weight of the config depending on the label.
    """
    score = np.clip(np.asarray(score, dtype=np.float64), cfg.clamp, 1.0 - cfg.clamp)
    label = np.asarray(label, dtype=bool)
    p = np.where(label, score, 1.0 - score)
    weight = np.where(label, cfg.alpha_fg, cfg.alpha_bg) if alpha is None else alpha
    loss = -weight * (1.0 - p) ** cfg.focus * np.log(p)
    return float(loss) if loss.ndim == 0 else loss


def focal_loss_logits(logits: np.ndarray, labels: np.ndarray,
                      cfg: FocalConfig = FocalConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise focal loss of sigmoid(logits) and its derivative w.r.t. the logits (zero where clamped)"""
    raw = sigmoid(logits)
    score = np.clip(raw, cfg.clamp, 1.0 - cfg.clamp)
    labels = np.asarray(labels, dtype=bool)
    p = np.where(labels, score, 1.0 - score)
    alpha = np.where(labels, cfg.alpha_fg, cfg.alpha_bg)
    log_p = np.log(p)
    loss = -alpha * (1.0 - p) ** cfg.focus * log_p
    if cfg.focus == 0:
        d_p = -alpha / p
    else:
        d_p = -alpha * (-cfg.focus * (1.0 - p) ** (cfg.focus - 1.0) * log_p + (1.0 - p) ** cfg.focus / p)
    inside = (raw > cfg.clamp) & (raw < 1.0 - cfg.clamp)
    d_score = np.where(labels, d_p, -d_p) * inside
    return loss, d_score * raw * (1.0 - raw)
