import math

import numpy as np

INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gaussian_pdf(x, mean, scale: float):
    z = (np.asarray(x, dtype=np.float64) - mean) / scale
    return INV_SQRT_2PI / scale * np.exp(-0.5 * z * z)


def gate_weights(sampled_ranges: np.ndarray, center_ranges: np.ndarray, gamma: float) -> np.ndarray:
    """Gaussian pdf of every sampled range [H, W, N] around its pixel's own range [H, W], scale gamma in meters"""
    return gaussian_pdf(sampled_ranges, center_ranges[..., None], gamma)


def soft_range_gate(sampled: np.ndarray, sampled_ranges: np.ndarray, center_ranges: np.ndarray,
                    gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Down-weights sampled features [H, W, N, C] whose range differs from the center pixel's; returns
    (gated features, weights)"""
    weights = gate_weights(sampled_ranges, center_ranges, gamma)
    return sampled * weights[..., None], weights


def soft_range_gate_vjp(upstream: np.ndarray, sampled: np.ndarray, sampled_ranges: np.ndarray,
                        center_ranges: np.ndarray, gamma: float,
                        weights: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Gradients w.r.t. the sampled features, the sampled ranges and gamma"""
    d_weights = np.sum(upstream * sampled, axis=-1)
    diff = sampled_ranges - center_ranges[..., None]
    d_sampled_ranges = d_weights * weights * (-diff / gamma ** 2)
    d_gamma = float(np.sum(d_weights * weights * (diff ** 2 / gamma ** 3 - 1.0 / gamma)))
    return upstream * weights[..., None], d_sampled_ranges, d_gamma
