"""Scalar utilities shared by exploration, exploitation and the losses."""
from __future__ import annotations

import numpy as np

from . import tape as T


def softmax_temp(logits, alpha: float) -> np.ndarray:
    """P(i) = exp(l_i / alpha) / sum_j exp(l_j / alpha), max-shifted."""
    if not alpha > 0.0:
        raise ValueError(f"softmax temperature must be positive, got {alpha}")
    z = np.asarray(logits, dtype=np.float64) / alpha
    if not np.isfinite(z).all():
        raise ValueError("softmax_temp: logits must be finite")
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def logsumexp(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("logsumexp of an empty sequence")
    m = v.max()
    return float(m + np.log(np.exp(v - m).sum()))


def gaussian_reparam_sample(mean, log_std, noise):
    """mean + exp(log_std) * noise, differentiable in mean and log_std."""
    if np.shape(T.as_value(mean)) != np.shape(T.as_value(log_std)) or np.shape(
        T.as_value(mean)
    ) != np.shape(noise):
        raise ValueError("gaussian_reparam_sample: shape mismatch")
    return T.add(mean, T.mul(T.exp(log_std), noise))


def soft_clamp(x, low: float, high: float):
    """Smooth squashing of ``x`` into (low, high) via tanh."""
    return T.add(low, T.mul(0.5 * (high - low), T.add(T.tanh(x), 1.0)))
