"""Adaptive exploitation: per-sample gating of the offline regularizer.

A minibatch is scored by U(s, pi(s)); the most uncertain samples keep the
conservative regularizer and the rest are trained with the plain online
objective. ``p`` is the share of the batch (in percent) released to the
online objective, so p = 0 is the full offline loss and p = 100 the pure
online loss.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .agents import actor_loss_td3bc, critic_loss_cql

MODES = ("deterministic", "categorical", "uniform")


@dataclass
class ExploitationConfig:
    p: float = 95.0
    mode: str = "deterministic"
    lambda_end_fraction: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.p <= 100.0:
            raise ValueError("p must lie in [0, 100]")
        if self.mode not in MODES:
            raise ValueError(f"unknown OOD selection mode {self.mode!r}")
        if not 0.0 <= self.lambda_end_fraction <= 1.0:
            raise ValueError("lambda end fraction must lie in [0, 1]")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


def ood_count(p, m):
    """Number of regularized samples: round((100 - p) * M / 100), halves rounded up."""
    return int(math.floor((100.0 - p) * m / 100.0 + 0.5))


def select_ood(scores, count, mode="deterministic", alpha=1.0, rng=None):
    """Mask marking ``count`` samples.

    deterministic: the highest scores (ties to the lower index); categorical:
    drawn without replacement with weights softmax(U / alpha); uniform: drawn
    without replacement with equal weights.
    """
    scores = np.asarray(scores, dtype=np.float64)
    m = len(scores)
    mask = np.zeros(m)
    if count <= 0:
        return mask
    if count >= m:
        mask[:] = 1.0
        return mask
    if mode == "deterministic":
        idx = np.argsort(-scores, kind="stable")[:count]
    else:
        # Gumbel top-k is exact sampling without replacement from the softmax.
        logits = scores / alpha if mode == "categorical" else np.zeros(m)
        keys = logits - np.log(-np.log(rng.uniform(size=m)))
        idx = np.argsort(-keys, kind="stable")[:count]
    mask[idx] = 1.0
    return mask


def identify_ood(estimator, states, policy_actions, cfg: ExploitationConfig, rng):
    """OOD mask over the batch from U(s, pi(s))."""
    u = estimator.score(states, policy_actions, rng)
    return select_ood(u, ood_count(cfg.p, len(u)), cfg.mode, cfg.alpha, rng)


def _check_mask(mask, m):
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (m,):
        raise ValueError(f"mask length {mask.shape} does not match batch size {m}")
    return mask


def adaptive_actor_loss_td3bc(actor, critic, batch, mask, lam, tape, normalize=False):
    """-mean Q(s, pi(s)) + lam * mean(mask * ||pi(s) - a||^2)."""
    mask = _check_mask(mask, len(batch))
    return actor_loss_td3bc(actor, critic, batch, tape, lam, normalize).total(mask)


def adaptive_critic_loss_cql(critic, actor, batch, mask, lam, targets, n_cql_samples, rng, tape):
    """TD loss + lam * mean(mask * CQL gap); the TD term is never gated."""
    mask = _check_mask(mask, len(batch))
    return critic_loss_cql(critic, actor, batch, targets, n_cql_samples, rng, tape, lam).total(mask)


def lambda_schedule(lam0, step, total_steps, end_fraction=1.0):
    """lam0 * (1 + (end_fraction - 1) * step / total_steps)."""
    if not 0 <= step <= total_steps:
        raise ValueError("step must lie in [0, total_steps]")
    if total_steps == 0:
        return lam0
    return lam0 * (1.0 + (end_fraction - 1.0) * step / total_steps)
