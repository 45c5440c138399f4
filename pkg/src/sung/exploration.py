"""Optimistic bi-level behaviour policy.

Candidates are drawn around the current policy, the top-k by one criterion
survive as finalists, and the behaviour action is sampled from a softmax over
the other criterion.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import softmax_temp

ORDERS = ("qu", "uq")


@dataclass
class ExplorationConfig:
    n: int = 100
    k: int = 10
    order: str = "qu"
    alpha: float = 1.0
    delta: float = 0.2

    def __post_init__(self):
        if self.n < 1 or not 1 <= self.k <= self.n:
            raise ValueError(f"need 1 <= k <= N, got k={self.k}, N={self.n}")
        if self.order not in ORDERS:
            raise ValueError(f"unknown ranking order {self.order!r}")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")


@dataclass
class CandidateSet:
    actions: np.ndarray   # (N, da)
    q: np.ndarray         # (N,) min over both critics
    u: np.ndarray         # (N,)

    def __len__(self):
        return len(self.actions)


def default_order_for(backbone, regularizer):
    """(order, k): Q-first for TD3+BC; uncertainty-first for CQL, whose Q values collapse off-support."""
    table = {("td3", "bc"): ("qu", 10), ("sac", "cql"): ("uq", 20)}
    try:
        return table[(backbone, regularizer)]
    except KeyError:
        raise ValueError(f"no default ranking order for {backbone}+{regularizer}") from None


def candidate_actions(actor, s, cfg, rng):
    s2 = np.atleast_2d(np.asarray(s, dtype=np.float64))
    if actor.stochastic:
        rows = np.repeat(s2, cfg.n, axis=0)
        a, _ = actor.sample(rows, rng.standard_normal((cfg.n, actor.action_dim)))
        return a
    base = actor.deterministic(s2)[0]
    eps = rng.normal(0.0, cfg.delta, size=(cfg.n, actor.action_dim)) if cfg.delta > 0 else 0.0
    return np.clip(np.broadcast_to(base, (cfg.n, actor.action_dim)) + eps, -actor.bound, actor.bound)


def generate_candidates(actor, critic, estimator, s, cfg, rng) -> CandidateSet:
    actions = candidate_actions(actor, s, cfg, rng)
    rows = np.repeat(np.atleast_2d(s), len(actions), axis=0)
    q = critic.min_q(rows, actions)
    u = estimator.score(rows, actions, rng)
    return CandidateSet(actions, q, u)


def finalist_indices(rank_scores, k):
    """Indices of the k highest scores; ties go to the lower candidate index."""
    order = np.argsort(-np.asarray(rank_scores), kind="stable")
    return order[:k]


def selection_probs(candidates, cfg):
    """(finalist indices, probabilities) of the second-stage softmax."""
    rank, sample = (candidates.q, candidates.u) if cfg.order == "qu" else (candidates.u, candidates.q)
    fin = finalist_indices(rank, cfg.k)
    return fin, softmax_temp(sample[fin], cfg.alpha)


def select_index(candidates, cfg, rng):
    fin, probs = selection_probs(candidates, cfg)
    if len(fin) == 1:
        return int(fin[0])
    return int(fin[rng.choice(len(fin), p=probs)])


def select_behavior_action(candidates, cfg, rng):
    return candidates.actions[select_index(candidates, cfg, rng)]


def default_exploration_action(actor, s, delta, rng):
    """Backbone exploration: Gaussian noise around pi(s) for TD3, a policy sample for SAC."""
    s2 = np.atleast_2d(np.asarray(s, dtype=np.float64))
    if actor.stochastic:
        a, _ = actor.sample(s2, rng.standard_normal((1, actor.action_dim)))
        return a[0]
    a = actor.deterministic(s2)[0] + rng.normal(0.0, delta, size=actor.action_dim)
    return np.clip(a, -actor.bound, actor.bound)
