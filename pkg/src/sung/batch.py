"""Transition records shared by datasets, buffers and the losses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool


@dataclass
class TransitionBatch:
    """Column arrays ``s (M, ds)``, ``a (M, da)``, ``r (M,)``, ``s2 (M, ds)``, ``done (M,)``.

    ``done`` is stored as float64 (1.0 = true termination) so it can mask the
    bootstrap term directly.
    """
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        self.r = np.asarray(self.r, dtype=np.float64).reshape(-1)
        self.s2 = np.asarray(self.s2, dtype=np.float64)
        self.done = np.asarray(self.done, dtype=np.float64).reshape(-1)
        m = self.s.shape[0]
        if not (self.a.shape[0] == self.r.shape[0] == self.s2.shape[0] == self.done.shape[0] == m):
            raise ValueError("TransitionBatch: column lengths differ")
        if self.s.shape != self.s2.shape:
            raise ValueError("TransitionBatch: state and next-state shapes differ")

    def __len__(self):
        return self.s.shape[0]

    def take(self, idx):
        return TransitionBatch(self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx])

    @classmethod
    def from_transitions(cls, items):
        items = list(items)
        return cls(
            np.array([t.state for t in items]),
            np.array([t.action for t in items]),
            np.array([t.reward for t in items]),
            np.array([t.next_state for t in items]),
            np.array([t.done for t in items], dtype=np.float64),
        )
