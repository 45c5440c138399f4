"""Ring buffers and the two-buffer offline-to-online replay (OORB)."""
from __future__ import annotations

import numpy as np

from .batch import TransitionBatch


class RingBuffer:
    """Fixed-capacity FIFO over columnar transition storage."""

    def __init__(self, capacity, state_dim, action_dim):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_dim))
        self.done = np.zeros(capacity)
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, s, a, r, s2, done):
        i = self.cursor
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s2[i] = s2
        self.done[i] = float(done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def extend(self, batch: TransitionBatch):
        """Bulk insert in order; equivalent to pushing each row."""
        n = len(batch)
        if n == 0:
            return
        if n >= self.capacity:
            batch = batch.take(slice(n - self.capacity, n))
            self.cursor = (self.cursor + n - self.capacity) % self.capacity
            n = self.capacity
        idx = (self.cursor + np.arange(n)) % self.capacity
        self.s[idx] = batch.s
        self.a[idx] = batch.a
        self.r[idx] = batch.r
        self.s2[idx] = batch.s2
        self.done[idx] = batch.done
        self.cursor = (self.cursor + n) % self.capacity
        self.size = min(self.size + n, self.capacity)

    def _order(self):
        # Physical slots from oldest to newest.
        if self.size < self.capacity:
            return np.arange(self.size)
        return (self.cursor + np.arange(self.capacity)) % self.capacity

    def contents(self) -> TransitionBatch:
        """Stored transitions, oldest first."""
        return self.gather(self._order())

    def gather(self, idx):
        return TransitionBatch(self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx])

    def sample(self, n, rng):
        if self.size == 0:
            raise ValueError("sample from an empty buffer")
        return self.gather(rng.integers(0, self.size, size=n))


class Oorb:
    """Online buffer B and dataset-seeded buffer D mixed per slot with P(B) = p."""

    def __init__(self, online: RingBuffer, offline: RingBuffer, p: float):
        if not 0.0 <= p <= 1.0:
            raise ValueError("p_OORB must lie in [0, 1]")
        self.online = online
        self.offline = offline
        self.p = float(p)

    @classmethod
    def from_dataset(cls, dataset_batch, state_dim, action_dim, p, online_capacity=5000,
                     offline_capacity=200_000, include_dataset=True):
        online = RingBuffer(online_capacity, state_dim, action_dim)
        offline = RingBuffer(offline_capacity, state_dim, action_dim)
        if include_dataset:
            offline.extend(dataset_batch)
        return cls(online, offline, p)

    def push(self, s, a, r, s2, done):
        self.online.push(s, a, r, s2, done)
        self.offline.push(s, a, r, s2, done)

    def sample_sources(self, n, rng):
        """Per-slot Bernoulli draws: True = online buffer. Empty B falls back to D."""
        from_b = rng.uniform(size=n) < self.p
        if len(self.online) == 0:
            from_b[:] = False
        return from_b

    def sample(self, n, rng):
        if len(self.online) == 0 and len(self.offline) == 0:
            raise ValueError("OORB: both buffers are empty")
        from_b = self.sample_sources(n, rng)
        if len(self.offline) == 0:
            from_b[:] = True
        nb = int(from_b.sum())
        ib = rng.integers(0, max(len(self.online), 1), size=nb)
        id_ = rng.integers(0, max(len(self.offline), 1), size=n - nb)
        out = TransitionBatch(
            np.empty((n, self.online.state_dim)), np.empty((n, self.online.action_dim)),
            np.empty(n), np.empty((n, self.online.state_dim)), np.empty(n),
        )
        for buf, sel, idx in ((self.online, from_b, ib), (self.offline, ~from_b, id_)):
            if len(idx):
                out.s[sel] = buf.s[idx]
                out.a[sel] = buf.a[idx]
                out.r[sel] = buf.r[idx]
                out.s2[sel] = buf.s2[idx]
                out.done[sel] = buf.done[idx]
        return out
