"""Offline datasets: tiered generation, binary persistence, state normalization.

File layout (little-endian)::

    b"SUNGDS1\\0"
    u32 name length, UTF-8 env name
    u8  tier (0 random, 1 medium, 2 medium-replay, 3 stitch)
    u64 transition count n
    u32 state dim ds, u32 action dim da
    u8  normalization enabled
    f64[ds] mean, f64[ds] std
    f64[n*ds] states, f64[n*da] actions, f64[n] rewards, f64[n*ds] next states
    u8[n] done flags
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .batch import TransitionBatch
from .envs import (
    SparseMaze, env_spec, make_env, place, rollout_returns, scripted_action,
)

MAGIC = b"SUNGDS1\0"
TIERS = ("random", "medium", "medium-replay", "stitch")
MIN_SIZE = 1000
STD_FLOOR = 1e-3

# (random-policy return, reference-expert return) per env, measured once with
# rollout_returns(..., episodes=200, seed=0); the expert is the scripted controller.
REFERENCE_RETURNS = {
    "pointmass-dense": (-100.67875810959089, -5.115780509296762),
    "maze-sparse": (0.0, 1.0),
}


class DatasetError(ValueError):
    pass


def normalized_score(env_name, ret):
    lo, hi = REFERENCE_RETURNS[env_name]
    return (np.asarray(ret) - lo) / (hi - lo)


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    enabled: bool

    @classmethod
    def identity(cls, dim):
        return cls(np.zeros(dim), np.ones(dim), False)

    @classmethod
    def fit(cls, states, enabled=True):
        states = np.asarray(states, dtype=np.float64)
        if not enabled:
            return cls.identity(states.shape[1])
        return cls(states.mean(axis=0), np.maximum(states.std(axis=0), STD_FLOOR), True)

    def __eq__(self, other):
        return (
            isinstance(other, NormStats)
            and self.enabled == other.enabled
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.std, other.std)
        )


def normalize_state(stats: NormStats, s):
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1] != stats.mean.shape[0]:
        raise ValueError("normalize_state: dim mismatch")
    if not stats.enabled:
        return s
    return (s - stats.mean) / stats.std


@dataclass
class OfflineDataset:
    env_name: str
    tier: str
    data: TransitionBatch          # raw (unnormalized) states
    stats: NormStats

    def __len__(self):
        return len(self.data)

    def validate(self):
        if len(self) < MIN_SIZE:
            raise DatasetError(f"size >= {MIN_SIZE} violated: dataset holds {len(self)} transitions")
        return self

    def normalized(self) -> TransitionBatch:
        d = self.data
        return TransitionBatch(normalize_state(self.stats, d.s), d.a, d.r,
                               normalize_state(self.stats, d.s2), d.done)

    def trajectory_bounds(self):
        """[start, end) index pairs; a trajectory ends on done or a state discontinuity."""
        d = self.data
        n = len(d)
        if n == 0:
            return []
        ends = d.done.astype(bool).copy()
        ends[:-1] |= np.any(d.s2[:-1] != d.s[1:], axis=1)
        ends[-1] = True
        stops = np.flatnonzero(ends) + 1
        starts = np.concatenate([[0], stops[:-1]])
        return list(zip(starts.tolist(), stops.tolist()))

    def trajectory_returns(self):
        return np.array([self.data.r[a:b].sum() for a, b in self.trajectory_bounds()])

    def __eq__(self, other):
        if not isinstance(other, OfflineDataset):
            return NotImplemented
        a, b = self.data, other.data
        return (
            self.env_name == other.env_name and self.tier == other.tier and self.stats == other.stats
            and all(np.array_equal(x, y) for x, y in
                    ((a.s, b.s), (a.a, b.a), (a.r, b.r), (a.s2, b.s2), (a.done, b.done)))
        )


# ------------------------------------------------------------------ rollouts

class _Collector:
    def __init__(self):
        self.cols = ([], [], [], [], [])

    def add(self, s, a, r, s2, terminal):
        for col, v in zip(self.cols, (s, a, r, s2, terminal)):
            col.append(v)

    def __len__(self):
        return len(self.cols[0])

    def batch(self, limit=None):
        s, a, r, s2, d = (np.array(c[:limit]) for c in self.cols)
        return TransitionBatch(s, a, r, s2, d.astype(np.float64))


def _rollouts(env, policy, size, rng, out=None):
    """Run full episodes (the last one cut at ``size``) with ``policy(s, rng)``."""
    spec = env.spec
    out = out or _Collector()
    while len(out) < size:
        s = env.reset(int(rng.integers(2**31)))
        done = False
        while not done and len(out) < size:
            a = policy(s, rng)
            s2, r, done, info = env.step(a)
            out.add(s, np.asarray(a, dtype=np.float64), r, s2, info["terminal"])
            s = s2
    return out


def _random_policy(env):
    bound = env.spec.action_bound

    def policy(s, rng):
        return rng.uniform(-bound, bound, size=env.spec.action_dim)

    return policy


def train_medium_policy(env, seed, threshold=0.5, eval_every=200, eval_episodes=5,
                        max_steps=30_000, start_steps=1000, expl_noise=0.1, hidden=(64, 64)):
    """Online TD3 until the normalized eval score first reaches ``threshold``.

    Returns (agent, replay collector, steps used, score reached). Training
    stops at ``max_steps`` if the threshold is never met.
    """
    from .agents import Agent, default_agent_config
    from .replay import RingBuffer

    spec = env.spec
    rng = np.random.default_rng(seed)
    cfg = default_agent_config("none", hidden=hidden)
    agent = Agent(cfg, spec.state_dim, spec.action_dim, spec.action_bound, rng)
    buf = RingBuffer(max_steps, spec.state_dim, spec.action_dim)
    replay = _Collector()
    eval_env = make_env(spec.name)
    s, done = env.reset(int(rng.integers(2**31))), False
    score = -np.inf
    for step in range(1, max_steps + 1):
        if step <= start_steps:
            a = rng.uniform(-spec.action_bound, spec.action_bound, size=spec.action_dim)
        else:
            a = agent.act(s) + rng.normal(0.0, expl_noise * spec.action_bound, size=spec.action_dim)
            a = np.clip(a, -spec.action_bound, spec.action_bound)
        s2, r, done, info = env.step(a)
        buf.push(s, a, r, s2, info["terminal"])
        replay.add(s, a, r, s2, info["terminal"])
        s = s2
        if done:
            s, done = env.reset(int(rng.integers(2**31))), False
        if step > start_steps:
            agent.update(buf.sample(cfg.batch_size, rng), rng)
        if step % eval_every == 0 and step > start_steps:
            rets = rollout_returns(agent.act, eval_env, eval_episodes, seed + step)
            score = float(normalized_score(spec.name, rets.mean()))
            if score >= threshold:
                return agent, replay, step, score
    return agent, replay, max_steps, score


def _stitch_segments(env: SparseMaze, size, rng, noise=0.3, max_len=100):
    """Disjoint start->mid and mid->goal fragments; no fragment spans start and goal."""
    route = env.route
    mid = route.index(env.mid_cell)
    first, second = route[: mid + 1], route[mid:]
    out = _Collector()

    def waypoint_on(leg):
        def fn(s):
            cell = env.cell_of(s)
            i = leg.index(cell) if cell in leg else 0
            return env.cell_center(leg[min(i + 1, len(leg) - 1)])
        return fn

    leg_a, leg_b = waypoint_on(first), waypoint_on(second)
    mid_center = env.cell_center(env.mid_cell)
    toggle = 0
    while len(out) < size:
        if toggle == 0:
            s = env.reset(int(rng.integers(2**31)))
            target = leg_a
        else:
            s = place(env, env.sample_in_cell(env.mid_cell, rng))
            target = leg_b
        for _ in range(max_len):
            if len(out) >= size:
                break
            a = scripted_action(env, s, rng, noise, waypoints=target)
            s2, r, done, info = env.step(a)
            out.add(s, a, r, s2, info["terminal"])
            s = s2
            if done:
                break
            if toggle == 0 and env.cell_of(s) == env.mid_cell and np.linalg.norm(s - mid_center) < 0.15:
                break
        toggle ^= 1
    return out


def generate_dataset(env_name, tier, size, seed, medium_kwargs=None) -> OfflineDataset:
    """Build a dataset of exactly ``size`` transitions for one behaviour tier."""
    if tier not in TIERS:
        raise DatasetError(f"unknown tier {tier!r}; choose from {TIERS}")
    if size < MIN_SIZE:
        raise DatasetError(f"size >= {MIN_SIZE} violated: requested {size}")
    env = make_env(env_name)
    rng = np.random.default_rng([int(seed), TIERS.index(tier)])
    info = {}
    if tier == "random":
        col = _rollouts(env, _random_policy(env), size, rng)
    elif tier == "stitch":
        if not isinstance(env, SparseMaze):
            raise DatasetError("the stitch tier exists only for maze-sparse")
        col = _stitch_segments(env, size, rng)
    else:
        kw = dict(medium_kwargs or {})
        agent, replay, steps, score = train_medium_policy(make_env(env_name), int(rng.integers(2**31)), **kw)
        info.update(medium_steps=steps, medium_score=score)
        bound = env.spec.action_bound

        def noisy(s, r):
            a = agent.act(s) + r.normal(0.0, 0.1 * bound, size=env.spec.action_dim)
            return np.clip(a, -bound, bound)

        if tier == "medium":
            col = _rollouts(env, noisy, size, rng)
        else:
            if len(replay) < size:
                col = _rollouts(env, noisy, size, rng, out=replay)
            else:
                for c in replay.cols:
                    del c[: len(replay) - size]
                col = replay
    batch = col.batch(size)
    spec = env.spec
    stats = NormStats.fit(batch.s, enabled=spec.reward == "dense")
    ds = OfflineDataset(env_name, tier, batch, stats)
    ds.info = info
    if tier in ("medium", "medium-replay") and spec.reward == "dense":
        # Tier ordering, asserted with the generator's own measurements.
        rand = _rollouts(env, _random_policy(env), size, rng).batch(size)
        rand_ret = OfflineDataset(env_name, "random", rand, stats).trajectory_returns().mean()
        med_ret = ds.trajectory_returns().mean()
        info.update(random_return=float(rand_ret), tier_return=float(med_ret))
        if not rand_ret < med_ret:
            raise DatasetError(f"tier ordering violated: random {rand_ret:.3f} >= {tier} {med_ret:.3f}")
    return ds


# --------------------------------------------------------------- persistence

def save_dataset(ds: OfflineDataset, path):
    d = ds.data
    n, sd = d.s.shape
    ad = d.a.shape[1]
    name = ds.env_name.encode("utf-8")
    parts = [
        MAGIC,
        struct.pack("<I", len(name)), name,
        struct.pack("<BQII", TIERS.index(ds.tier), n, sd, ad),
        struct.pack("<B", 1 if ds.stats.enabled else 0),
        np.ascontiguousarray(ds.stats.mean, "<f8").tobytes(),
        np.ascontiguousarray(ds.stats.std, "<f8").tobytes(),
    ]
    for col in (d.s, d.a, d.r, d.s2):
        parts.append(np.ascontiguousarray(col, "<f8").tobytes())
    parts.append(d.done.astype(np.uint8).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_dataset(path) -> OfflineDataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise DatasetError("bad magic")
    pos = 8

    def take(k):
        nonlocal pos
        if pos + k > len(raw):
            raise DatasetError("truncated dataset file")
        chunk = raw[pos:pos + k]
        pos += k
        return chunk

    (name_len,) = struct.unpack("<I", take(4))
    env_name = take(name_len).decode("utf-8")
    tier_id, n, sd, ad = struct.unpack("<BQII", take(17))
    (enabled,) = struct.unpack("<B", take(1))
    if tier_id >= len(TIERS):
        raise DatasetError(f"unknown tier tag {tier_id}")
    try:
        spec = env_spec(env_name)
    except ValueError as exc:
        raise DatasetError(str(exc)) from None
    if (sd, ad) != (spec.state_dim, spec.action_dim):
        raise DatasetError(
            f"dim mismatch versus header: file has ({sd}, {ad}), {env_name} expects "
            f"({spec.state_dim}, {spec.action_dim})"
        )

    def floats(count, shape):
        return np.frombuffer(take(8 * count), "<f8").astype(np.float64).reshape(shape)

    mean = floats(sd, (sd,))
    std = floats(sd, (sd,))
    s = floats(n * sd, (n, sd))
    a = floats(n * ad, (n, ad))
    r = floats(n, (n,))
    s2 = floats(n * sd, (n, sd))
    done = np.frombuffer(take(n), np.uint8).astype(np.float64)
    if pos != len(raw):
        raise DatasetError("trailing bytes after dataset body")
    return OfflineDataset(env_name, TIERS[tier_id], TransitionBatch(s, a, r, s2, done),
                          NormStats(mean, std, bool(enabled)))
