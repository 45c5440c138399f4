"""Toy continuous-control environments.

``pointmass-dense``
    2-D point in [-1, 1]^2 steering to a fixed goal; reward is the negative
    distance to the goal after each step (MuJoCo-like dense signal).

``maze-sparse``
    The same integrator inside a walled U-maze; reward 1 only on entering
    the goal cell (AntMaze-like sparse signal that requires stitching). The
    layout, with row 0 at the top (y = +1)::

        S . .
        # # M
        G . .

    ``S`` start cell, ``M`` the stitching midpoint, ``G`` goal, ``#`` wall.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DT = 0.1
GOAL_RADIUS = 0.1

MAZE_LAYOUT = (
    "S..",
    "##M",
    "G..",
)


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    action_bound: float
    max_episode_steps: int
    reward: str  # "dense" | "sparse"

    def __post_init__(self):
        if self.state_dim <= 0 or self.action_dim <= 0:
            raise ValueError("env dims must be positive")
        if self.action_bound <= 0:
            raise ValueError("action bound must be positive")
        if self.max_episode_steps < 1:
            raise ValueError("max episode length must be >= 1")
        if self.reward not in ("dense", "sparse"):
            raise ValueError(f"unknown reward tag {self.reward!r}")


class EpisodeDone(RuntimeError):
    pass


class _Env:
    spec: EnvSpec

    def __init__(self):
        self.obs = None
        self.t = 0
        self.episode_seed = None
        self._done = True

    def _start(self, rng):
        raise NotImplementedError

    def reset(self, seed: int):
        rng = np.random.default_rng(seed)
        self.obs = self._start(rng)
        self.t = 0
        self.episode_seed = int(seed)
        self._done = False
        return self.obs.copy()

    def step(self, action):
        """Advance one step. Returns ``(obs, reward, done, info)``.

        ``info["terminal"]`` is True only for true termination (goal reached),
        never for the step-limit timeout.
        """
        if self._done:
            raise EpisodeDone("step() called after the episode finished; call reset()")
        a = np.clip(np.asarray(action, dtype=np.float64), -self.spec.action_bound, self.spec.action_bound)
        nxt = self._move(self.obs, a)
        reward, terminal = self._reward(nxt)
        self.t += 1
        timeout = self.t >= self.spec.max_episode_steps
        self.obs = nxt
        self._done = terminal or timeout
        return nxt.copy(), reward, self._done, {"terminal": terminal, "timeout": timeout and not terminal}


class PointMass2D(_Env):
    spec = EnvSpec("pointmass-dense", 2, 2, 1.0, 100, "dense")
    goal = np.array([0.5, 0.5])

    def _start(self, rng):
        while True:
            s = rng.uniform(-1.0, 1.0, size=2)
            if np.linalg.norm(s - self.goal) >= 4 * GOAL_RADIUS:
                return s

    def _move(self, s, a):
        return np.clip(s + DT * a, -1.0, 1.0)

    def _reward(self, s):
        dist = float(np.linalg.norm(s - self.goal))
        return -dist, dist < GOAL_RADIUS


class SparseMaze(_Env):
    spec = EnvSpec("maze-sparse", 2, 2, 1.0, 200, "sparse")
    layout = MAZE_LAYOUT
    n_rows = len(MAZE_LAYOUT)
    n_cols = len(MAZE_LAYOUT[0])
    start_jitter = 0.1

    def __init__(self):
        super().__init__()
        self.cell_w = 2.0 / self.n_cols
        self.cell_h = 2.0 / self.n_rows
        self.start_cell = self._find("S")
        self.goal_cell = self._find("G")
        self.mid_cell = self._find("M")
        self.route = maze_route(self)

    def _find(self, ch):
        for r, row in enumerate(self.layout):
            c = row.find(ch)
            if c >= 0:
                return (r, c)
        raise ValueError(ch)

    def cell_of(self, s):
        c = int(np.floor((s[0] + 1.0) / self.cell_w))
        r = int(np.floor((1.0 - s[1]) / self.cell_h))
        return (min(max(r, 0), self.n_rows - 1), min(max(c, 0), self.n_cols - 1))

    def cell_center(self, cell):
        r, c = cell
        return np.array([-1.0 + (c + 0.5) * self.cell_w, 1.0 - (r + 0.5) * self.cell_h])

    def is_wall(self, s):
        r, c = self.cell_of(s)
        return self.layout[r][c] == "#"

    def sample_in_cell(self, cell, rng, margin=0.05):
        center = self.cell_center(cell)
        half = np.array([self.cell_w, self.cell_h]) / 2 - margin
        return center + rng.uniform(-1.0, 1.0, size=2) * half

    def _start(self, rng):
        return self.cell_center(self.start_cell) + rng.uniform(-self.start_jitter, self.start_jitter, size=2)

    def _move(self, s, a):
        # Per-axis collision: a blocked component keeps its old coordinate.
        nxt = s.copy()
        trial = np.clip(s + DT * a, -1.0, 1.0)
        cand = np.array([trial[0], s[1]])
        if not self.is_wall(cand):
            nxt[0] = trial[0]
        cand = np.array([nxt[0], trial[1]])
        if not self.is_wall(cand):
            nxt[1] = trial[1]
        return nxt

    def _reward(self, s):
        reached = self.cell_of(s) == self.goal_cell
        return (1.0 if reached else 0.0), reached


ENVS = {
    "pointmass-dense": PointMass2D,
    "maze-sparse": SparseMaze,
}
ENV_NAMES = tuple(ENVS)


def make_env(name: str) -> _Env:
    try:
        return ENVS[name]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVS)}") from None


def env_spec(name: str) -> EnvSpec:
    return make_env(name).spec


def scripted_action(env, s, rng=None, noise=0.0, waypoints=None):
    """Near-optimal controller used for reference returns and stitch data.

    Steers at full speed toward the next waypoint (the goal for the point
    mass, corridor cell centers for the maze).
    """
    if isinstance(env, PointMass2D):
        target = env.goal
    else:
        target = _maze_waypoint(env, s) if waypoints is None else waypoints(s)
    a = np.clip((target - s) / DT, -1.0, 1.0)
    if noise > 0.0:
        a = np.clip(a + rng.normal(0.0, noise, size=a.shape), -1.0, 1.0)
    return a


def maze_route(env):
    """Cell sequence from start to goal through the open corridor."""
    from collections import deque

    start, goal = env.start_cell, env.goal_cell
    prev = {start: None}
    queue = deque([start])
    while queue:
        cell = queue.popleft()
        if cell == goal:
            break
        r, c = cell
        for nr, nc in ((r + 1, c), (r - 1, c), (r, c + 1), (r, c - 1)):
            if 0 <= nr < env.n_rows and 0 <= nc < env.n_cols and env.layout[nr][nc] != "#":
                if (nr, nc) not in prev:
                    prev[(nr, nc)] = cell
                    queue.append((nr, nc))
    path = [goal]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])
    return path[::-1]


def _maze_waypoint(env, s):
    route = env.route
    cell = env.cell_of(s)
    idx = route.index(cell) if cell in route else 0
    nxt = route[min(idx + 1, len(route) - 1)]
    return env.cell_center(nxt)


def place(env, state):
    """Start an episode from an arbitrary in-box state (dataset construction only)."""
    env.obs = np.asarray(state, dtype=np.float64).copy()
    env.t = 0
    env.episode_seed = None
    env._done = False
    return env.obs.copy()


def episode_seeds(seed, episodes):
    """Fixed per-episode reset seeds derived from one evaluation seed."""
    return [int(x) for x in np.random.SeedSequence([int(seed), 0xE7A1]).generate_state(episodes)]


def rollout_returns(policy, env, episodes, seed):
    """Undiscounted returns of ``policy(obs) -> action`` over fixed episode seeds."""
    returns = []
    for ep_seed in episode_seeds(seed, episodes):
        s = env.reset(ep_seed)
        total, done = 0.0, False
        while not done:
            s, r, done, _ = env.step(policy(s))
            total += r
        returns.append(total)
    return np.array(returns)
