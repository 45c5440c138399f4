import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sung.data import REFERENCE_RETURNS
from sung.envs import (
    EpisodeDone, PointMass2D, SparseMaze, make_env, place, rollout_returns, scripted_action,
)

seeds = st.integers(0, 2**31 - 1)
actions = st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), min_size=1, max_size=60)


def test_reset_deterministic():
    for name in ("pointmass-dense", "maze-sparse"):
        a, b = make_env(name), make_env(name)
        assert np.array_equal(a.reset(11), b.reset(11))


def test_maze_start_cell_not_goal():
    env = SparseMaze()
    for seed in range(50):
        cell = env.cell_of(env.reset(seed))
        assert cell == env.start_cell != env.goal_cell


def test_pointmass_dynamics_example():
    env = PointMass2D()
    place(env, [0.0, 0.0])
    s2, _, _, _ = env.step([1.0, 0.0])
    assert np.allclose(s2, [0.1, 0.0])


def test_pointmass_goal_reward_zero():
    env = PointMass2D()
    env.goal = np.array([0.1, 0.0])
    place(env, [0.0, 0.0])
    s2, r, done, info = env.step([1.0, 0.0])
    assert r == pytest.approx(0.0, abs=1e-15) and done and info["terminal"]


def test_maze_wall_blocks_coordinate():
    env = SparseMaze()
    # Just above the wall row, pushing straight down into it.
    s = np.array([-0.7, 1.0 / 3 + 0.02])
    place(env, s)
    s2, r, done, _ = env.step([0.0, -1.0])
    assert s2[1] == s[1] and s2[0] == s[0] and r == 0.0 and not done


def test_actions_clipped():
    env = PointMass2D()
    place(env, [0.0, 0.0])
    s2, _, _, _ = env.step([30.0, -30.0])
    assert np.allclose(s2, [0.1, -0.1])


def test_step_after_done_raises():
    env = PointMass2D()
    env.reset(0)
    done = False
    while not done:
        _, _, done, info = env.step([0.0, 0.0])
    assert info["timeout"] and not info["terminal"]
    with pytest.raises(EpisodeDone):
        env.step([0.0, 0.0])


def test_unknown_env():
    with pytest.raises(ValueError):
        make_env("cartpole")


@settings(max_examples=60, deadline=None)
@given(seeds, actions)
def test_observation_box_and_reward_bounds(seed, acts):
    for env in (PointMass2D(), SparseMaze()):
        s = env.reset(seed)
        assert np.all(np.abs(s) <= 1.0)
        for a in acts:
            s, r, done, _ = env.step(a)
            assert np.all(np.abs(s) <= 1.0)
            if env.spec.reward == "dense":
                assert -2 * math.sqrt(2) <= r <= 0.0
            else:
                assert r in (0.0, 1.0)
                assert not env.is_wall(s)
            if done:
                break


@settings(max_examples=30, deadline=None)
@given(seeds, actions)
def test_trajectory_determinism(seed, acts):
    for name in ("pointmass-dense", "maze-sparse"):
        runs = []
        for _ in range(2):
            env = make_env(name)
            out = [env.reset(seed).tolist()]
            for a in acts:
                s, r, done, _ = env.step(a)
                out.append((s.tolist(), r))
                if done:
                    break
            runs.append(out)
        assert runs[0] == runs[1]


def test_maze_stitching_structure():
    env = SparseMaze()
    route = env.route
    assert route[0] == env.start_cell and route[-1] == env.goal_cell
    assert env.mid_cell in route[1:-1]
    # A full scripted run passes through the midpoint and reaches the goal.
    s, done, cells = env.reset(0), False, set()
    while not done:
        s, r, done, _ = env.step(scripted_action(env, s))
        cells.add(env.cell_of(s))
    assert r == 1.0 and env.mid_cell in cells


def test_reference_returns_remeasured():
    for name, (rand_ret, ref_ret) in REFERENCE_RETURNS.items():
        env = make_env(name)
        bound = env.spec.action_bound
        rng = np.random.default_rng(0)
        got_ref = rollout_returns(lambda s: scripted_action(env, s), env, 200, 0).mean()
        got_rand = rollout_returns(lambda s: rng.uniform(-bound, bound, 2), env, 200, 0).mean()
        assert got_ref == pytest.approx(ref_ret, abs=1e-9)
        assert got_rand == pytest.approx(rand_ret, abs=1e-9)
