import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from sung.batch import Transition, TransitionBatch
from sung.data import (
    MAGIC, DatasetError, NormStats, OfflineDataset, generate_dataset, load_dataset,
    normalize_state, save_dataset,
)
from sung.envs import SparseMaze


@pytest.fixture(scope="module")
def random_pm():
    return generate_dataset("pointmass-dense", "random", 5000, 0)


@pytest.fixture(scope="module")
def medium_pm():
    return generate_dataset("pointmass-dense", "medium", 5000, 0)


@pytest.fixture(scope="module")
def stitch():
    return generate_dataset("maze-sparse", "stitch", 4000, 0)


def test_exact_size(random_pm, medium_pm, stitch):
    assert len(random_pm) == 5000 and len(medium_pm) == 5000 and len(stitch) == 4000


def test_tier_ordering(random_pm, medium_pm):
    assert random_pm.trajectory_returns().mean() < medium_pm.trajectory_returns().mean()
    assert medium_pm.info["random_return"] < medium_pm.info["tier_return"]
    assert medium_pm.info["medium_score"] >= 0.5


def test_medium_replay_tier():
    ds = generate_dataset("pointmass-dense", "medium-replay", 3000, 1)
    assert len(ds) == 3000 and ds.tier == "medium-replay"


def test_stitch_has_no_start_to_goal_trajectory(stitch):
    env = SparseMaze()
    d = stitch.data
    bounds = stitch.trajectory_bounds()
    assert len(bounds) > 10
    for a, b in bounds:
        cells = {env.cell_of(s) for s in d.s[a:b]} | {env.cell_of(s) for s in d.s2[a:b]}
        assert not (env.start_cell in cells and env.goal_cell in cells)
    # Both halves are present, so stitching is possible.
    assert d.r.sum() > 0
    assert any(env.cell_of(s) == env.start_cell for s in d.s)


def test_stitch_only_for_maze():
    with pytest.raises(DatasetError):
        generate_dataset("pointmass-dense", "stitch", 1000, 0)


def test_size_and_tier_checks():
    with pytest.raises(DatasetError, match="size >= 1000 violated"):
        generate_dataset("pointmass-dense", "random", 10, 0)
    with pytest.raises(DatasetError):
        generate_dataset("pointmass-dense", "expert", 1000, 0)


def test_normalization_per_env(random_pm, stitch):
    assert random_pm.stats.enabled and not stitch.stats.enabled
    s = random_pm.normalized().s
    assert np.max(np.abs(s.mean(axis=0))) < 1e-9
    assert np.max(np.abs(s.std(axis=0) - 1.0)) < 1e-9
    assert np.array_equal(stitch.normalized().s, stitch.data.s)


def test_normalize_state_examples():
    stats = NormStats(np.array([0.0]), np.array([2.0]), True)
    assert normalize_state(stats, np.array([4.0])).tolist() == [2.0]
    m = np.array([0.3, -0.2])
    assert np.all(normalize_state(NormStats(m, np.ones(2), True), m) == 0.0)
    x = np.array([5.0, 7.0])
    assert np.array_equal(normalize_state(NormStats.identity(2), x), x)
    with pytest.raises(ValueError):
        normalize_state(NormStats.identity(3), x)


def test_std_floor():
    stats = NormStats.fit(np.ones((10, 2)))
    assert np.all(stats.std == 1e-3)


def test_roundtrip(tmp_path, random_pm, stitch):
    for ds in (random_pm, stitch):
        path = tmp_path / f"{ds.tier}.ds"
        save_dataset(ds, path)
        assert load_dataset(path) == ds


def test_file_layout_prefix(tmp_path, random_pm):
    path = tmp_path / "x.ds"
    save_dataset(random_pm, path)
    raw = path.read_bytes()
    assert raw[:8] == MAGIC
    name = b"pointmass-dense"
    assert raw[8:12] == len(name).to_bytes(4, "little") and raw[12:12 + len(name)] == name
    n = 5000
    assert len(raw) == 8 + 4 + len(name) + 17 + 1 + 2 * 2 * 8 + n * (2 + 2 + 1 + 2) * 8 + n


def test_load_errors(tmp_path, random_pm):
    path = tmp_path / "x.ds"
    save_dataset(random_pm, path)
    raw = path.read_bytes()
    (tmp_path / "magic").write_bytes(b"Z" + raw[1:])
    with pytest.raises(DatasetError, match="bad magic"):
        load_dataset(tmp_path / "magic")
    (tmp_path / "cut").write_bytes(raw[:-10])
    with pytest.raises(DatasetError, match="truncated"):
        load_dataset(tmp_path / "cut")
    (tmp_path / "extra").write_bytes(raw + b"\0\0")
    with pytest.raises(DatasetError, match="trailing"):
        load_dataset(tmp_path / "extra")
    # Header claims a 3-dim state for a 2-dim env.
    off = 8 + 4 + len(b"pointmass-dense") + 1 + 8
    bad = raw[:off] + (3).to_bytes(4, "little") + raw[off + 4:]
    (tmp_path / "dims").write_bytes(bad)
    with pytest.raises(DatasetError, match="dim mismatch"):
        load_dataset(tmp_path / "dims")


def test_empty_body_fails_on_use_not_load(tmp_path):
    empty = TransitionBatch(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0), np.zeros((0, 2)), np.zeros(0))
    ds = OfflineDataset("pointmass-dense", "random", empty, NormStats.identity(2))
    path = tmp_path / "empty.ds"
    save_dataset(ds, path)
    loaded = load_dataset(path)
    assert len(loaded) == 0
    with pytest.raises(DatasetError, match="size >= 1000 violated"):
        loaded.validate()


def test_generation_deterministic():
    a = generate_dataset("maze-sparse", "random", 1500, 3)
    b = generate_dataset("maze-sparse", "random", 1500, 3)
    assert a == b


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 40), st.just(2)), elements=st.floats(-1, 1)))
def test_fitted_normalization_standardizes(states):
    stats = NormStats.fit(states)
    z = normalize_state(stats, states)
    assert np.max(np.abs(z.mean(axis=0))) < 1e-9
    raw_std = states.std(axis=0)
    for j in range(2):
        if raw_std[j] > 1e-3:
            assert abs(z[:, j].std() - 1.0) < 1e-9


def test_batch_validation():
    with pytest.raises(ValueError):
        TransitionBatch(np.zeros((3, 2)), np.zeros((2, 2)), np.zeros(3), np.zeros((3, 2)), np.zeros(3))
    items = [Transition(np.ones(2) * i, np.zeros(2), float(i), np.ones(2), False) for i in range(3)]
    batch = TransitionBatch.from_transitions(items)
    assert batch.r.tolist() == [0.0, 1.0, 2.0] and batch.take([2]).s.tolist() == [[2.0, 2.0]]
