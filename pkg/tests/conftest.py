import numpy as np
import pytest

from sung import runner
from sung.data import generate_dataset, save_dataset

ACCEPTANCE = []


def pytest_configure(config):
    runner.tune_allocator()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def pm_dataset(tmp_path_factory):
    """Small medium-tier point-mass dataset on disk."""
    path = tmp_path_factory.mktemp("data") / "pm_medium.ds"
    save_dataset(generate_dataset("pointmass-dense", "medium", 4000, 0), path)
    return str(path)


@pytest.fixture(scope="session")
def maze_dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "maze_stitch.ds"
    save_dataset(generate_dataset("maze-sparse", "stitch", 3000, 0), path)
    return str(path)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_overrides(dataset, out_dir, **extra):
    base = {
        "dataset": dataset, "out_dir": str(out_dir), "pretrain.steps": 20, "finetune.steps": 10,
        "eval.interval": 5, "eval.episodes": 2, "agent.hidden": (16, 16), "vae.hidden": (16, 16),
        "agent.batch_size": 32, "explore.n": 20,
    }
    base.update(extra)
    return base

