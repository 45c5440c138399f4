import csv
import subprocess
import sys

import pytest

from sung.cli import main


def _write_cfg(path, dataset, out):
    path.write_text(
        "# smoke run\n"
        f"dataset = {dataset}\n"
        f"out_dir = {out}\n"
        "pretrain.steps = 10\nfinetune.steps = 6\neval.interval = 3\neval.episodes = 1\n"
        "agent.hidden = 8, 8\nvae.hidden = 8,\nagent.batch_size = 16\nexplore.n = 12\n"
    )
    return str(path)


def test_full_cli_flow(tmp_path, capsys):
    ds = tmp_path / "pm.ds"
    assert main(["gen-data", "--env", "pointmass-dense", "--tier", "random", "--size", "1200",
                 "--seed", "2", "--out", str(ds)]) == 0
    cfg = _write_cfg(tmp_path / "run.cfg", ds, tmp_path / "out")
    assert main(["pretrain", "--config", cfg]) == 0
    agent, vae = tmp_path / "out" / "agent.ckpt", tmp_path / "out" / "vae.ckpt"
    assert agent.exists() and vae.exists()
    assert main(["finetune", "--config", cfg, "--agent-ckpt", str(agent), "--vae-ckpt", str(vae),
                 "--set", "exploit.p=50"]) == 0
    echoed = (tmp_path / "out" / "finetune_config.txt").read_text()
    assert "exploit.p = 50\n" in echoed and "# resolved" in echoed
    assert main(["evaluate", "--config", cfg, "--agent-ckpt", str(agent), "--episodes", "2"]) == 0
    assert main(["evaluate", "--config", cfg, "--metrics", str(tmp_path / "out" / "finetune_metrics.csv")]) == 0
    out = capsys.readouterr().out
    assert "over 2 episodes" in out and "last 3 rows" in out
    assert main(["ablate", "--config", cfg, "--suite", "ablations", "--seeds", "0"]) == 0
    with open(tmp_path / "out" / "ablations_comparison.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 7


def test_cli_errors(tmp_path, capsys):
    cfg = _write_cfg(tmp_path / "run.cfg", tmp_path / "none.ds", tmp_path / "out")
    assert main(["pretrain", "--config", cfg]) == 2
    assert main(["pretrain", "--config", cfg, "--set", "bogus.key=1"]) == 2
    assert main(["ablate", "--config", cfg, "--suite", "nope"]) == 2
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["gen-data", "--env", "cartpole", "--tier", "random", "--size", "1000", "--out", "x"])


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "sung", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("gen-data", "pretrain", "finetune", "evaluate", "ablate"):
        assert cmd in out.stdout
