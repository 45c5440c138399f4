"""Offline pretraining, online finetuning, evaluation and ablation suites."""
from __future__ import annotations

import ctypes
import ctypes.util
import csv
import io
import os
import time
import zlib

import numpy as np

from .agents import Agent
from .config import ABLATIONS, SUITES, ConfigError, RunConfig, raw_config, resolve
from .data import DatasetError, OfflineDataset, load_dataset, normalize_state
from .density import UncertaintyEstimator, VaeConfig, VaeModel, vae_step
from .envs import make_env, rollout_returns
from .exploitation import lambda_schedule, ood_count, select_ood
from .exploration import (
    default_exploration_action, generate_candidates, select_behavior_action,
)
from .numerics import load_trees, save_trees
from .numerics.checkpoint import CheckpointError
from .replay import Oorb

METRIC_COLUMNS = (
    "phase", "step", "eval_return_mean", "eval_return_std", "loss_L", "loss_R",
    "ood_fraction", "mean_uncertainty", "seconds",
)


def tune_allocator():
    """Keep large numpy temporaries on the heap instead of fresh mmaps (glibc only)."""
    name = ctypes.util.find_library("c")
    if not name:
        return False
    try:
        libc = ctypes.CDLL(name)
        m_trim_threshold, m_mmap_threshold = -1, -3
        ok = libc.mallopt(m_mmap_threshold, 256 * 1024 * 1024)
        ok &= libc.mallopt(m_trim_threshold, 1024 * 1024 * 1024)
        return bool(ok)
    except (OSError, AttributeError):
        return False


def stream(seed, name):
    """Named, independent RNG sub-stream of the root seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


# --------------------------------------------------------------- evaluation

def evaluate(policy, env, episodes, seed, stats=None):
    """(mean, std) of undiscounted returns of exploit-mode actions over fixed episode seeds."""
    act = policy.act if hasattr(policy, "act") else policy
    if stats is not None:
        raw_act = act

        def act(s):
            return raw_act(normalize_state(stats, s))

    rets = rollout_returns(act, env, episodes, seed)
    return float(rets.mean()), float(rets.std())


def evaluate_checkpoint(cfg: RunConfig, agent_ckpt, episodes=None, seed=0):
    """Load an agent checkpoint under ``cfg`` and evaluate it with the dataset's state statistics."""
    ds = _load_checked_dataset(cfg)
    spec = make_env(cfg["env"]).spec
    agent = Agent(cfg.agent_config(), spec.state_dim, spec.action_dim, spec.action_bound,
                  stream(cfg["seed"], "init"))
    agent.load(agent_ckpt)
    return evaluate(agent, make_env(cfg["env"]), episodes or cfg["eval.episodes"], seed, ds.stats)


def final_score(rows):
    """Mean eval return over the last three evaluation rows."""
    evals = [float(r["eval_return_mean"]) for r in rows]
    if not evals:
        raise ValueError("no evaluation rows")
    return float(np.mean(evals[-3:]))


# ------------------------------------------------------------------ metrics

class MetricsLog:
    def __init__(self, path, timing_path=None, wallclock=False):
        self.path = path
        self.rows = []
        self.wallclock = wallclock
        self.timing_path = timing_path
        self.t0 = time.perf_counter()
        self.timing = []

    def add(self, phase, step, ev_mean, ev_std, loss_l, loss_r, ood, mean_u):
        if self.rows and self.rows[-1]["phase"] == phase and step <= int(self.rows[-1]["step"]):
            raise RuntimeError("metrics rows must increase in step")
        elapsed = time.perf_counter() - self.t0
        self.timing.append((phase, step, elapsed))
        row = {
            "phase": phase, "step": step, "eval_return_mean": ev_mean, "eval_return_std": ev_std,
            "loss_L": loss_l, "loss_R": loss_r, "ood_fraction": ood, "mean_uncertainty": mean_u,
            # Wall-clock time would break byte-identical reruns; it is opt-in.
            "seconds": elapsed if self.wallclock else 0.0,
        }
        self.rows.append(row)

    def write(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for row in self.rows:
            w.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])
        with open(self.path, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
        if self.timing_path:
            with open(self.timing_path, "w", encoding="utf-8") as fh:
                fh.write("phase,step,seconds\n")
                for phase, step, sec in self.timing:
                    fh.write(f"{phase},{step},{sec:.3f}\n")


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if np.isfinite(v) else "nan"
    return str(v)


class _Avg:
    def __init__(self):
        self.sum, self.n = 0.0, 0

    def add(self, v):
        if v is not None:
            self.sum += float(v)
            self.n += 1

    def pop(self):
        out = self.sum / self.n if self.n else float("nan")
        self.sum, self.n = 0.0, 0
        return out


def read_metrics(path):
    with open(path, encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ------------------------------------------------------------------ helpers

def _load_checked_dataset(cfg: RunConfig) -> OfflineDataset:
    path = cfg["dataset"]
    if not path or not os.path.exists(path):
        raise DatasetError(f"dataset not found: {path!r}")
    ds = load_dataset(path).validate()
    if ds.env_name != cfg["env"]:
        raise DatasetError(f"dataset was generated for {ds.env_name}, config env is {cfg['env']}")
    return ds


def _build(cfg: RunConfig, ds: OfflineDataset, rng):
    spec = make_env(cfg["env"]).spec
    agent = Agent(cfg.agent_config(), spec.state_dim, spec.action_dim, spec.action_bound, rng)
    vae = VaeModel(spec.state_dim, spec.action_dim, rng,
                   VaeConfig(lr=cfg["vae.lr"], kl_weight=cfg["vae.kl_weight"],
                             hidden=tuple(cfg["vae.hidden"]),
                             latent_samples=cfg["vae.latent_samples"]))
    return spec, agent, vae


def _estimator(cfg, agent, vae):
    if cfg["estimator"] == "q-std":
        return UncertaintyEstimator("q-std", critic=agent.critic)
    return UncertaintyEstimator("vae", vae=vae, latent_samples=cfg["vae.latent_samples"])


def _write_config(cfg: RunConfig, out_dir, name):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())


# ----------------------------------------------------------------- pretrain

def pretrain(cfg: RunConfig):
    """Full offline objective for the agent plus ELBO training of the VAE.

    Writes ``agent.ckpt``, ``vae.ckpt``, ``pretrain_metrics.csv`` into the
    output directory and returns a dict of paths and step counters.
    """
    out = cfg["out_dir"]
    _write_config(cfg, out, "pretrain_config.txt")
    ds = _load_checked_dataset(cfg)
    data = ds.normalized()
    seed = cfg["seed"]
    spec, agent, vae = _build(cfg, ds, stream(seed, "init"))
    batch_rng, agent_rng, vae_rng = stream(seed, "batch"), stream(seed, "agent"), stream(seed, "vae")
    est = _estimator(cfg, agent, vae)
    env = make_env(cfg["env"])
    log = MetricsLog(os.path.join(out, "pretrain_metrics.csv"),
                     os.path.join(out, "pretrain_timing.csv"), cfg["log.wallclock"])
    steps, vae_steps = int(cfg["pretrain.steps"]), int(cfg["vae.grad_steps"])
    interval, episodes = int(cfg["eval.interval"]), int(cfg["eval.episodes"])
    bsz, n = cfg["agent.batch_size"], len(data)
    loss_l, loss_r, mean_u = _Avg(), _Avg(), _Avg()
    vae_done = 0
    for step in range(1, max(steps, vae_steps) + 1):
        batch = data.take(batch_rng.integers(0, n, size=bsz))
        if step <= steps:
            st = agent.update(batch, agent_rng)
            loss_l.add(st["loss_L"])
            loss_r.add(st["loss_R"])
        if step <= vae_steps:
            mean_u.add(vae_step(vae, batch.s, batch.a, vae_rng))
            vae_done += 1
        if step <= steps and (step % interval == 0 or step == steps):
            ev_mean, ev_std = evaluate(agent, env, episodes, stream(seed, f"eval{step}").integers(2**31),
                                       ds.stats)
            log.add("pretrain", step, ev_mean, ev_std, loss_l.pop(), loss_r.pop(), 1.0, mean_u.pop())
    log.write()
    agent_path = os.path.join(out, "agent.ckpt")
    vae_path = os.path.join(out, "vae.ckpt")
    agent.save(agent_path)
    save_trees(vae_path, vae.trees())
    return {"agent_ckpt": agent_path, "vae_ckpt": vae_path, "metrics": log.path,
            "agent_steps": agent.updates, "vae_steps": vae_done, "rows": log.rows}


# ----------------------------------------------------------------- finetune

def finetune(cfg: RunConfig, agent_ckpt, vae_ckpt, tag="finetune"):
    """Online finetuning with the configured exploration and adaptive exploitation."""
    out = cfg["out_dir"]
    _write_config(cfg, out, f"{tag}_config.txt")
    ds = _load_checked_dataset(cfg)
    seed = cfg["seed"]
    spec, agent, vae = _build(cfg, ds, stream(seed, "init"))
    agent.load(agent_ckpt)
    try:
        load_trees(vae_ckpt, vae.trees())
    except CheckpointError as exc:
        raise CheckpointError(f"vae checkpoint does not match config: {exc}") from None
    est = _estimator(cfg, agent, vae)
    ex_cfg, xp_cfg = cfg.exploration_config(), cfg.exploitation_config()
    optimistic = cfg["explore.mode"] == "optimistic"
    oorb = Oorb.from_dataset(ds.normalized(), spec.state_dim, spec.action_dim, cfg["oorb.p"],
                             cfg["oorb.online_capacity"], cfg["oorb.offline_capacity"],
                             cfg["oorb.include_dataset"])
    rngs = {k: stream(seed, f"ft.{k}") for k in ("env", "explore", "oorb", "agent", "vae", "exploit")}
    env, eval_env = make_env(cfg["env"]), make_env(cfg["env"])
    log = MetricsLog(os.path.join(out, f"{tag}_metrics.csv"),
                     os.path.join(out, f"{tag}_timing.csv"), cfg["log.wallclock"])
    steps = int(cfg["finetune.steps"])
    interval, episodes = int(cfg["eval.interval"]), int(cfg["eval.episodes"])
    lam0 = cfg.agent_config().lam
    loss_l, loss_r, ood, mean_u = _Avg(), _Avg(), _Avg(), _Avg()

    def mask_fn(batch):
        pi = agent.act(batch.s)
        u = est.score(batch.s, pi, rngs["exploit"])
        mean_u.add(float(np.mean(u)))
        mask = select_ood(u, ood_count(xp_cfg.p, len(u)), xp_cfg.mode, xp_cfg.alpha, rngs["exploit"])
        ood.add(float(mask.mean()))
        return mask

    s_raw = env.reset(int(rngs["env"].integers(2**31)))
    for step in range(1, steps + 1):
        s = normalize_state(ds.stats, s_raw)
        if optimistic:
            cands = generate_candidates(agent.actor, agent.critic, est, s, ex_cfg, rngs["explore"])
            a = select_behavior_action(cands, ex_cfg, rngs["explore"])
        else:
            a = default_exploration_action(agent.actor, s, ex_cfg.delta, rngs["explore"])
        s2_raw, r, done, info = env.step(a)
        oorb.push(s, a, r, normalize_state(ds.stats, s2_raw), info["terminal"])
        s_raw = env.reset(int(rngs["env"].integers(2**31))) if done else s2_raw

        batch = oorb.sample(cfg["agent.batch_size"], rngs["oorb"])
        lam = lambda_schedule(lam0, step, steps, xp_cfg.lambda_end_fraction)
        st = agent.update(batch, rngs["agent"], mask_fn=mask_fn, lam=lam)
        loss_l.add(st["loss_L"])
        loss_r.add(st["loss_R"])
        vae_step(vae, batch.s, batch.a, rngs["vae"])
        if step % interval == 0 or step == steps:
            ev_mean, ev_std = evaluate(agent, eval_env, episodes,
                                       stream(seed, f"ft.eval{step}").integers(2**31), ds.stats)
            log.add(tag, step, ev_mean, ev_std, loss_l.pop(), loss_r.pop(), ood.pop(), mean_u.pop())
    log.write()
    score = final_score(log.rows)
    return {"metrics": log.path, "rows": log.rows, "final_score": score,
            "final_normalized": float(cfg.normalized(score)),
            "agent_steps": agent.updates, "env_steps": steps}


# ---------------------------------------------------------------- ablations

def expand_suite(base_raw: dict, suite):
    """[(variant name, RunConfig)] for a named suite."""
    if suite not in SUITES:
        raise ConfigError(f"unknown suite {suite!r}; choose from {sorted(SUITES)}")
    out = []
    for name, delta in SUITES[suite]:
        raw = dict(base_raw)
        raw.update(delta)
        out.append((name, resolve(raw)))
    return out


def expand_ablation(base_raw: dict, name):
    if name not in ABLATIONS:
        raise ConfigError(f"unknown ablation {name!r}")
    raw = dict(base_raw)
    raw["preset"] = name
    return resolve(raw)


def run_ablation_suite(base_raw: dict, suite="ablations", seeds=None, out_path=None, names=None):
    """Pretrain once per seed, finetune every variant on it, write one comparison CSV.

    ``names`` restricts the suite to a subset of its variants.
    """
    base = resolve(base_raw)
    seeds = list(base["suite.seeds"] if seeds is None else seeds)
    variants = expand_suite(base_raw, suite)
    if names is not None:
        unknown = set(names) - {n for n, _ in variants}
        if unknown:
            raise ConfigError(f"suite {suite!r} has no variants {sorted(unknown)}")
        variants = [(n, c) for n, c in variants if n in names]
    root = base["out_dir"]
    ckpts = {}
    rows = []
    for seed in seeds:
        pre_raw = dict(base_raw, seed=seed, out_dir=os.path.join(root, f"seed{seed}"))
        ckpts[seed] = pretrain(resolve(pre_raw))
        for name, vcfg in variants:
            v = dict(vcfg.values, seed=seed, out_dir=os.path.join(root, f"seed{seed}"),
                     **{"finetune.steps": vcfg["suite.finetune_steps"]})
            rc = RunConfig(v, vcfg.expansion)
            res = finetune(rc, ckpts[seed]["agent_ckpt"], ckpts[seed]["vae_ckpt"],
                           tag=f"ft_{_slug(name)}")
            rows.append({"suite": suite, "variant": name, "seed": seed,
                         "final_score": res["final_score"], "final_normalized": res["final_normalized"]})
    out_path = out_path or os.path.join(root, f"{suite}_comparison.csv")
    os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["suite", "variant", "seed", "final_score", "final_normalized"],
                           lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(v) for k, v in row.items()})
    return out_path, rows


def _slug(name):
    return "".join(c if c.isalnum() else "_" for c in name)
