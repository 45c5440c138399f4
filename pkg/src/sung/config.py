"""Run configuration: flat ``key = value`` files with dotted keys.

Grammar, one entry per line::

    # comment
    key = value

Keys are dotted identifiers; values are ints, floats, booleans
(true/false), comma-separated tuples, or bare strings. ``auto`` defers a
value to the backbone/environment defaults. Later lines and ``--set``
overrides replace earlier values.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

from .agents import AgentConfig, default_agent_config
from .data import REFERENCE_RETURNS
from .envs import env_spec
from .exploitation import ExploitationConfig
from .exploration import ExplorationConfig, default_order_for

AUTO = "auto"

DEFAULTS = {
    "env": "pointmass-dense",
    "dataset": "",
    "regularizer": "bc",
    "backbone": AUTO,
    "preset": "sung",
    "seed": 0,
    "out_dir": "runs/default",
    "pretrain.steps": 50_000,
    "finetune.steps": 20_000,
    "eval.interval": 1_000,
    "eval.episodes": 10,
    "eval.random_return": AUTO,
    "eval.reference_return": AUTO,
    "agent.lam": AUTO,
    "agent.gamma": 0.99,
    "agent.tau": 5e-3,
    "agent.actor_lr": AUTO,
    "agent.critic_lr": 3e-4,
    "agent.batch_size": 256,
    "agent.hidden": (64, 64),
    "agent.policy_noise": 0.2,
    "agent.noise_clip": 0.5,
    "agent.policy_delay": 2,
    "agent.entropy_weight": 0.2,
    "agent.auto_entropy": False,
    "agent.bc_normalize": True,
    "agent.n_cql_samples": 20,
    "vae.lr": 1e-3,
    "vae.kl_weight": 0.5,
    "vae.grad_steps": AUTO,
    "vae.hidden": (64, 64),
    "vae.latent_samples": 1,
    "estimator": "vae",
    "explore.mode": "optimistic",
    "explore.n": 100,
    "explore.k": AUTO,
    "explore.order": AUTO,
    "explore.alpha": 1.0,
    "explore.delta": 0.2,
    "exploit.p": AUTO,
    "exploit.mode": "deterministic",
    "exploit.lambda_end_fraction": 1.0,
    "exploit.alpha": 1.0,
    "oorb.p": AUTO,
    "oorb.online_capacity": 5_000,
    "oorb.offline_capacity": 200_000,
    "oorb.include_dataset": True,
    "log.wallclock": False,
    "suite.seeds": (0, 1, 2),
    "suite.finetune_steps": AUTO,
}

# Published operating point: share of the batch kept regularized ("OOD percent") and
# p_OORB, keyed by (reward tag, regularizer). exploit.p is 100 minus the share.
SETTING_DEFAULTS = {
    ("dense", "bc"): {"ood_percent": 5, "oorb_p": 0.1},
    ("dense", "cql"): {"ood_percent": 10, "oorb_p": 0.1},
    ("sparse", "bc"): {"ood_percent": 99, "oorb_p": 0.2},
    ("sparse", "cql"): {"ood_percent": 90, "oorb_p": 0.7},
}

PRESETS = {
    "sung": {},
    "offline-ft": {"exploit.p": 0.0, "explore.mode": "default"},
    "online-ft": {"exploit.p": 100.0, "explore.mode": "default"},
}

ABLATIONS = {
    "no-opt-exploration": {"explore.mode": "default"},
    "opt-exploration-no-unc": {"explore.k": 1, "explore.order": "qu"},
    "opt-exploration-no-q": {"explore.k": 1, "explore.order": "uq"},
    "no-adp-exploitation": {"exploit.p": 100.0},
    "q-std-uncertainty": {"estimator": "q-std"},
    "random-ood": {"exploit.mode": "uniform"},
    "oorb-no-offline": {"oorb.include_dataset": False},
}

SUITES = {
    "presets": [(name, {"preset": name}) for name in PRESETS],
    "ablations": [(name, {"preset": name}) for name in ABLATIONS],
    "alpha": [(f"alpha={a}", {"explore.alpha": a}) for a in (0.1, 0.2, 0.5, 1.0, 5.0, 10.0, 20.0, 100.0)],
    "p-oorb": [(f"p_oorb={p}", {"oorb.p": p}) for p in (0.0, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0)],
    "lambda-decay": [(f"lambda_end={f}", {"exploit.lambda_end_fraction": f})
                     for f in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)],
}

_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*$")


class ConfigError(ValueError):
    pass


def parse_value(text):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if "," in text:
        return tuple(parse_value(part) for part in text.split(",") if part.strip())
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(v) for v in value) + ("," if len(value) == 1 else "")
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_lines(lines, source="<config>"):
    out = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not _KEY.match(key):
            raise ConfigError(f"{source}:{lineno}: bad key {key!r}")
        out[key] = parse_value(value)
    return out


def load_config_file(path):
    with open(path, encoding="utf-8") as fh:
        return parse_lines(fh.read().splitlines(), str(path))


def raw_config(file_values=None, overrides=None):
    """Defaults <- file <- overrides, with unknown keys rejected."""
    cfg = dict(DEFAULTS)
    for layer in (file_values or {}, overrides or {}):
        for key, value in layer.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            cfg[key] = value
    return cfg


def parse_overrides(items):
    """``["a.b=1", ...]`` -> dict."""
    return parse_lines(items, "--set")


@dataclass
class RunConfig:
    values: dict
    expansion: list = field(default_factory=list)   # (key, value, reason) log

    def __getitem__(self, key):
        return self.values[key]

    @property
    def reward(self):
        return env_spec(self.values["env"]).reward

    def normalized(self, ret):
        """(R - R_random) / (R_reference - R_random)."""
        lo, hi = self.values["eval.random_return"], self.values["eval.reference_return"]
        return (ret - lo) / (hi - lo)

    def agent_config(self) -> AgentConfig:
        v = self.values
        return default_agent_config(
            v["regularizer"],
            backbone=v["backbone"], lam=v["agent.lam"], gamma=v["agent.gamma"], tau=v["agent.tau"],
            actor_lr=v["agent.actor_lr"], critic_lr=v["agent.critic_lr"],
            batch_size=v["agent.batch_size"], hidden=_tuple(v["agent.hidden"]),
            policy_noise=v["agent.policy_noise"], noise_clip=v["agent.noise_clip"],
            policy_delay=v["agent.policy_delay"], entropy_weight=v["agent.entropy_weight"],
            auto_entropy=v["agent.auto_entropy"], bc_normalize=v["agent.bc_normalize"],
            n_cql_samples=v["agent.n_cql_samples"],
        )

    def exploration_config(self) -> ExplorationConfig:
        v = self.values
        return ExplorationConfig(v["explore.n"], v["explore.k"], v["explore.order"],
                                 v["explore.alpha"], v["explore.delta"])

    def exploitation_config(self) -> ExploitationConfig:
        v = self.values
        return ExploitationConfig(float(v["exploit.p"]), v["exploit.mode"],
                                  v["exploit.lambda_end_fraction"], v["exploit.alpha"])

    def to_text(self):
        lines = [f"{k} = {format_value(self.values[k])}" for k in DEFAULTS]
        if self.expansion:
            lines.append("")
            lines.extend(f"# resolved {k} = {format_value(val)} ({why})" for k, val, why in self.expansion)
        return "\n".join(lines) + "\n"


def _tuple(v):
    return tuple(v) if isinstance(v, (tuple, list)) else (v,)


def resolve(raw: dict) -> RunConfig:
    """Expand the preset and fill every ``auto`` value; every step is logged."""
    v = dict(raw)
    log = []
    preset = v["preset"]
    delta = PRESETS.get(preset, ABLATIONS.get(preset))
    if delta is None:
        raise ConfigError(f"unknown preset {preset!r}")
    for key, value in delta.items():
        v[key] = value
        log.append((key, value, f"preset {preset}"))

    reg = v["regularizer"]
    if reg not in ("bc", "cql"):
        raise ConfigError(f"regularizer must be bc or cql, got {reg!r}")
    base = default_agent_config(reg)
    spec = env_spec(v["env"])
    row = SETTING_DEFAULTS[(spec.reward, reg)]

    def fill(key, value, why):
        if v[key] == AUTO:
            v[key] = value
            log.append((key, value, why))

    fill("backbone", base.backbone, f"backbone paired with {reg}")
    if v["backbone"] != base.backbone:
        raise ConfigError(f"regularizer {reg} runs on backbone {base.backbone}, not {v['backbone']}")
    fill("agent.lam", base.lam, f"{reg} default")
    sparse_bc = spec.reward == "sparse" and reg == "bc"
    fill("agent.actor_lr", 1e-4 if sparse_bc else base.actor_lr, "published actor learning rate")
    order, k = default_order_for(v["backbone"], reg)
    fill("explore.order", order, "ranking order rule")
    fill("explore.k", k, "ranking order rule")
    fill("exploit.p", 100.0 - row["ood_percent"], f"100 - published OOD percentage {row['ood_percent']}")
    fill("oorb.p", row["oorb_p"], "published p_OORB")
    rand_ret, ref_ret = REFERENCE_RETURNS[v["env"]]
    fill("eval.random_return", rand_ret, "measured random-policy return")
    fill("eval.reference_return", ref_ret, "measured scripted-controller return")
    fill("vae.grad_steps", v["pretrain.steps"], "matches pretrain.steps")
    fill("suite.finetune_steps", v["finetune.steps"], "matches finetune.steps")

    if v["estimator"] not in ("vae", "q-std"):
        raise ConfigError(f"unknown estimator {v['estimator']!r}")
    if v["explore.mode"] not in ("optimistic", "default"):
        raise ConfigError(f"unknown explore.mode {v['explore.mode']!r}")
    for key in ("pretrain.steps", "finetune.steps", "eval.interval", "eval.episodes"):
        if int(v[key]) < 1:
            raise ConfigError(f"{key} must be >= 1")
    rc = RunConfig(v, log)
    # Construct the sub-configs once so invalid values fail before any work.
    rc.agent_config()
    rc.exploration_config()
    rc.exploitation_config()
    return rc


def build_config(path=None, overrides=None) -> RunConfig:
    file_values = load_config_file(path) if path else {}
    return resolve(raw_config(file_values, overrides))
