"""Actor-critic backbones and their offline counterparts.

TD3 pairs with the behaviour-cloning regularizer (TD3+BC); SAC pairs with
the conservative regularizer (CQL). Every offline loss is returned as a
:class:`DecomposedLoss` so that exploitation can gate the regularizer per
sample.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .batch import TransitionBatch
from .numerics import (
    AdamState, MlpSpec, ParamTree, Tape, adam_step, forward, init_mlp, load_tensors,
    polyak_update, save_tensors, soft_clamp,
)
from .numerics import tape as T
from .numerics.checkpoint import CheckpointError

BACKBONES = ("td3", "sac")
REGULARIZERS = ("bc", "cql", "none")
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class AgentConfig:
    backbone: str = "td3"
    regularizer: str = "bc"
    lam: float = 0.4            # TD3+BC: 1/2.5 after mean|Q| normalization; CQL uses 5.0
    gamma: float = 0.99
    tau: float = 5e-3
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    batch_size: int = 256
    hidden: tuple = (64, 64)
    actor_activation: str = "relu"
    critic_activation: str = "relu"
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    policy_delay: int = 2
    entropy_weight: float = 0.2
    auto_entropy: bool = False
    entropy_lr: float = 3e-4
    bc_normalize: bool = True
    n_cql_samples: int = 20
    log_std_min: float = -5.0
    log_std_max: float = 2.0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"unknown regularizer {self.regularizer!r}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.n_cql_samples < 2:
            raise ValueError("n_cql_samples must be >= 2")
        if self.policy_delay < 1:
            raise ValueError("policy delay must be >= 1")

    @property
    def tag(self):
        return f"{self.backbone}+{self.regularizer}"


def default_agent_config(regularizer: str, **overrides) -> AgentConfig:
    """Backbone-consistent defaults: bc -> TD3, cql -> SAC."""
    if regularizer == "bc":
        base = dict(backbone="td3", regularizer="bc", lam=0.4)
    elif regularizer == "cql":
        base = dict(backbone="sac", regularizer="cql", lam=5.0, actor_lr=1e-4)
    elif regularizer == "none":
        base = dict(backbone="td3", regularizer="none", lam=0.0)
    else:
        raise ValueError(f"unknown regularizer {regularizer!r}")
    base.update(overrides)
    return AgentConfig(**base)


# ----------------------------------------------------------------- networks

class Actor:
    """Deterministic tanh policy (TD3) or tanh-squashed Gaussian (SAC)."""

    def __init__(self, state_dim, action_dim, bound, stochastic, hidden, activation, rng,
                 log_std_range=(-5.0, 2.0)):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.bound = float(bound)
        self.stochastic = bool(stochastic)
        self.log_std_range = log_std_range
        self.spec = MlpSpec(state_dim, hidden, action_dim, activation,
                            "gaussian-head" if stochastic else "tanh-squash")
        self.params = init_mlp(self.spec, rng)
        self.target = None if stochastic else self.params.copy()

    def _out(self, params, s, tape):
        return forward(params, self.spec, s, tape)

    def deterministic(self, s, tape=None, params=None):
        """pi(s) for TD3, the squashed mean for SAC. ``s`` is (M, ds)."""
        out = self._out(self.params if params is None else params, s, tape)
        if self.stochastic:
            out = T.tanh(out[:, :self.action_dim])
        return T.mul(out, self.bound) if self.bound != 1.0 else out

    def gaussian(self, s, tape=None):
        out = self._out(self.params, s, tape)
        lo, hi = self.log_std_range
        mean = out[:, :self.action_dim]
        log_std = soft_clamp(out[:, self.action_dim:], lo, hi)
        return mean, log_std

    def sample(self, s, noise, tape=None):
        """Reparameterized squashed sample and its log-density, both (M, ·)."""
        if not self.stochastic:
            raise TypeError("sample() needs a gaussian-head actor")
        mean, log_std = self.gaussian(s, tape)
        u = T.add(mean, T.mul(T.exp(log_std), noise))
        a = T.tanh(u)
        # log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)), stable for large |u|.
        log_det = T.mul(T.sub(T.sub(math.log(2.0), u), T.softplus(T.mul(u, -2.0))), 2.0)
        per_dim = T.sub(T.sub(T.mul(np.square(noise), -0.5), log_std), T.add(log_det, 0.5 * LOG_2PI))
        logp = T.sum_(per_dim, axis=1)
        if self.bound != 1.0:
            a = T.mul(a, self.bound)
            logp = T.sub(logp, self.action_dim * math.log(self.bound))
        return a, logp

    def act(self, s):
        """Exploit-mode action for one state or a batch (plain arrays)."""
        s = np.asarray(s, dtype=np.float64)
        single = s.ndim == 1
        a = self.deterministic(np.atleast_2d(s))
        return a[0] if single else a


class Critic:
    """Twin Q networks with Polyak-averaged targets."""

    def __init__(self, state_dim, action_dim, hidden, activation, rng):
        self.spec = MlpSpec(state_dim + action_dim, hidden, 1, activation, "identity")
        self.q1 = init_mlp(self.spec, rng)
        self.q2 = init_mlp(self.spec, rng)
        self.t1 = self.q1.copy()
        self.t2 = self.q2.copy()

    def q(self, tree, s, a, tape=None):
        """Q_tree(s, a) as a length-M vector. Constant trees still pass gradients to ``a``."""
        x = T.concat([s, a], axis=1)
        return T.reshape(forward(tree, self.spec, x, tape), (-1,))

    def min_q(self, s, a, target=False):
        t1, t2 = (self.t1, self.t2) if target else (self.q1, self.q2)
        return np.minimum(self.q(t1, s, a), self.q(t2, s, a))

    def soft_update(self, tau):
        polyak_update(self.t1, self.q1, tau)
        polyak_update(self.t2, self.q2, tau)


# ------------------------------------------------------------------- losses

@dataclass
class DecomposedLoss:
    """L_F + lam * R_F with the regularizer kept per sample.

    ``reg`` is a length-M vector (or None when R_F = 0). :meth:`total` with a
    mask gives the gated objective ``L_F + lam * mean(mask * R_F)``.
    """
    standard: object
    reg: object
    lam: float

    @property
    def standard_value(self):
        return float(T.as_value(self.standard))

    def reg_value(self, mask=None):
        if self.reg is None:
            return 0.0
        r = T.as_value(self.reg)
        return float(np.mean(r if mask is None else r * mask))

    def total(self, mask=None):
        if self.reg is None:
            return self.standard
        if mask is None:
            r = T.mean(self.reg)
        else:
            mask = np.asarray(mask, dtype=np.float64)
            if mask.shape != np.shape(T.as_value(self.reg)):
                raise ValueError(
                    f"mask length {mask.shape} does not match batch {np.shape(T.as_value(self.reg))}"
                )
            r = T.mean(T.mul(self.reg, mask))
        return T.add(self.standard, T.mul(r, self.lam))


def bootstrap(r, done, q_next, gamma):
    """y = r + gamma * (1 - done) * q_next."""
    return np.asarray(r) + gamma * (1.0 - np.asarray(done)) * np.asarray(q_next)


def td_target(critic, actor, batch, cfg, rng, entropy_weight=0.0):
    """Bootstrapped target with the element-wise minimum of the target critics."""
    if len(batch) == 0:
        raise ValueError("td_target on an empty batch")
    if actor.stochastic:
        noise = rng.standard_normal((len(batch), actor.action_dim))
        a2, logp2 = actor.sample(batch.s2, noise)
        q_next = critic.min_q(batch.s2, a2, target=True) - entropy_weight * logp2
    else:
        a2 = actor.deterministic(batch.s2, params=actor.target)
        eps = rng.standard_normal(a2.shape) * (cfg.policy_noise * actor.bound)
        eps = np.clip(eps, -cfg.noise_clip * actor.bound, cfg.noise_clip * actor.bound)
        a2 = np.clip(a2 + eps, -actor.bound, actor.bound)
        q_next = critic.min_q(batch.s2, a2, target=True)
    return bootstrap(batch.r, batch.done, q_next, cfg.gamma)


def _td_terms(critic, batch, y, tape):
    q1 = critic.q(critic.q1, batch.s, batch.a, tape)
    q2 = critic.q(critic.q2, batch.s, batch.a, tape)
    loss = T.add(T.mean(T.square(T.sub(q1, y))), T.mean(T.square(T.sub(q2, y))))
    return loss, q1, q2


def critic_loss_td3(critic, batch, targets, tape) -> DecomposedLoss:
    """Mean squared TD error summed over both critics; R_F = 0."""
    loss, _, _ = _td_terms(critic, batch, targets, tape)
    return DecomposedLoss(loss, None, 0.0)


def actor_loss_td3bc(actor, critic, batch, tape, lam=0.4, normalize=True) -> DecomposedLoss:
    """L_F = -mean Q1(s, pi(s)); R_F[i] = ||pi(s_i) - a_i||^2.

    With ``normalize`` the weight is ``lam * mean|Q|`` (the TD3+BC
    convention, treated as a constant).
    """
    pi = actor.deterministic(batch.s, tape)
    q = critic.q(critic.q1, batch.s, pi)
    standard = T.neg(T.mean(q))
    reg = T.sum_(T.square(T.sub(pi, batch.a)), axis=1)
    weight = lam * float(np.mean(np.abs(T.as_value(q)))) if normalize else lam
    return DecomposedLoss(standard, reg, weight)


def cql_candidates(actor, batch, n_samples, rng):
    """n//2 policy actions plus the rest uniform in the box, per state: (M, n, da)."""
    m, da = len(batch), actor.action_dim
    n_pi = n_samples // 2
    n_unif = n_samples - n_pi
    s_rep = np.repeat(batch.s, n_pi, axis=0)
    if actor.stochastic:
        a_pi, _ = actor.sample(s_rep, rng.standard_normal((m * n_pi, da)))
    else:
        a_pi = actor.deterministic(s_rep) + rng.standard_normal((m * n_pi, da)) * 0.2 * actor.bound
        a_pi = np.clip(a_pi, -actor.bound, actor.bound)
    a_unif = rng.uniform(-actor.bound, actor.bound, size=(m, n_unif, da))
    return np.concatenate([a_pi.reshape(m, n_pi, da), a_unif], axis=1)


def cql_regularizer(critic, states, data_q, candidates, tape):
    """Per-sample R_F: mean over critics of logsumexp_a Q_j(s, a) - Q_j(s, a_data)."""
    m, n, da = candidates.shape
    s_rep = np.repeat(states, n, axis=0)
    flat = candidates.reshape(m * n, da)
    terms = []
    for tree, qd in zip((critic.q1, critic.q2), data_q):
        qc = T.reshape(critic.q(tree, s_rep, flat, tape), (m, n))
        terms.append(T.sub(T.logsumexp(qc, axis=1), qd))
    return T.mul(T.add(terms[0], terms[1]), 0.5)


def critic_loss_cql(critic, actor, batch, targets, n_cql_samples, rng, tape, lam=5.0) -> DecomposedLoss:
    """L_F = TD loss; R_F per sample = CQL gap (logsumexp over sampled actions minus data Q)."""
    if n_cql_samples < 2:
        raise ValueError("n_cql_samples must be >= 2")
    loss, q1, q2 = _td_terms(critic, batch, targets, tape)
    cand = cql_candidates(actor, batch, n_cql_samples, rng)
    reg = cql_regularizer(critic, batch.s, (q1, q2), cand, tape)
    return DecomposedLoss(loss, reg, lam)


def actor_loss_sac(actor, critic, batch, entropy_weight, noise, tape):
    """mean[w * log pi(a|s) - min Q(s, a)] with reparameterized a; returns (loss, logp)."""
    a, logp = actor.sample(batch.s, noise, tape)
    q = T.minimum(critic.q(critic.q1, batch.s, a), critic.q(critic.q2, batch.s, a))
    loss = T.mean(T.sub(T.mul(logp, entropy_weight), q))
    return loss, T.as_value(logp)


def select_action(actor, s):
    return actor.act(s)


# -------------------------------------------------------------------- agent

class Agent:
    """Twin-critic actor-critic learner for one backbone/regularizer pair."""

    def __init__(self, cfg: AgentConfig, state_dim, action_dim, bound, rng):
        self.cfg = cfg
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.actor = Actor(state_dim, action_dim, bound, cfg.backbone == "sac", cfg.hidden,
                           cfg.actor_activation, rng, (cfg.log_std_min, cfg.log_std_max))
        self.critic = Critic(state_dim, action_dim, cfg.hidden, cfg.critic_activation, rng)
        self.actor_opt = AdamState.for_tree(self.actor.params, cfg.actor_lr)
        self.critic_opt = AdamState.for_tree(self.critic.q1, cfg.critic_lr)
        self.critic_opt2 = AdamState.for_tree(self.critic.q2, cfg.critic_lr)
        self.log_alpha = ParamTree([("log_alpha", (1,))])
        self.log_alpha.values["log_alpha"][0] = math.log(cfg.entropy_weight)
        self.alpha_opt = AdamState.for_tree(self.log_alpha, cfg.entropy_lr)
        self.target_entropy = -float(action_dim)
        self.updates = 0

    @property
    def entropy_weight(self):
        if self.cfg.auto_entropy:
            return float(np.exp(self.log_alpha.values["log_alpha"][0]))
        return self.cfg.entropy_weight

    @property
    def gated_side(self):
        """Which update the exploitation mask applies to."""
        return {"bc": "actor", "cql": "critic", "none": None}[self.cfg.regularizer]

    def act(self, s):
        return self.actor.act(s)

    def _critic_step(self, loss):
        c = self.critic
        c.q1.zero_grad()
        c.q2.zero_grad()
        loss.tape.backward(loss)
        adam_step(self.critic_opt, c.q1)
        adam_step(self.critic_opt2, c.q2)

    def _actor_step(self, loss):
        self.actor.params.zero_grad()
        loss.tape.backward(loss)
        adam_step(self.actor_opt, self.actor.params)

    def update(self, batch: TransitionBatch, rng, mask_fn=None, lam=None):
        """One gradient step. ``mask_fn(batch) -> mask`` gates the regularizer.

        ``mask_fn=None`` applies the full (ungated) objective. Returns a stats
        dict; ``loss_L``/``loss_R`` refer to the gated side and are None on
        steps where that side is not updated (TD3 policy delay).
        """
        cfg = self.cfg
        lam = cfg.lam if lam is None else lam
        self.updates += 1
        stats = {"loss_L": None, "loss_R": None, "mask": None}
        y = td_target(self.critic, self.actor, batch, cfg, rng, self.entropy_weight)

        tape = Tape()
        if cfg.regularizer == "cql":
            dl = critic_loss_cql(self.critic, self.actor, batch, y, cfg.n_cql_samples, rng, tape, lam)
            mask = None if mask_fn is None else mask_fn(batch)
            self._critic_step(dl.total(mask))
            stats.update(loss_L=dl.standard_value, loss_R=dl.reg_value(mask), mask=mask)
        else:
            dl = critic_loss_td3(self.critic, batch, y, tape)
            self._critic_step(dl.total())
            if cfg.regularizer == "none":
                stats.update(loss_L=dl.standard_value, loss_R=0.0)

        if self.actor.stochastic:
            tape = Tape()
            noise = rng.standard_normal((len(batch), self.action_dim))
            loss, logp = actor_loss_sac(self.actor, self.critic, batch, self.entropy_weight, noise, tape)
            self._actor_step(loss)
            if cfg.auto_entropy:
                # d/d log_alpha of -log_alpha * mean(logp + target_entropy)
                self.log_alpha.zero_grad()
                self.log_alpha.grads["log_alpha"][0] = -float(np.mean(logp + self.target_entropy))
                self.log_alpha.mark_grad()
                adam_step(self.alpha_opt, self.log_alpha)
            self.critic.soft_update(cfg.tau)
        elif self.updates % cfg.policy_delay == 0:
            tape = Tape()
            if cfg.regularizer == "bc":
                dl = actor_loss_td3bc(self.actor, self.critic, batch, tape, lam, cfg.bc_normalize)
                mask = None if mask_fn is None else mask_fn(batch)
                self._actor_step(dl.total(mask))
                stats.update(loss_L=dl.standard_value, loss_R=dl.reg_value(mask), mask=mask)
            else:
                pi = self.actor.deterministic(batch.s, tape)
                self._actor_step(T.neg(T.mean(self.critic.q(self.critic.q1, batch.s, pi))))
            self.critic.soft_update(cfg.tau)
            polyak_update(self.actor.target, self.actor.params, cfg.tau)
        return stats

    # ------------------------------------------------------------ checkpoints

    def trees(self):
        tag = self.cfg.backbone
        out = {
            f"{tag}.actor": self.actor.params,
            f"{tag}.q1": self.critic.q1,
            f"{tag}.q2": self.critic.q2,
            f"{tag}.q1_target": self.critic.t1,
            f"{tag}.q2_target": self.critic.t2,
        }
        if self.actor.target is not None:
            out[f"{tag}.actor_target"] = self.actor.target
        if self.actor.stochastic:
            out[f"{tag}.log_alpha"] = self.log_alpha
        return out

    def save(self, path):
        tensors = {}
        for key, tree in self.trees().items():
            for name, value in tree.values.items():
                tensors[f"{key}/{name}"] = value
        save_tensors(path, tensors)

    def load(self, path):
        tensors = load_tensors(path)
        trees = self.trees()
        expected = {f"{k}/{n}" for k, t in trees.items() for n in t.names()}
        if set(tensors) != expected:
            found = sorted({k.split("/")[0] for k in tensors})
            raise CheckpointError(
                f"agent checkpoint does not match backbone {self.cfg.backbone!r}: found {found}"
            )
        for key, tree in trees.items():
            try:
                tree.load_state_dict(tensors, prefix=f"{key}/")
            except ValueError as exc:
                raise CheckpointError(f"agent checkpoint dim mismatch: {exc}") from None
