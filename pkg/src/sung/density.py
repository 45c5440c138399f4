"""VAE state-action density model and the uncertainty scores built on it.

U(s, a) is the per-sample ELBO loss: high where the joint (s, a) density is
low. The Q-std variant scores disagreement between the twin critics instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import (
    AdamState, MlpSpec, Tape, adam_step, forward, gaussian_reparam_sample, init_mlp,
    soft_clamp,
)
from .numerics import tape as T

LOG_2PI = math.log(2.0 * math.pi)
# Encoder log-std is squashed into this range to keep exp() tame early in training.
LOG_STD_RANGE = (-6.0, 3.0)


@dataclass
class VaeConfig:
    lr: float = 1e-3
    kl_weight: float = 0.5
    hidden: tuple = (64, 64)
    batch_size: int = 256
    latent_samples: int = 1


class VaeModel:
    """Gaussian encoder q(z|s,a) and unit-variance Gaussian decoder p(s,a|z)."""

    def __init__(self, state_dim, action_dim, rng, cfg: VaeConfig | None = None):
        cfg = cfg or VaeConfig()
        self.cfg = cfg
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.data_dim = state_dim + action_dim
        self.latent_dim = 2 * self.data_dim
        self.kl_weight = cfg.kl_weight
        self.enc_spec = MlpSpec(self.data_dim, cfg.hidden, self.latent_dim, "relu", "gaussian-head")
        self.dec_spec = MlpSpec(self.latent_dim, cfg.hidden, self.data_dim, "relu", "identity")
        self.encoder = init_mlp(self.enc_spec, rng)
        self.decoder = init_mlp(self.dec_spec, rng)
        self.enc_opt = AdamState.for_tree(self.encoder, cfg.lr)
        self.dec_opt = AdamState.for_tree(self.decoder, cfg.lr)

    def trees(self):
        return {"vae.encoder": self.encoder, "vae.decoder": self.decoder}

    def encode(self, x, tape=None):
        out = forward(self.encoder, self.enc_spec, x, tape)
        mu = out[:, :self.latent_dim]
        log_std = soft_clamp(out[:, self.latent_dim:], *LOG_STD_RANGE)
        return mu, log_std

    def decode(self, z, tape=None):
        return forward(self.decoder, self.dec_spec, z, tape)


def kl_diag_gaussian(mu, log_std):
    """Per-sample KL[N(mu, sigma^2) || N(0, I)] = 1/2 sum(mu^2 + sigma^2 - 1 - 2 log sigma)."""
    terms = T.sub(T.add(T.square(mu), T.exp(T.mul(log_std, 2.0))), T.add(T.mul(log_std, 2.0), 1.0))
    return T.mul(T.sum_(terms, axis=1), 0.5)


def reconstruction_nll(x, x_hat):
    """-log N(x; x_hat, I) per sample: 1/2 ||x - x_hat||^2 + d/2 log 2 pi."""
    d = np.shape(T.as_value(x_hat))[1]
    return T.add(T.mul(T.sum_(T.square(T.sub(x_hat, x)), axis=1), 0.5), 0.5 * d * LOG_2PI)


def elbo_per_sample(model, s, a, noise, tape=None):
    """Per-sample ELBO loss (M,) for states ``s`` (normalized) and actions ``a``."""
    x = np.concatenate([np.atleast_2d(s), np.atleast_2d(a)], axis=1)
    mu, log_std = model.encode(x, tape)
    z = gaussian_reparam_sample(mu, log_std, noise)
    x_hat = model.decode(z, tape)
    return T.add(reconstruction_nll(x, x_hat), T.mul(kl_diag_gaussian(mu, log_std), model.kl_weight))


def elbo_loss(model, s, a, noise, tape=None):
    """Batch-mean ELBO loss; differentiable when a tape is given."""
    return T.mean(elbo_per_sample(model, s, a, noise, tape))


def vae_step(model, s, a, rng):
    """One Adam step on the ELBO of the pair batch. Returns the loss value."""
    noise = rng.standard_normal((len(s), model.latent_dim))
    tape = Tape()
    loss = elbo_loss(model, s, a, noise, tape)
    model.encoder.zero_grad()
    model.decoder.zero_grad()
    tape.backward(loss)
    adam_step(model.enc_opt, model.encoder)
    adam_step(model.dec_opt, model.decoder)
    return float(loss.value)


def train_vae(model, states, actions, grad_steps, batch_size, seed):
    """Minibatch Adam on the ELBO over (s, a) pairs; returns the per-step loss curve."""
    rng = np.random.default_rng(seed)
    n = len(states)
    if n == 0:
        raise ValueError("train_vae: empty dataset")
    curve = np.empty(grad_steps)
    for step in range(grad_steps):
        idx = rng.integers(0, n, size=batch_size)
        curve[step] = vae_step(model, states[idx], actions[idx], rng)
    return curve


class UncertaintyEstimator:
    """U(s, a): ELBO loss under the VAE, or |Q1 - Q2| under the twin critics."""

    VARIANTS = ("vae", "q-std")

    def __init__(self, variant, vae=None, critic=None, latent_samples=1):
        if variant not in self.VARIANTS:
            raise ValueError(f"unknown uncertainty variant {variant!r}")
        if variant == "vae" and (vae is None or critic is not None):
            raise ValueError("vae variant needs exactly a VAE model")
        if variant == "q-std" and (critic is None or vae is not None):
            raise ValueError("q-std variant needs exactly a critic")
        self.variant = variant
        self.vae = vae
        self.critic = critic
        self.latent_samples = int(latent_samples)

    def __call__(self, s, a, rng):
        return self.score(s, a, rng)

    def score(self, s, a, rng):
        """Per-pair scores (M,), no gradient."""
        s = np.atleast_2d(np.asarray(s, dtype=np.float64))
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        if self.variant == "q-std":
            return np.abs(self.critic.q(self.critic.q1, s, a) - self.critic.q(self.critic.q2, s, a))
        total = 0.0
        for _ in range(self.latent_samples):
            noise = rng.standard_normal((len(s), self.vae.latent_dim))
            total = total + elbo_per_sample(self.vae, s, a, noise)
        return total / self.latent_samples if self.latent_samples > 1 else total


def uncertainty(estimator, s, a, rng):
    """Scalar U for one pair (or the mean over a batch)."""
    return float(np.mean(estimator.score(s, a, rng)))
