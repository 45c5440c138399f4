"""Multilayer perceptrons evaluated through the fused dense kernel."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tape as T
from .params import ParamTree

ACTIVATIONS = ("tanh", "relu")
OUTPUTS = ("identity", "tanh-squash", "gaussian-head")


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden: tuple = (64, 64)
    output_dim: int = 1
    activation: str = "relu"
    output: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        dims = (self.input_dim, self.output_dim, *self.hidden)
        if any(int(d) <= 0 for d in dims):
            raise ValueError(f"MlpSpec dims must be positive: {dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.output not in OUTPUTS:
            raise ValueError(f"unknown output transform {self.output!r}")

    @property
    def final_dim(self):
        # Gaussian heads emit mean and log-std channels.
        return 2 * self.output_dim if self.output == "gaussian-head" else self.output_dim

    def layer_dims(self):
        dims = (self.input_dim, *self.hidden, self.final_dim)
        return list(zip(dims[:-1], dims[1:]))

    def param_shapes(self):
        shapes = []
        for i, (fan_in, fan_out) in enumerate(self.layer_dims()):
            shapes.append((f"l{i}.w", (fan_in, fan_out)))
            shapes.append((f"l{i}.b", (fan_out,)))
        return shapes


def init_mlp(spec: MlpSpec, rng: np.random.Generator) -> ParamTree:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    tree = ParamTree(spec.param_shapes())
    for i, (fan_in, fan_out) in enumerate(spec.layer_dims()):
        bound = 1.0 / np.sqrt(fan_in)
        tree.values[f"l{i}.w"][...] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        tree.values[f"l{i}.b"][...] = rng.uniform(-bound, bound, size=(fan_out,))
    return tree


def forward(params: ParamTree, spec: MlpSpec, x, tape=None):
    """Evaluate the MLP on a batch ``x`` of shape (B, input_dim).

    With a tape, parameters enter as leaves and the result is a Var that can
    be backpropagated; without one, plain arrays are returned. A 1-D input is
    treated as a single row and the leading axis is dropped from the result.
    """
    xv = T.as_value(x)
    single = np.ndim(xv) == 1
    if single:
        x = T.reshape(x, (1, -1)) if isinstance(x, T.Var) else np.asarray(xv)[None, :]
        xv = T.as_value(x)
    if xv.shape[-1] != spec.input_dim:
        raise ValueError(f"forward: input dim {xv.shape[-1]} != spec input dim {spec.input_dim}")
    n_layers = len(spec.hidden) + 1
    h = x
    for i in range(n_layers):
        if tape is not None:
            w, b = tape.param(params, f"l{i}.w"), tape.param(params, f"l{i}.b")
        else:
            w, b = params.values[f"l{i}.w"], params.values[f"l{i}.b"]
        last = i == n_layers - 1
        if last:
            act = "tanh" if spec.output == "tanh-squash" else "identity"
        else:
            act = spec.activation
        h = T.dense(h, w, b, act)
    if single:
        h = h[0]
    return h


def split_gaussian(out, output_dim):
    """Split a gaussian-head output into (mean, raw log-std)."""
    return out[..., :output_dim], out[..., output_dim:]
