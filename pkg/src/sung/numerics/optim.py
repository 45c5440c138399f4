"""Adam and Polyak averaging over whole parameter trees."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .._ext import kernels as _K
from .params import ParamTree


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    @classmethod
    def for_tree(cls, tree: ParamTree, lr: float, **kw) -> "AdamState":
        return cls(lr=lr, m=np.zeros(tree.size), v=np.zeros(tree.size), **kw)


def adam_step(state: AdamState, params: ParamTree) -> None:
    """Bias-corrected Adam update in place. Gradients are left for the caller to zero."""
    if not params.has_grad:
        raise RuntimeError("adam_step: no gradients populated since the last zero_grad")
    if state.m is None:
        state.m = np.zeros(params.size)
        state.v = np.zeros(params.size)
    if state.m.shape != params.flat.shape:
        raise ValueError("adam_step: moment shapes do not match parameters")
    state.step += 1
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step
    _K.adam_update(params.flat, params.flat_grad, state.m, state.v,
                   state.lr, state.beta1, state.beta2, state.eps, bias1, bias2)


def polyak_update(target: ParamTree, source: ParamTree, tau: float) -> None:
    """target <- (1 - tau) * target + tau * source."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"polyak_update: tau must lie in [0, 1], got {tau}")
    if not target.same_layout(source):
        raise ValueError("polyak_update: parameter trees do not match")
    _K.polyak_update(target.flat, source.flat, float(tau))
