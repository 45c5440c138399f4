"""Reverse-mode differentiation, MLPs, optimizers and numeric helpers."""
from . import tape
from .checkpoint import CheckpointError, load_tensors, load_trees, save_tensors, save_trees
from .functions import gaussian_reparam_sample, logsumexp, soft_clamp, softmax_temp
from .mlp import MlpSpec, forward, init_mlp, split_gaussian
from .optim import AdamState, adam_step, polyak_update
from .params import ParamTree
from .tape import NonFiniteError, Tape, TapeError, Var

__all__ = [
    "AdamState", "CheckpointError", "MlpSpec", "NonFiniteError", "ParamTree", "Tape",
    "TapeError", "Var", "adam_step", "forward", "gaussian_reparam_sample", "init_mlp",
    "load_tensors", "load_trees", "logsumexp", "polyak_update", "save_tensors", "save_trees",
    "soft_clamp", "softmax_temp", "split_gaussian", "tape",
]
