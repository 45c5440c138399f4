"""Central finite-difference oracle for tape gradients."""
import numpy as np

from sung.numerics import Tape
from sung.numerics import tape as T


def rel_error(a, n):
    """Norm-wise relative error between analytic and numeric gradient vectors."""
    a, n = np.ravel(a), np.ravel(n)
    denom = max(np.linalg.norm(a) + np.linalg.norm(n), 1e-10)
    return float(np.linalg.norm(a - n) / denom)


def check_tree_grads(loss_fn, trees, rng, n_coords=24, h=1e-5):
    """Max relative error over every tensor of ``trees``.

    ``loss_fn(tape)`` must rebuild the loss from scratch (any randomness
    re-seeded inside) and return a scalar Var when given a tape, a value
    when given None.
    """
    for tree in trees:
        tree.zero_grad()
    tape = Tape()
    tape.backward(loss_fn(tape))
    worst = 0.0
    for tree in trees:
        for name in tree.names():
            vals = tree.values[name].reshape(-1)
            grad = tree.grads[name].reshape(-1).copy()
            idx = rng.choice(vals.size, size=min(n_coords, vals.size), replace=False)
            num = np.empty(len(idx))
            for j, i in enumerate(idx):
                orig = vals[i]
                vals[i] = orig + h
                fp = float(T.as_value(loss_fn(None)))
                vals[i] = orig - h
                fm = float(T.as_value(loss_fn(None)))
                vals[i] = orig
                num[j] = (fp - fm) / (2 * h)
            worst = max(worst, rel_error(grad[idx], num))
    return worst


def check_input_grad(fn, x, h=1e-5):
    """Relative error of d fn(x) / dx for a scalar-valued tape function of an array."""
    x = np.array(x, dtype=np.float64)
    tape = Tape()
    xv = tape.watch(x)
    out = fn(xv)
    tape.backward(out)
    analytic = xv.grad if xv.grad is not None else np.zeros_like(x)
    num = np.zeros_like(x)
    flat, nflat = x.reshape(-1), num.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(T.as_value(fn(x)))
        flat[i] = orig - h
        fm = float(T.as_value(fn(x)))
        flat[i] = orig
        nflat[i] = (fp - fm) / (2 * h)
    return rel_error(analytic, num)
