"""Pure-numpy implementations of the kernels in ``_kernels.pyx``.

Signatures and numerical conventions match the compiled module exactly.
"""
import numpy as np

ACT_IDENTITY, ACT_TANH, ACT_RELU = 0, 1, 2


def dense_forward(x, w, b, act):
    if w.shape[0] != x.shape[1] or b.shape[0] != w.shape[1]:
        raise ValueError("dense_forward: shape mismatch")
    y = x @ w
    y += b
    if act == ACT_TANH:
        np.tanh(y, out=y)
    elif act == ACT_RELU:
        np.maximum(y, 0.0, out=y)
    return y


def dense_backward(x, w, y, gy, act, need_dx, need_dw):
    if act == ACT_TANH:
        gz = gy * (1.0 - y * y)
    elif act == ACT_RELU:
        gz = gy * (y > 0.0)
    else:
        gz = gy
    gx = gz @ w.T if need_dx else None
    if need_dw:
        gw = x.T @ gz
        gb = gz.sum(axis=0)
    else:
        gw = gb = None
    return gx, gw, gb


def adam_update(p, g, m, v, lr, beta1, beta2, eps, bias1, bias2):
    if not (g.shape == m.shape == v.shape == p.shape):
        raise ValueError("adam_update: length mismatch")
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    p -= lr * (m / bias1) / (np.sqrt(v / bias2) + eps)


def polyak_update(target, source, tau):
    if target.shape != source.shape:
        raise ValueError("polyak_update: length mismatch")
    target *= 1.0 - tau
    target += tau * source
