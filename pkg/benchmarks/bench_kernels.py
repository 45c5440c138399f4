"""Compiled vs numpy kernel timings, plus one full agent update per backend.

    python3 benchmarks/bench_kernels.py [--repeat 200] [--steps 300]

The full-step numbers come from a subprocess per backend because the
kernel module is fixed at import (SUNG_KERNELS=python forces the fallback).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from sung._ext import ACT_RELU, ACT_TANH, compiled_available, get_backend

STEP_SNIPPET = r"""
import time, numpy as np
from sung import runner
from sung._ext import BACKEND
from sung.agents import Agent, default_agent_config
from sung.batch import TransitionBatch
runner.tune_allocator()
rng = np.random.default_rng(0)
agent = Agent(default_agent_config("{reg}", hidden=({h}, {h})), 2, 2, 1.0, rng)
m = 256
batch = TransitionBatch(rng.normal(size=(m, 2)), rng.uniform(-1, 1, (m, 2)), rng.normal(size=m),
                        rng.normal(size=(m, 2)), np.zeros(m))
for _ in range(20):
    agent.update(batch, rng)
t = time.perf_counter()
for _ in range({steps}):
    agent.update(batch, rng)
print(BACKEND, (time.perf_counter() - t) / {steps} * 1e3)
"""


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    rows = []
    for m, fan_in, fan_out in ((256, 4, 64), (256, 64, 64), (2560, 32, 32)):
        x = rng.normal(size=(m, fan_in))
        w = rng.normal(size=(fan_in, fan_out))
        b = rng.normal(size=fan_out)
        gy = rng.normal(size=(m, fan_out))
        for name in ("python", "cython"):
            k = get_backend(name)
            y = k.dense_forward(x, w, b, ACT_RELU)
            fwd = timeit.timeit(lambda: k.dense_forward(x, w, b, ACT_TANH), number=repeat) / repeat
            bwd = timeit.timeit(lambda: k.dense_backward(x, w, y, gy, ACT_RELU, True, True), number=repeat) / repeat
            rows.append((f"dense {m}x{fan_in}->{fan_out}", name, fwd * 1e6, bwd * 1e6))
    n = 20_000
    p, g, mo, v = (rng.normal(size=n) for _ in range(4))
    v = np.abs(v)
    tgt = rng.normal(size=n)
    for name in ("python", "cython"):
        k = get_backend(name)
        adam = timeit.timeit(lambda: k.adam_update(p, g, mo, v, 1e-4, 0.9, 0.999, 1e-8, 0.5, 0.5),
                             number=repeat) / repeat
        pol = timeit.timeit(lambda: k.polyak_update(tgt, p, 0.005), number=repeat) / repeat
        rows.append((f"adam/polyak n={n}", name, adam * 1e6, pol * 1e6))
    return rows


def bench_steps(steps):
    out = []
    for reg, h in (("bc", 64), ("cql", 64), ("bc", 256)):
        for backend in ("python", "cython"):
            env = dict(os.environ, SUNG_KERNELS=backend)
            code = STEP_SNIPPET.format(reg=reg, h=h, steps=steps)
            res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
            used, ms = res.stdout.split()
            out.append((f"{reg} update, hidden {h}", used, float(ms)))
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--steps", type=int, default=300)
    args = ap.parse_args()
    if not compiled_available():
        sys.exit("compiled kernels are not built; run pip install -e . first")
    print(f"{'kernel':28s} {'backend':8s} {'fwd/adam us':>12s} {'bwd/polyak us':>14s}")
    for name, backend, a, b in bench_kernels(args.repeat):
        print(f"{name:28s} {backend:8s} {a:12.1f} {b:14.1f}")
    print()
    print(f"{'training step':28s} {'backend':8s} {'ms/step':>12s}")
    for name, backend, ms in bench_steps(args.steps):
        print(f"{name:28s} {backend:8s} {ms:12.3f}")


if __name__ == "__main__":
    main()
