"""Named parameter collections backed by one flat float64 buffer."""
from __future__ import annotations

import math

import numpy as np


class ParamTree:
    """Ordered map ``name -> (value, gradient)``.

    Values and gradients are views into two contiguous buffers so optimizer
    and target-network updates run as a single kernel call per tree.
    """

    def __init__(self, shapes):
        shapes = [(str(n), tuple(int(d) for d in s)) for n, s in shapes]
        names = [n for n, _ in shapes]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        total = sum(math.prod(s) for _, s in shapes)
        self.flat = np.zeros(total)
        self.flat_grad = np.zeros(total)
        self.values = {}
        self.grads = {}
        self._shapes = dict(shapes)
        offset = 0
        for name, shape in shapes:
            size = math.prod(shape)
            self.values[name] = self.flat[offset:offset + size].reshape(shape)
            self.grads[name] = self.flat_grad[offset:offset + size].reshape(shape)
            offset += size
        self._has_grad = False

    def names(self):
        return list(self.values)

    def shape(self, name):
        return self._shapes[name]

    def __len__(self):
        return len(self.values)

    def __contains__(self, name):
        return name in self.values

    def __getitem__(self, name):
        return self.values[name]

    @property
    def size(self):
        return self.flat.size

    def zero_grad(self):
        self.flat_grad.fill(0.0)
        self._has_grad = False

    def mark_grad(self):
        self._has_grad = True

    @property
    def has_grad(self):
        return self._has_grad

    def copy(self):
        other = ParamTree(self._shapes.items())
        other.flat[:] = self.flat
        return other

    def load_flat(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.flat.shape:
            raise ValueError("load_flat: size mismatch")
        self.flat[:] = values

    def same_layout(self, other):
        return list(self._shapes.items()) == list(other._shapes.items())

    def state_dict(self):
        return {name: value.copy() for name, value in self.values.items()}

    def load_state_dict(self, state, prefix=""):
        for name in self.values:
            arr = state[prefix + name]
            if arr.shape != self.values[name].shape:
                raise ValueError(
                    f"shape mismatch for {prefix + name}: {arr.shape} vs {self.values[name].shape}"
                )
            self.values[name][...] = arr

    def __eq__(self, other):
        return (
            isinstance(other, ParamTree)
            and self.same_layout(other)
            and np.array_equal(self.flat, other.flat)
        )

    __hash__ = None
