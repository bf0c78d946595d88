"""Named parameter storage and the Adam update.

ParamStore maps dotted names to tensors in insertion order and carries the
optimizer moment buffers alongside, so a checkpoint can persist the full
training state. Non-learnable state (batch-norm running statistics) lives in a
parallel buffer map.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import UsageError
from .tensor import Tensor


class ParamStore:
    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def parameter(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params:
            raise UsageError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        return t

    def buffer(self, name: str, data: np.ndarray) -> np.ndarray:
        if name in self.buffers:
            raise UsageError(f"duplicate buffer name {name!r}")
        arr = np.ascontiguousarray(data, dtype=np.float32)
        self.buffers[name] = arr
        return arr

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Symmetric uniform init with a fan-in scale (conv weight (O,C,kh,kw))."""
    fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
    limit = 1.0 / math.sqrt(max(1, fan_in))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


def adam_step(store: ParamStore, lr: float, weight_decay: float = 0.0,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
    """Adam with decoupled weight decay; zeroes gradients afterwards."""
    b1, b2 = betas
    store.step_count += 1
    t = store.step_count
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in store.params.items():
        if p.grad is None:
            raise UsageError(f"adam_step: parameter {name!r} has no gradient")
        g = p.grad
        m = store.m.setdefault(name, np.zeros_like(p.data))
        v = store.v.setdefault(name, np.zeros_like(p.data))
        m[...] = b1 * m + (1.0 - b1) * g
        v[...] = b2 * v + (1.0 - b2) * g * g
        if weight_decay:
            p.data -= np.float32(lr * weight_decay) * p.data
        mhat = m / np.float32(bc1)
        vhat = v / np.float32(bc2)
        p.data -= (np.float32(lr) * mhat / (np.sqrt(vhat) + np.float32(eps))).astype(np.float32)
        p.grad[...] = 0.0
