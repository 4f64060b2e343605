from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState):
    """One bias-corrected Adam update, applied in place to ``params``.

    Parameters missing from ``grads`` (or with a ``None`` gradient) are left
    untouched and keep their moments.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"adam: gradient {g.shape} does not match parameter '{name}' {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


class Adam:
    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-4, betas=(0.5, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        adam_step(self.params, {k: p.grad for k, p in self.params.items() if p.grad is not None}, self.state)

    def state_tensors(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.t": np.array([float(self.state.t)])}
        for name in self.params:
            if name in self.state.m:
                out[f"{prefix}.m.{name}"] = self.state.m[name]
                out[f"{prefix}.v.{name}"] = self.state.v[name]
        return out

    def load_state_tensors(self, tensors: Mapping[str, np.ndarray], prefix: str) -> None:
        self.state.t = int(tensors[f"{prefix}.t"][0])
        self.state.m.clear()
        self.state.v.clear()
        for name in self.params:
            key = f"{prefix}.m.{name}"
            if key in tensors:
                self.state.m[name] = np.array(tensors[key])
                self.state.v[name] = np.array(tensors[f"{prefix}.v.{name}"])
