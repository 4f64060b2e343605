"""Minimal module system: parameter discovery, linear layers and stacked GRUs."""
from __future__ import annotations

from typing import Iterator, Mapping

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Parameters are ``Tensor`` attributes with ``requires_grad``; sub-modules nest by attribute name."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                if val.requires_grad:
                    yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state: Mapping[str, np.ndarray], prefix: str = "") -> None:
        params = self.parameters()
        missing = [k for k in params if prefix + k not in state]
        if missing:
            raise KeyError(f"state is missing parameters: {missing[:5]}")
        for k, p in params.items():
            arr = np.asarray(state[prefix + k], dtype=np.float64)
            if arr.shape != p.shape:
                raise T.ShapeError(f"parameter '{k}': checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data[...] = arr


def param(arr, name: str | None = None) -> Tensor:
    return Tensor(arr, requires_grad=True, name=name)


def uniform(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / np.sqrt(n_in)
        self.weight = param(uniform(rng, (n_in, n_out), bound))
        self.bias = param(uniform(rng, (n_out,), bound)) if bias else None
        self.n_in, self.n_out = n_in, n_out

    def __call__(self, x) -> Tensor:
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class GRULayer(Module):
    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(hidden)
        self.w_ih = param(uniform(rng, (n_in, 3 * hidden), bound))
        self.w_hh = param(uniform(rng, (hidden, 3 * hidden), bound))
        self.b_ih = param(uniform(rng, (3 * hidden,), bound))
        self.b_hh = param(uniform(rng, (3 * hidden,), bound))
        self.hidden = hidden

    def __call__(self, x: Tensor, reverse: bool = False) -> Tensor:
        if reverse:
            x = T.flip(x, 1)
        h0 = np.zeros((x.shape[0], self.hidden))
        out = T.gru(x, h0, self.w_ih, self.w_hh, self.b_ih, self.b_hh)
        return T.flip(out, 1) if reverse else out


class GRU(Module):
    """Stacked (optionally bidirectional) GRU over (B, T, I) -> (B, T, H * directions)."""

    def __init__(self, n_in: int, hidden: int, layers: int, rng: np.random.Generator, bidirectional: bool = True):
        if layers < 1 or hidden < 1:
            raise ValueError(f"GRU needs layers >= 1 and hidden >= 1, got {layers}, {hidden}")
        self.bidirectional = bidirectional
        dirs = 2 if bidirectional else 1
        self.forward_layers = []
        self.backward_layers = []
        for i in range(layers):
            size = n_in if i == 0 else hidden * dirs
            self.forward_layers.append(GRULayer(size, hidden, rng))
            if bidirectional:
                self.backward_layers.append(GRULayer(size, hidden, rng))
        self.out_size = hidden * dirs

    def __call__(self, x: Tensor) -> Tensor:
        for i, fwd in enumerate(self.forward_layers):
            h = fwd(x)
            if self.bidirectional:
                h = T.concat([h, self.backward_layers[i](x, reverse=True)], axis=-1)
            x = h
        return x
