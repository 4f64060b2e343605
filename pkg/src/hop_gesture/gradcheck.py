"""Central-difference verification of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    excluded: list[tuple[str, tuple[int, ...]]] = field(default_factory=list)
    worst: tuple[str, tuple[int, ...]] | None = None

    def __float__(self) -> float:
        return self.max_rel_error


def grad_check(fn: Callable[..., Tensor], x: Tensor | Sequence[Tensor], eps: float = 1e-5,
               **kw) -> GradCheckReport:
    """Compare ``fn(*x)``'s reverse-mode gradient against central differences.

    Error per coordinate is |analytic - central| / max(1, |central|).  A
    coordinate whose forward and backward one-sided differences disagree by
    more than ``kink_tol`` sits on a non-differentiable point (relu at 0,
    a clamp edge); it is excluded and listed in ``report.excluded``.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    named = {f"arg{i}": t for i, t in enumerate(xs)}
    return grad_check_params(lambda: fn(*xs), named, eps=eps, **kw)


def grad_check_params(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor], eps: float = 1e-5,
                      kink_tol: float = 1e-2, max_coords: int | None = None,
                      rng: np.random.Generator | None = None) -> GradCheckReport:
    """Gradient check for a closure over ``params`` (perturbed in place).

    ``max_coords`` caps the number of coordinates probed per tensor; the
    probed subset is drawn from ``rng``.
    """
    for p in params.values():
        p.requires_grad = True
        p.zero_grad()
    loss_fn().backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros(p.shape)) for name, p in params.items()}
    for p in params.values():
        p.zero_grad()

    def value() -> float:
        with no_grad():
            return loss_fn().item()

    f0 = value()
    worst_err, worst_at, n_checked = 0.0, None, 0
    excluded: list[tuple[str, tuple[int, ...]]] = []
    for name, p in params.items():
        coords = list(np.ndindex(p.shape))
        if max_coords is not None and len(coords) > max_coords:
            rng = rng or np.random.default_rng(0)
            pick = rng.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[i] for i in sorted(pick)]
        flat = p.data
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + eps
            fp = value()
            flat[idx] = orig - eps
            fm = value()
            flat[idx] = orig
            central = (fp - fm) / (2 * eps)
            scale = max(1.0, abs(central))
            if abs((fp - f0) - (f0 - fm)) / eps > kink_tol * scale:
                excluded.append((name, idx))
                continue
            err = abs(analytic[name][idx] - central) / scale
            n_checked += 1
            if err > worst_err or worst_at is None:
                worst_err, worst_at = err, (name, idx)
    return GradCheckReport(worst_err, n_checked, excluded, worst_at)
