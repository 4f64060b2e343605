"""Training objective: Huber reconstruction, style divergence, speaker KLD and adversarial terms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

SCORE_CLAMP = 1e-7


class LossContractError(ValueError):
    pass


def huber_loss(target, pred, delta: float = 1.0) -> Tensor:
    target, pred = T.as_tensor(target), T.as_tensor(pred)
    if target.shape != pred.shape:
        raise ShapeError(f"huber_loss: target {target.shape} vs prediction {pred.shape}")
    return T.mean(T.smooth_l1(target - pred, delta))


def style_diversity_loss(g_a, g_b, margin: float = 1.0, z_a=None, z_b=None, delta: float = 1.0) -> Tensor:
    """-min(huber(g_a, g_b), margin): rewards style-driven divergence up to the margin.

    When the two style latents are supplied they must differ.
    """
    if z_a is not None and z_b is not None:
        za = z_a.data if isinstance(z_a, Tensor) else np.asarray(z_a)
        zb = z_b.data if isinstance(z_b, Tensor) else np.asarray(z_b)
        if np.array_equal(za, zb):
            raise LossContractError("style loss needs two different style latents; got identical ones")
    return -T.clamp(huber_loss(g_a, g_b, delta), hi=margin)


def kld_loss(mu, logvar) -> Tensor:
    """0.5 * sum(mu^2 + e^logvar - 1 - logvar) per speaker, averaged over speakers (rows)."""
    mu, logvar = T.as_tensor(mu), T.as_tensor(logvar)
    if mu.shape != logvar.shape:
        raise ShapeError(f"kld_loss: mu {mu.shape} vs logvar {logvar.shape}")
    if mu.ndim == 1:
        mu, logvar = T.reshape(mu, (1, -1)), T.reshape(logvar, (1, -1))
    per = T.tsum(mu * mu + (T.expm1(logvar) - logvar), axis=-1) * 0.5
    return T.mean(per)


def _check_scores(name: str, s: Tensor) -> None:
    d = s.data
    if np.any(np.isnan(d)):
        raise LossContractError(f"{name} scores contain NaN")
    if np.any(d < 0.0) or np.any(d > 1.0):
        raise LossContractError(f"{name} scores must lie in (0, 1); got range [{d.min():.4g}, {d.max():.4g}]")


def gan_losses(d_real, d_fake) -> tuple[Tensor, Tensor]:
    """(L_D, L_G) with L_D = -[ln d_real + ln(1 - d_fake)] and non-saturating L_G = -ln d_fake.

    Scores are clamped to [1e-7, 1 - 1e-7] before the logs; batches are averaged.
    """
    d_real, d_fake = T.as_tensor(d_real), T.as_tensor(d_fake)
    _check_scores("discriminator(real)", d_real)
    _check_scores("discriminator(fake)", d_fake)
    lo, hi = SCORE_CLAMP, 1.0 - SCORE_CLAMP
    real = T.clamp(d_real, lo, hi)
    fake = T.clamp(d_fake, lo, hi)
    loss_d = -(T.mean(T.log(real)) + T.mean(T.log(1.0 - fake)))
    loss_g = -T.mean(T.log(fake))
    return loss_d, loss_g


@dataclass
class LossWeights:
    huber: float = 1.0
    style: float = 0.1
    kld: float = 0.01
    gan: float = 0.05

    def __post_init__(self):
        bad = {k: v for k, v in vars(self).items() if v < 0}
        if bad:
            raise ValueError(f"loss weights must be non-negative, got {bad}")


def total_loss(parts: dict, weights: LossWeights = LossWeights()):
    """alpha*huber + beta*style + gamma*kld + lambda*gan over a dict of parts (Tensors or floats)."""
    missing = [k for k in ("huber", "style", "kld", "gan") if k not in parts]
    if missing:
        raise LossContractError(f"total_loss is missing parts {missing}")
    if isinstance(weights, (tuple, list)):
        weights = LossWeights(*weights)
    return (parts["huber"] * weights.huber + parts["style"] * weights.style
            + parts["kld"] * weights.kld + parts["gan"] * weights.gan)
