"""Recurrent gesture generator, speaker style latents and the motion discriminator."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .audio import interpolation_matrix
from .nn import GRU, Linear, Module, param
from .tensor import ShapeError, Tensor


class UnknownSpeakerError(KeyError):
    pass


class SpeakerStyle(Module):
    """Per-speaker Gaussian style latent, sampled by reparameterization."""

    def __init__(self, speakers: Sequence[str], dim: int, rng: np.random.Generator, init_scale: float = 0.1):
        if dim < 1:
            raise ValueError(f"style dimension must be >= 1, got {dim}")
        self.speakers = list(speakers)
        self.index = {s: i for i, s in enumerate(self.speakers)}
        self.dim = dim
        self.mu = param(init_scale * rng.standard_normal((len(self.speakers), dim)))
        self.logvar = param(np.zeros((len(self.speakers), dim)))

    def ids(self, speakers: Sequence[str]) -> np.ndarray:
        try:
            return np.array([self.index[s] for s in speakers], dtype=np.int64)
        except KeyError as exc:
            raise UnknownSpeakerError(f"speaker {exc.args[0]!r} is not registered "
                                      f"(known: {self.speakers})") from None

    def sample(self, speakers: Sequence[str], noise) -> Tensor:
        """z = mu_id + exp(logvar_id / 2) * noise, one row per requested speaker."""
        idx = self.ids(speakers)
        noise = np.asarray(noise, dtype=np.float64).reshape(len(idx), -1)
        if noise.shape[1] != self.dim:
            raise ShapeError(f"noise width {noise.shape[1]} != style dimension {self.dim}")
        return self.mu[idx] + T.exp(self.logvar[idx] * 0.5) * noise


def sample_style(style: SpeakerStyle, speaker: str, noise) -> Tensor:
    z = style.sample([speaker], noise)
    return T.reshape(z, (style.dim,))


@dataclass
class GeneratorConfig:
    frames: int = 34
    joints: int = 9
    layers: int = 2
    hidden: int = 200
    seed_frames: int = 4
    bidirectional: bool = True


class Generator(Module):
    """Bidirectional GRU over per-frame [Z_wr, Z_rg, z, seed poses, seed flag] -> unit direction vectors."""

    def __init__(self, cfg: GeneratorConfig, text_dim: int, graph_dim: int, style_dim: int,
                 rest_pose: np.ndarray, rng: np.random.Generator):
        self.cfg = cfg
        self.text_dim, self.graph_dim, self.style_dim = text_dim, graph_dim, style_dim
        n_in = text_dim + graph_dim + style_dim + cfg.joints * 3 + 1
        self.gru = GRU(n_in, cfg.hidden, cfg.layers, rng, bidirectional=cfg.bidirectional)
        self.head = Linear(self.gru.out_size, cfg.joints * 3, rng)
        self.rest_pose = np.asarray(rest_pose, dtype=np.float64).reshape(cfg.joints, 3)

    def step_inputs(self, ztw, zrg, z, seed_poses) -> Tensor:
        cfg = self.cfg
        ztw, zrg, z = T.as_tensor(ztw), T.as_tensor(zrg), T.as_tensor(z)
        bsz, n_frames = ztw.shape[0], cfg.frames
        if ztw.shape[1:] != (n_frames, self.text_dim):
            raise ShapeError(f"text-audio features {ztw.shape[1:]}, expected ({n_frames}, {self.text_dim})")
        # (B, C, J, T_out) -> (B, T_out, J*C) -> resampled to (B, T, J*C)
        steps = zrg.shape[3]
        flat = T.reshape(T.transpose(zrg, (0, 3, 2, 1)), (bsz, steps, -1))
        if flat.shape[2] != self.graph_dim:
            raise ShapeError(f"graph features flatten to {flat.shape[2]} per step, expected {self.graph_dim}")
        graph = T.matmul(Tensor(interpolation_matrix(steps, n_frames)), flat)
        if z.shape != (bsz, self.style_dim):
            raise ShapeError(f"style latent {z.shape}, expected ({bsz}, {self.style_dim})")
        style = T.broadcast_to(T.reshape(z, (bsz, 1, self.style_dim)), (bsz, n_frames, self.style_dim))
        if seed_poses is None:
            raise ShapeError(f"generator needs {cfg.seed_frames} seed frames")
        seed = np.asarray(seed_poses.data if isinstance(seed_poses, Tensor) else seed_poses, dtype=np.float64)
        seed = seed.reshape(bsz, -1, cfg.joints * 3)
        if seed.shape[1] != cfg.seed_frames:
            raise ShapeError(f"got {seed.shape[1]} seed frames, expected {cfg.seed_frames}")
        seed_channel = np.zeros((bsz, n_frames, cfg.joints * 3 + 1))
        seed_channel[:, :cfg.seed_frames, :-1] = seed
        seed_channel[:, :cfg.seed_frames, -1] = 1.0
        return T.concat([ztw, graph, style, Tensor(seed_channel)], axis=-1)

    def __call__(self, ztw, zrg, z, seed_poses) -> Tensor:
        """Returns poses (B, T, J, 3) with every direction vector unit length."""
        cfg = self.cfg
        h = self.gru(self.step_inputs(ztw, zrg, z, seed_poses))
        raw = T.reshape(self.head(h), (h.shape[0], cfg.frames, cfg.joints, 3))
        return T.unit_vectors(raw, self.rest_pose)


def generate(gen: Generator, ztw, zrg, z, seed_poses) -> Tensor:
    return gen(ztw, zrg, z, seed_poses)


class Discriminator(Module):
    """Scores a pose sequence from its frame-to-frame motion."""

    def __init__(self, joints: int, hidden: int, layers: int, rng: np.random.Generator):
        self.joints = joints
        self.gru = GRU(joints * 3, hidden, layers, rng, bidirectional=True)
        self.head = Linear(self.gru.out_size, 1, rng)

    def __call__(self, poses) -> Tensor:
        poses = T.as_tensor(poses)
        if poses.ndim == 3:
            poses = T.reshape(poses, (1,) + poses.shape)
        bsz, n_frames = poses.shape[0], poses.shape[1]
        if n_frames < 2:
            raise ShapeError(f"discriminator needs at least 2 frames, got {n_frames}")
        flat = T.reshape(poses, (bsz, n_frames, self.joints * 3))
        motion = flat[:, 1:] - flat[:, :-1]
        h = T.mean(self.gru(motion), axis=1)
        return T.sigmoid(T.reshape(self.head(h), (bsz,)))


def discriminate(disc: Discriminator, poses) -> Tensor:
    return disc(poses)
