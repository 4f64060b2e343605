"""Gesture evaluation: Frechet gesture distance, beat consistency and diversity."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .audio import MelConfig, Waveform, mel_spectrogram
from .checkpoint import directory_hash, load_tensors, save_tensors
from .nn import GRU, Linear, Module
from .optim import Adam
from .tensor import ShapeError


class MetricError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Frechet distance
# ---------------------------------------------------------------------------

def matrix_sqrt_psd(s: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Symmetric PSD square root via eigh; negative eigenvalues are clipped to zero."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeError(f"matrix_sqrt_psd needs a square matrix, got {s.shape}")
    asym = np.abs(s - s.T).max() if s.size else 0.0
    if asym > tol:
        raise MetricError(f"matrix is not symmetric (max |S - S^T| = {asym:.3g} > {tol})")
    w, v = np.linalg.eigh(0.5 * (s + s.T))
    r = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return 0.5 * (r + r.T)


@dataclass
class GaussianSummary:
    mean: np.ndarray
    cov: np.ndarray


def gaussian_summary(latents: np.ndarray, jitter: float = 1e-6) -> GaussianSummary:
    x = np.asarray(latents, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise MetricError(f"need at least 2 samples for a covariance, got {x.shape[0]}")
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    cov = 0.5 * (cov + cov.T) + jitter * np.eye(cov.shape[0])
    return GaussianSummary(x.mean(axis=0), cov)


def _trace_sqrt_product(a: np.ndarray, b: np.ndarray) -> float:
    ra = matrix_sqrt_psd(a)
    return float(np.trace(matrix_sqrt_psd(ra @ b @ ra, tol=1e-6 * max(1.0, np.abs(b).max()))))


def frechet_distance(g1: GaussianSummary, g2: GaussianSummary) -> float:
    """||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)).

    The cross term uses the symmetric form sqrt(S1)^T S2 sqrt(S1), evaluated in
    both orders and averaged so the result is exactly symmetric in its arguments.
    """
    diff = g1.mean - g2.mean
    cross = 0.5 * (_trace_sqrt_product(g1.cov, g2.cov) + _trace_sqrt_product(g2.cov, g1.cov))
    d2 = float(diff @ diff) + float(np.trace(g1.cov) + np.trace(g2.cov)) - 2.0 * cross
    return max(d2, 0.0)


def frechet_from_latents(real: np.ndarray, gen: np.ndarray) -> float:
    return frechet_distance(gaussian_summary(real), gaussian_summary(gen))


# ---------------------------------------------------------------------------
# feature extractor (GRU autoencoder)
# ---------------------------------------------------------------------------

@dataclass
class ExtractorConfig:
    joints: int = 9
    latent: int = 8
    hidden: int = 32
    epochs: int = 60
    lr: float = 3e-3
    seed: int = 0


class FeatureExtractor(Module):
    """GRU autoencoder over flattened pose windows; ``encode`` gives the FGD feature."""

    def __init__(self, cfg: ExtractorConfig):
        if cfg.latent < 2:
            raise MetricError(f"latent dimension must be >= 2, got {cfg.latent}")
        rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.encoder = GRU(cfg.joints * 3, cfg.hidden, 1, rng, bidirectional=False)
        self.to_latent = Linear(cfg.hidden, cfg.latent, rng)
        self.from_latent = Linear(cfg.latent, cfg.hidden, rng)
        self.decoder = GRU(cfg.hidden, cfg.hidden, 1, rng, bidirectional=False)
        self.out = Linear(cfg.hidden, cfg.joints * 3, rng)

    def _flat(self, poses) -> np.ndarray:
        x = np.asarray(poses, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        if x.shape[2] != self.cfg.joints:
            raise ShapeError(f"extractor expects {self.cfg.joints} joints, got {x.shape[2]}")
        return x.reshape(x.shape[0], x.shape[1], -1)

    def _encode(self, x):
        h = self.encoder(x)
        return self.to_latent(h[:, -1])

    def reconstruct(self, poses):
        x = self._flat(poses)
        lat = self._encode(x)
        h = T.tanh(self.from_latent(lat))
        steps = T.broadcast_to(T.reshape(h, (x.shape[0], 1, -1)), (x.shape[0], x.shape[1], self.cfg.hidden))
        return self.out(self.decoder(steps)), x

    def loss(self, poses):
        recon, x = self.reconstruct(poses)
        d = recon - x
        return T.mean(d * d)

    def encode(self, poses) -> np.ndarray:
        with T.no_grad():
            return self._encode(self._flat(poses)).data.copy()

    def save(self, directory) -> str:
        save_tensors(directory, self.state_dict(), {"kind": "feature-extractor", "config": asdict(self.cfg)})
        return directory_hash(directory)

    @classmethod
    def load(cls, directory) -> "FeatureExtractor":
        tensors, meta = load_tensors(directory)
        if meta.get("kind") != "feature-extractor":
            raise MetricError(f"{directory} is not a feature-extractor checkpoint")
        fx = cls(ExtractorConfig(**meta["config"]))
        fx.load_state_dict(tensors)
        return fx


def fit_feature_extractor(poses: Sequence[np.ndarray], cfg: ExtractorConfig = ExtractorConfig()
                          ) -> tuple[FeatureExtractor, list[float]]:
    """Full-batch Adam on reconstruction MSE; returns the extractor and per-epoch losses."""
    if len(poses) < 2:
        raise MetricError(f"feature extractor needs at least 2 clips, got {len(poses)}")
    batch = np.stack([np.asarray(p, dtype=np.float64) for p in poses])
    fx = FeatureExtractor(cfg)
    opt = Adam(fx.parameters(), lr=cfg.lr, betas=(0.9, 0.999))
    history = []
    for _ in range(cfg.epochs):
        opt.zero_grad()
        loss = fx.loss(batch)
        loss.backward()
        opt.step()
        history.append(loss.item())
    return fx, history


def fgd(real: Sequence[np.ndarray], gen: Sequence[np.ndarray], fx: FeatureExtractor) -> float:
    if len(real) < 2 or len(gen) < 2:
        raise MetricError(f"FGD needs at least 2 sequences per set, got {len(real)} and {len(gen)}")
    return frechet_from_latents(fx.encode(np.stack(real)), fx.encode(np.stack(gen)))


# ---------------------------------------------------------------------------
# beat consistency
# ---------------------------------------------------------------------------

@dataclass
class BeatConfig:
    sigma: float = 0.1               # seconds
    running_mean_s: float = 1.0      # window of the speed running mean
    onset_n_fft: int = 256
    onset_hop: int = 64
    onset_mels: int = 40
    onset_threshold: float = 3.0     # flux peaks must exceed median + k * std
    onset_min_gap_s: float = 0.05


def angular_speed(poses: np.ndarray, fps: float) -> np.ndarray:
    """Mean joint angular speed (rad/s) at frames 1..T-2 by central differences."""
    p = np.asarray(poses, dtype=np.float64)
    a, b = p[:-2], p[2:]
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = (a * b).sum(axis=-1)
    return (np.arctan2(cross, dot) * fps / 2.0).mean(axis=-1)


def _running_mean(x: np.ndarray, width: int) -> np.ndarray:
    width = max(1, min(width, len(x)))
    left = width // 2
    padded = np.pad(x, (left, width - 1 - left), mode="edge")
    return np.convolve(padded, np.ones(width) / width, mode="valid")


def kinematic_beats(poses: np.ndarray, fps: float, cfg: BeatConfig = BeatConfig(), start: float = 0.0) -> np.ndarray:
    """Times (s) of local angular-speed minima that sit below the running mean."""
    if len(poses) < 5:
        return np.zeros(0)
    s = angular_speed(poses, fps)
    ref = _running_mean(s, int(round(cfg.running_mean_s * fps)))
    i = np.arange(1, len(s) - 1)
    is_min = (s[i] < s[i - 1]) & (s[i] <= s[i + 1]) & (s[i] < ref[i])
    return start + (i[is_min] + 1) / fps            # speed index k is pose frame k + 1


def onset_envelope(w: Waveform, cfg: BeatConfig = BeatConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Log-mel spectral flux (half-wave rectified, summed over bands) and frame times (s)."""
    mc = MelConfig(sample_rate=w.sample_rate, n_fft=cfg.onset_n_fft, hop_length=cfg.onset_hop, n_mels=cfg.onset_mels)
    mel = mel_spectrogram(w, mc).frames
    flux = np.maximum(np.diff(mel, axis=0), 0.0).sum(axis=1)
    times = (np.arange(1, mel.shape[0]) * cfg.onset_hop + cfg.onset_n_fft / 2) / w.sample_rate
    return flux, times


def audio_beats(w: Waveform, cfg: BeatConfig = BeatConfig(), start: float = 0.0) -> np.ndarray:
    flux, times = onset_envelope(w, cfg)
    if len(flux) < 3:
        return np.zeros(0)
    thresh = np.median(flux) + cfg.onset_threshold * flux.std()
    gap = max(1, int(round(cfg.onset_min_gap_s * w.sample_rate / cfg.onset_hop)))
    peaks = []
    for k in np.argsort(-flux, kind="stable"):
        if flux[k] <= thresh:
            break
        if all(abs(k - p) > gap for p in peaks):
            peaks.append(k)
    return start + np.sort(times[np.array(peaks, dtype=int)]) if peaks else np.zeros(0)


def beat_alignment(kin: np.ndarray, aud: np.ndarray, sigma: float) -> float:
    """Mean over kinematic beats of exp(-d^2 / 2 sigma^2), d the distance to the nearest audio beat."""
    if len(kin) == 0 or len(aud) == 0:
        return 0.0
    d = np.abs(np.asarray(kin)[:, None] - np.asarray(aud)[None, :]).min(axis=1)
    return float(np.mean(np.exp(-d ** 2 / (2.0 * sigma ** 2))))


def beat_consistency(audio: Waveform, poses: np.ndarray, fps: float = 15.0, cfg: BeatConfig = BeatConfig(),
                     audio_start: float = 0.0, pose_start: float = 0.0) -> float:
    return beat_alignment(kinematic_beats(poses, fps, cfg, pose_start), audio_beats(audio, cfg, audio_start), cfg.sigma)


def mean_beat_consistency(audios: Sequence[Waveform], poses: Sequence[np.ndarray], fps: float = 15.0,
                          cfg: BeatConfig = BeatConfig()) -> float:
    if len(audios) != len(poses):
        raise MetricError(f"{len(audios)} audio clips but {len(poses)} pose sequences")
    return float(np.mean([beat_consistency(a, p, fps, cfg) for a, p in zip(audios, poses)]))


# ---------------------------------------------------------------------------
# diversity
# ---------------------------------------------------------------------------

def diversity(gens: Sequence[np.ndarray], pairs: int = 500, seed: int = 0) -> float:
    """Mean L1 distance between flattened sequences over seeded random pairs (no self-pairs)."""
    if len(gens) < 2:
        raise MetricError(f"diversity needs at least 2 sequences, got {len(gens)}")
    if pairs < 1:
        raise MetricError(f"pair count must be >= 1, got {pairs}")
    flat = np.stack([np.asarray(g, dtype=np.float64).reshape(-1) for g in gens])
    n = flat.shape[0]
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, size=pairs)
    j = (i + rng.integers(1, n, size=pairs)) % n
    return float(np.abs(flat[i] - flat[j]).sum(axis=1).mean())
