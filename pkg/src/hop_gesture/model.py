"""Model configuration, per-clip feature preparation and the composed gesture model."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .audio import MelConfig, audio_matrix_converter, mel_spectrogram, window_audio, window_count
from .data import ClipRecord, clip_samples
from .gan import Discriminator, Generator, GeneratorConfig, SpeakerStyle
from .graph import (GraphEncoder, GraphEncoderConfig, SkeletonTopology, encode_audio_action, pose_to_graph,
                    skeleton_preset)
from .nn import Module
from .reprogram import (PrototypeTable, ReprogramLayer, TextAudioFusion, VocabEmbeddings, embed_tokens,
                        hashed_embeddings, load_embedding_table)
from .tensor import ShapeError, Tensor


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    skeleton: str = "ted"
    frames: int = 34
    fps: float = 15.0
    sample_rate: int = 16000
    n_fft: int = 512
    hop_length: int = 1067
    n_mels: int = 128
    window_len: int = 3400
    window_stride: int = 2191
    audio_feat: int = 170
    vocab_size: int = 30522
    text_dim: int = 768
    prototypes: int = 1500
    attn_hidden: int = 1024
    heads: int = 8
    fused_dim: int = 768
    embed_seed: int = 0
    embeddings: str | None = None          # optional "V D" table file
    embedding_vocab: str | None = None     # optional token list naming its rows
    graph_embed: int = 10
    diffusion_order: int = 2
    kernel_size: int = 2
    graph_layers: list = field(default_factory=lambda: [{"dilation": 1, "stride": 2}, {"dilation": 2, "stride": 2}])
    graph_residual: bool = True
    bias: bool = True
    style_dim: int = 8
    seed_frames: int = 4
    gen_layers: int = 4
    gen_hidden: int = 300
    disc_layers: int = 2
    disc_hidden: int = 300

    def __post_init__(self):
        if self.frames < self.seed_frames + 1:
            raise ConfigError(f"window of {self.frames} frames cannot hold {self.seed_frames} seed frames")
        if self.attn_hidden % self.heads:
            raise ConfigError(f"{self.heads} heads do not divide attention width {self.attn_hidden}")
        if self.audio_feat * self.joints > self.window_len:
            raise ConfigError(f"joints*audio_feat = {self.audio_feat * self.joints} exceeds window {self.window_len}")
        if self.clip_samples < self.window_len:
            raise ConfigError(f"{self.clip_samples}-sample clip is shorter than one {self.window_len}-sample window")
        if self.graph_steps > self.frames:
            raise ConfigError(f"audio windowing gives {self.graph_steps} graph steps for {self.frames} pose frames")

    @property
    def joints(self) -> int:
        return self.topology().n_joints

    def topology(self) -> SkeletonTopology:
        return skeleton_preset(self.skeleton)

    @property
    def clip_samples(self) -> int:
        return clip_samples(self.frames, self.sample_rate, self.fps)

    @property
    def graph_steps(self) -> int:
        return window_count(self.clip_samples, self.window_len, self.window_stride)

    def mel_config(self) -> MelConfig:
        return MelConfig(self.sample_rate, self.n_fft, self.hop_length, self.n_mels)

    def graph_config(self) -> GraphEncoderConfig:
        return GraphEncoderConfig(self.graph_embed, self.diffusion_order, self.kernel_size,
                                  [dict(l) for l in self.graph_layers], self.bias, self.graph_residual)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        preset = d.pop("preset", None)
        base = PRESETS[preset].to_dict() if preset else {}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        base.update(d)
        try:
            return cls(**base)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


PRESETS = {
    "paper": ModelConfig(),
    # desk-scale: same 34-frame / 16 kHz framing and 16 graph steps, narrow layers
    "toy": ModelConfig(n_mels=16, audio_feat=8, vocab_size=64, text_dim=16, prototypes=12, attn_hidden=16, heads=2,
                       fused_dim=16, style_dim=4, gen_layers=1, gen_hidden=32, disc_layers=1, disc_hidden=16,
                       graph_embed=4),
    # gradient-check dims: J=3, T=8, d_m=4, D=6, V'=5, heads=2; windowing gives 8 graph steps
    "grad-toy": ModelConfig(skeleton="chain3", frames=8, n_mels=4, window_len=1600, window_stride=990, audio_feat=2,
                            vocab_size=12, text_dim=6, prototypes=5, attn_hidden=4, heads=2, fused_dim=5,
                            style_dim=2, gen_layers=1, gen_hidden=4, disc_layers=1, disc_hidden=3, graph_embed=3,
                            diffusion_order=1),
}


def preset(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return dataclasses.replace(PRESETS[name], **overrides)


# ---------------------------------------------------------------------------
# vocabulary and per-clip features
# ---------------------------------------------------------------------------

def build_vocabulary(cfg: ModelConfig, words: Sequence[str] = ()) -> VocabEmbeddings:
    """Embedding table file if configured, else hashed vectors for the corpus words plus filler tokens."""
    if cfg.embeddings:
        vocab = load_embedding_table(cfg.embeddings, cfg.embedding_vocab)
        if vocab.dim != cfg.text_dim:
            raise ConfigError(f"embedding table has D={vocab.dim}, config text_dim={cfg.text_dim}")
        return vocab
    tokens = sorted(set(words))
    if len(tokens) > cfg.vocab_size:
        raise ConfigError(f"{len(tokens)} distinct words exceed vocab_size {cfg.vocab_size}")
    tokens += [f"<unused{i}>" for i in range(cfg.vocab_size - len(tokens))]
    return VocabEmbeddings(hashed_embeddings(tokens, cfg.text_dim, cfg.embed_seed),
                           {t: i for i, t in enumerate(tokens)})


@dataclass
class ClipFeatures:
    id: str
    speaker: str
    mel: np.ndarray              # (frames, n_mels), standardized per clip
    words: np.ndarray | None     # (L, D) or None for the audio-only path
    audio_nodes: np.ndarray      # (T_g, J, F_a)
    poses: np.ndarray | None     # (frames, J, 3) ground truth if known


def standardize(x: np.ndarray) -> np.ndarray:
    sd = x.std()
    return (x - x.mean()) / (sd if sd > 1e-12 else 1.0)


def clip_features(clip: ClipRecord, cfg: ModelConfig, vocab: VocabEmbeddings | None) -> ClipFeatures:
    w = clip.waveform
    n = cfg.clip_samples
    if len(w) != n:
        if abs(len(w) - n) > cfg.hop_length:
            raise ShapeError(f"clip {clip.id}: {len(w)} audio samples, expected {n} (+-1 hop)")
        samples = np.zeros(n)
        samples[:min(n, len(w))] = w.samples[:n]
        w = type(w)(samples, w.sample_rate)
    mel = mel_spectrogram(w, cfg.mel_config()).frames
    if mel.shape[0] != cfg.frames:
        raise ShapeError(f"clip {clip.id}: {mel.shape[0]} mel frames for a {cfg.frames}-frame window")
    nodes = audio_matrix_converter(window_audio(w, cfg.window_len, cfg.window_stride), cfg.joints, cfg.audio_feat)
    tokens = clip.tokens
    words = embed_tokens(vocab, tokens, cfg.text_dim, cfg.embed_seed) if tokens else None
    poses = None if clip.poses is None else np.asarray(clip.poses, dtype=np.float64)
    return ClipFeatures(clip.id, clip.speaker, standardize(mel), words, nodes, poses)


def extend_seed(seed: np.ndarray, frames: int) -> np.ndarray:
    """Seed frames followed by the last seed frame held to ``frames`` (..., frames, J, 3)."""
    seed = np.asarray(seed, dtype=np.float64)
    hold = np.repeat(seed[..., -1:, :, :], frames - seed.shape[-3], axis=-3)
    return np.concatenate([seed, hold], axis=-3)


# ---------------------------------------------------------------------------
# composed model
# ---------------------------------------------------------------------------

class HOPModel(Module):
    """Reprogrammed text-audio stream + audio/action graph stream -> style-conditioned GRU generator."""

    def __init__(self, cfg: ModelConfig, vocab: VocabEmbeddings, speakers: Sequence[str], rng: np.random.Generator):
        self.cfg = cfg
        self.vocab = vocab
        topo = cfg.topology()
        self.rest_pose = topo.rest_directions
        self.prototypes = PrototypeTable(vocab, cfg.prototypes, rng)
        self.reprogram = ReprogramLayer(cfg.n_mels, cfg.text_dim, cfg.attn_hidden, cfg.heads, rng, cfg.bias)
        self.fusion = TextAudioFusion(cfg.text_dim, cfg.fused_dim, rng, cfg.bias)
        channels = cfg.audio_feat + 3
        self.encoder = GraphEncoder(topo, channels, cfg.graph_config(), rng)
        self.style = SpeakerStyle(speakers, cfg.style_dim, rng)
        gcfg = GeneratorConfig(cfg.frames, topo.n_joints, cfg.gen_layers, cfg.gen_hidden, cfg.seed_frames)
        self.generator = Generator(gcfg, cfg.fused_dim, topo.n_joints * channels, cfg.style_dim, self.rest_pose, rng)
        self.discriminator = Discriminator(topo.n_joints, cfg.disc_hidden, cfg.disc_layers, rng)

    def generator_parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.parameters().items() if not k.startswith("discriminator.")}

    def discriminator_parameters(self) -> dict[str, Tensor]:
        return self.discriminator.parameters()

    # -- streams -------------------------------------------------------------
    def reprogrammed(self, mel) -> Tensor:
        """(B, P, d_m) -> (B, P, D) audio tokens in the text embedding space."""
        return self.reprogram(mel, self.prototypes())

    def text_audio(self, mel, words: Sequence) -> Tensor:
        w_hat = self.reprogrammed(mel)
        fused = [self.fusion(w_hat[b], words[b], self.cfg.frames) for b in range(w_hat.shape[0])]
        return T.stack(fused, axis=0)

    def graph_features(self, audio_nodes, seed) -> Tensor:
        action = pose_to_graph(extend_seed(seed, self.cfg.frames), audio_nodes.shape[1])
        return encode_audio_action(audio_nodes, action, self.encoder)

    def generate(self, mel, words, audio_nodes, seed, z) -> Tensor:
        """Batch of per-clip features -> (B, frames, J, 3) poses."""
        ztw = self.text_audio(mel, words)
        zrg = self.graph_features(audio_nodes, seed)
        return self.generator(ztw, zrg, z, seed)


def batch_arrays(feats: Sequence[ClipFeatures], seed: np.ndarray | None = None, seed_frames: int = 4):
    mel = np.stack([f.mel for f in feats])
    nodes = np.stack([f.audio_nodes for f in feats])
    words = [f.words for f in feats]
    if seed is None:
        seed = np.stack([f.poses[:seed_frames] for f in feats])
    return mel, words, nodes, seed
