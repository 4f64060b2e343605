"""Audio-to-text reprogramming: vocabulary prototypes, multi-head cross-attention
of Mel patches against them, and fusion with the transcript's token embeddings."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .audio import interpolation_matrix
from .nn import Linear, Module, param
from .tensor import ShapeError, Tensor


class EmbeddingFileError(ValueError):
    pass


class EmbeddingHeaderError(EmbeddingFileError):
    """Header missing/malformed or row count disagrees with it."""


class EmbeddingValueError(EmbeddingFileError):
    """A row holds a non-numeric entry or the wrong number of columns."""


@dataclass
class VocabEmbeddings:
    table: np.ndarray                         # (V, D), frozen
    index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float64)
        if self.table.ndim != 2 or min(self.table.shape) < 1:
            raise ShapeError(f"embedding table must be V x D with V, D >= 1, got {self.table.shape}")
        bad = [t for t, i in self.index.items() if not 0 <= i < self.table.shape[0]]
        if bad:
            raise EmbeddingFileError(f"tokens map outside the table: {bad[:5]}")

    @property
    def vocab_size(self) -> int:
        return self.table.shape[0]

    @property
    def dim(self) -> int:
        return self.table.shape[1]


def load_embedding_table(path, vocab_path=None) -> VocabEmbeddings:
    """Parse "V D" then V rows of D decimals; ``vocab_path`` (one token per line) names the rows."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines()]
    if not lines:
        raise EmbeddingHeaderError(f"{path}: empty file, expected header 'V D'")
    head = lines[0].split()
    if len(head) != 2 or not all(h.isdigit() for h in head):
        raise EmbeddingHeaderError(f"{path}:1: header must be two positive integers 'V D', got {lines[0]!r}")
    v, d = int(head[0]), int(head[1])
    rows = [ln for ln in lines[1:] if ln.strip()]
    if len(rows) != v:
        raise EmbeddingHeaderError(f"{path}:{len(lines) + 1}: header declares V={v} rows but file has {len(rows)}")
    table = np.empty((v, d))
    for i, ln in enumerate(rows):
        parts = ln.split()
        if len(parts) != d:
            raise EmbeddingValueError(f"{path}:{i + 2}: expected {d} values, found {len(parts)}")
        try:
            table[i] = [float(p) for p in parts]
        except ValueError:
            raise EmbeddingValueError(f"{path}:{i + 2}: non-numeric entry in row") from None
    index = {}
    if vocab_path is not None:
        tokens = Path(vocab_path).read_text(encoding="utf-8").split()
        index = {tok: i for i, tok in enumerate(tokens[:v])}
    return VocabEmbeddings(table, index)


def save_embedding_table(path, emb: VocabEmbeddings | np.ndarray) -> None:
    table = emb.table if isinstance(emb, VocabEmbeddings) else np.asarray(emb, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{table.shape[0]} {table.shape[1]}\n")
        for row in table:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def hashed_embeddings(tokens: Sequence[str], dim: int, seed: int = 0) -> np.ndarray:
    """Unit-norm vectors drawn from a generator seeded by sha256(seed, token)."""
    if dim < 1:
        raise ValueError(f"embedding dimension must be >= 1, got {dim}")
    out = np.empty((len(tokens), dim))
    for i, tok in enumerate(tokens):
        digest = hashlib.sha256(f"{seed}\x00{tok}".encode("utf-8")).digest()
        g = np.random.default_rng(np.frombuffer(digest, dtype="<u4"))
        v = g.standard_normal(dim)
        out[i] = v / np.linalg.norm(v)
    return out


def embed_tokens(vocab: VocabEmbeddings | None, tokens: Sequence[str], dim: int, seed: int = 0) -> np.ndarray:
    """Table rows for known tokens, hashed vectors for the rest."""
    out = hashed_embeddings(tokens, dim, seed)
    if vocab is not None:
        for i, tok in enumerate(tokens):
            j = vocab.index.get(tok)
            if j is not None:
                out[i] = vocab.table[j]
    return out


def map_prototypes(table, w_map) -> Tensor:
    """E' = W_map @ E : (V', V) @ (V, D) -> (V', D)."""
    table = table.table if isinstance(table, VocabEmbeddings) else table
    table, w_map = T.as_tensor(table), T.as_tensor(w_map)
    if w_map.ndim != 2 or w_map.shape[1] != table.shape[0]:
        raise ShapeError(f"mapping {w_map.shape} does not match vocabulary table {table.shape}")
    return T.matmul(w_map, table)


class PrototypeTable(Module):
    """Trainable linear compression of a frozen vocabulary table into V' prototypes."""

    def __init__(self, vocab: VocabEmbeddings, n_prototypes: int, rng: np.random.Generator):
        if n_prototypes >= vocab.vocab_size:
            raise ValueError(f"prototype count {n_prototypes} must be smaller than vocabulary {vocab.vocab_size}")
        self.vocab = Tensor(vocab.table)
        bound = 1.0 / np.sqrt(vocab.vocab_size)
        self.w_map = param(rng.uniform(-bound, bound, size=(n_prototypes, vocab.vocab_size)))

    def __call__(self) -> Tensor:
        return map_prototypes(self.vocab, self.w_map)


class ReprogramLayer(Module):
    """Cross-attention of Mel patches (queries) against prototypes (keys/values).

    Heads split d_hidden evenly; after attention the heads are concatenated,
    passed through ReLU and projected to the text embedding width.
    """

    def __init__(self, d_mel: int, d_text: int, d_hidden: int, n_heads: int, rng: np.random.Generator,
                 bias: bool = True):
        if n_heads < 1 or d_hidden % n_heads:
            raise ValueError(f"{n_heads} heads do not divide hidden width {d_hidden}")
        self.query = Linear(d_mel, d_hidden, rng, bias)
        self.key = Linear(d_text, d_hidden, rng, bias)
        self.value = Linear(d_text, d_hidden, rng, bias)
        self.out = Linear(d_hidden, d_text, rng, bias)
        self.n_heads = n_heads
        self.head_dim = d_hidden // n_heads

    def attention(self, mel, prototypes) -> tuple[Tensor, Tensor]:
        """Returns (attention (B, N, P, V'), values (N, V', d))."""
        mel = T.as_tensor(mel)
        prototypes = T.as_tensor(prototypes)
        if mel.shape[-1] != self.query.n_in:
            raise ShapeError(f"mel width {mel.shape[-1]} != query input {self.query.n_in}")
        if prototypes.shape[-1] != self.key.n_in:
            raise ShapeError(f"prototype width {prototypes.shape[-1]} != key input {self.key.n_in}")
        bsz, n_patch = mel.shape[0], mel.shape[1]
        n_proto = prototypes.shape[0]
        h, d = self.n_heads, self.head_dim
        q = T.transpose(T.reshape(self.query(mel), (bsz, n_patch, h, d)), (0, 2, 1, 3))
        k = T.transpose(T.reshape(self.key(prototypes), (n_proto, h, d)), (1, 0, 2))
        v = T.transpose(T.reshape(self.value(prototypes), (n_proto, h, d)), (1, 0, 2))
        scores = T.matmul(q, T.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(d))
        return T.softmax(scores, axis=-1), v

    def __call__(self, mel, prototypes) -> Tensor:
        mel = T.as_tensor(mel)
        single = mel.ndim == 2
        if single:
            mel = T.reshape(mel, (1,) + mel.shape)
        attn, v = self.attention(mel, prototypes)
        bsz, n_patch = mel.shape[0], mel.shape[1]
        heads = T.matmul(attn, v)                                   # (B, N, P, d)
        merged = T.reshape(T.transpose(heads, (0, 2, 1, 3)), (bsz, n_patch, self.n_heads * self.head_dim))
        out = self.out(T.relu(merged))
        return T.reshape(out, out.shape[1:]) if single else out


def reprogram(mel, prototypes, layer: ReprogramLayer) -> Tensor:
    return layer(mel, prototypes)


class TextAudioFusion(Module):
    """Concatenate reprogrammed audio tokens with word embeddings along the
    sequence, project each position, and resample to the pose window length."""

    def __init__(self, d_text: int, d_fused: int, rng: np.random.Generator, bias: bool = True):
        self.proj = Linear(d_text, d_fused, rng, bias)

    def __call__(self, w_hat, words, target_len: int) -> Tensor:
        return fuse_text_audio(w_hat, words, target_len, self.proj)


def fuse_text_audio(w_hat, words, target_len: int, proj=None) -> Tensor:
    """(P, D) audio tokens + (L, D) word embeddings -> (target_len, D_f).

    ``words`` may be ``None`` (audio-only fallback).  ``proj`` defaults to identity.
    """
    if target_len <= 0:
        raise ValueError(f"target length must be positive, got {target_len}")
    parts = [T.as_tensor(w_hat)]
    if words is not None and len(words) > 0:
        words = T.as_tensor(words)
        if words.shape[-1] != parts[0].shape[-1]:
            raise ShapeError(f"word embeddings {words.shape} and audio tokens {parts[0].shape} differ in width")
        parts.append(words)
    seq = T.concat(parts, axis=0) if len(parts) > 1 else parts[0]
    if proj is not None:
        seq = proj(seq)
    return T.matmul(Tensor(interpolation_matrix(seq.shape[0], target_len)), seq)
