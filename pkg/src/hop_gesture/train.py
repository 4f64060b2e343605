"""Alternating adversarial training, checkpoints, resume and inference."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .checkpoint import config_hash, load_tensors, save_tensors
from .data import ClipRecord, corpus_hash
from .losses import LossWeights, gan_losses, huber_loss, kld_loss, style_diversity_loss, total_loss
from .model import ClipFeatures, ConfigError, HOPModel, ModelConfig, batch_arrays, build_vocabulary, clip_features
from .optim import Adam
from .reprogram import VocabEmbeddings

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ["step", "epoch", "huber", "style", "kld", "gan_g", "gan_d", "total"]
SEED_MODES = ("ground_truth", "previous", "rest")


class TrainingDivergedError(FloatingPointError):
    def __init__(self, op: str, step: int, message: str):
        super().__init__(f"training diverged at step {step}: {message}")
        self.op, self.step = op, step


@dataclass
class TrainingConfig:
    epochs: int = 75
    batch_size: int = 32
    lr: float = 1e-4
    betas: tuple = (0.5, 0.999)
    weights: LossWeights = field(default_factory=LossWeights)
    style_margin: float = 1.0
    huber_delta: float = 1.0
    seed: int = 0
    window_frames: int = 34
    window_stride: int = 10
    inference_seed: str = "previous"      # where generation takes its 4 seed frames from

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        elif isinstance(self.weights, (list, tuple)):
            self.weights = LossWeights(*self.weights)
        self.betas = tuple(self.betas)
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.inference_seed not in SEED_MODES:
            raise ConfigError(f"inference_seed must be one of {SEED_MODES}, got {self.inference_seed!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def run_hash(model_cfg: ModelConfig, train_cfg: TrainingConfig) -> str:
    return config_hash({"model": model_cfg.to_dict(), "training": train_cfg.to_dict()})


def save_checkpoint(directory, model: HOPModel, train_cfg: TrainingConfig, epoch: int, step: int,
                    history: np.ndarray, opt_g: Adam | None = None, opt_d: Adam | None = None,
                    extra_meta: dict | None = None) -> Path:
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    tensors["vocab.table"] = model.vocab.table
    tensors["history"] = history if len(history) else np.zeros((0, len(HISTORY_COLUMNS)))
    if opt_g is not None:
        tensors.update(opt_g.state_tensors("opt_g"))
    if opt_d is not None:
        tensors.update(opt_d.state_tensors("opt_d"))
    tokens = sorted(model.vocab.index, key=model.vocab.index.get)
    meta = {"kind": "hop-model", "model": model.cfg.to_dict(), "training": train_cfg.to_dict(),
            "speakers": model.style.speakers, "tokens": tokens, "epoch": epoch, "step": step,
            "config_hash": run_hash(model.cfg, train_cfg)}
    meta.update(extra_meta or {})
    return save_tensors(directory, tensors, meta)


def load_checkpoint(directory) -> tuple[HOPModel, dict, dict]:
    """Returns (model, meta, raw tensors)."""
    tensors, meta = load_tensors(directory)
    if meta.get("kind") != "hop-model":
        raise ConfigError(f"{directory} is not a model checkpoint")
    cfg = ModelConfig.from_dict(meta["model"])
    vocab = VocabEmbeddings(tensors["vocab.table"], {t: i for i, t in enumerate(meta["tokens"])})
    model = HOPModel(cfg, vocab, meta["speakers"], np.random.default_rng(0))
    model.load_state_dict(tensors, prefix="model.")
    return model, meta, tensors


def history_csv(history: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for row in history:
        w.writerow([int(row[0]), int(row[1])] + [repr(float(v)) for v in row[2:]])
    return buf.getvalue()


def epoch_means(history: np.ndarray) -> list[dict]:
    out = []
    for e in np.unique(history[:, 1]).astype(int) if len(history) else []:
        rows = history[history[:, 1] == e]
        out.append({"epoch": int(e), **{c: float(rows[:, i].mean()) for i, c in enumerate(HISTORY_COLUMNS) if i > 1}})
    return out


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: HOPModel
    history: np.ndarray
    checkpoints: list[Path]
    summary: dict


def prepare_features(clips: Sequence[ClipRecord], cfg: ModelConfig, vocab: VocabEmbeddings) -> list[ClipFeatures]:
    return [clip_features(c, cfg, vocab) for c in clips]


def _other_speakers(model: HOPModel, speakers: Sequence[str], rng: np.random.Generator) -> list[str]:
    names = model.style.speakers
    if len(names) == 1:
        return list(speakers)
    out = []
    for s in speakers:
        k = int(rng.integers(1, len(names)))
        out.append(names[(model.style.index[s] + k) % len(names)])
    return out


def train_step(model: HOPModel, feats: Sequence[ClipFeatures], cfg: TrainingConfig, opt_g: Adam, opt_d: Adam,
               rng: np.random.Generator) -> dict:
    """One discriminator update followed by one generator update."""
    mcfg = model.cfg
    mel, words, nodes, seed = batch_arrays(feats, seed_frames=mcfg.seed_frames)
    real = np.stack([f.poses for f in feats])
    speakers = [f.speaker for f in feats]
    bsz, sdim = len(feats), mcfg.style_dim
    noise_a = rng.standard_normal((bsz, sdim))
    noise_b = rng.standard_normal((bsz, sdim))
    others = _other_speakers(model, speakers, rng)

    # discriminator: real vs a detached generation
    with T.no_grad():
        fake = model.generate(mel, words, nodes, seed, model.style.sample(speakers, noise_a)).data
    model.zero_grad()
    loss_d, _ = gan_losses(model.discriminator(real), model.discriminator(fake))
    loss_d.backward()
    opt_d.step()

    # generator: two style draws over the same content, batched
    model.zero_grad()
    z_a = model.style.sample(speakers, noise_a)
    z_b = model.style.sample(others, noise_b)
    out = model.generate(np.concatenate([mel, mel]), list(words) + list(words), np.concatenate([nodes, nodes]),
                         np.concatenate([seed, seed]), T.concat([z_a, z_b], axis=0))
    g_a, g_b = out[:bsz], out[bsz:]
    _, loss_g = gan_losses(T.ones((bsz,)) * 0.5, model.discriminator(g_a))
    parts = {"huber": huber_loss(real, g_a, cfg.huber_delta),
             "style": style_diversity_loss(g_a, g_b, cfg.style_margin, z_a, z_b, cfg.huber_delta),
             "kld": kld_loss(model.style.mu, model.style.logvar),
             "gan": loss_g}
    total = total_loss(parts, cfg.weights)
    total.backward()
    opt_g.step()
    return {"huber": parts["huber"].item(), "style": parts["style"].item(), "kld": parts["kld"].item(),
            "gan_g": loss_g.item(), "gan_d": loss_d.item(), "total": total.item()}


def train(model_cfg: ModelConfig, train_cfg: TrainingConfig, clips: Sequence[ClipRecord], out_dir,
          resume_from=None, stop_after: int | None = None, quiet: bool = True) -> TrainResult:
    """Train on ``clips``; checkpoints land in ``out_dir/checkpoints/epoch_NNNN`` (epoch_0000 = init).

    Randomness is keyed on (seed, stream, epoch/step) so a resumed run
    replays exactly the draws an uninterrupted run would make.
    ``stop_after`` ends the run early after that many epochs (for resume tests).
    """
    if not clips:
        raise ConfigError("training corpus is empty")
    out_dir = Path(out_dir)
    ckpt_root = out_dir / "checkpoints"
    c_hash = corpus_hash(clips)
    if resume_from is not None:
        model, meta, tensors = load_checkpoint(resume_from)
        if meta["config_hash"] != run_hash(model_cfg, train_cfg):
            raise ConfigError(f"checkpoint {resume_from} was written under a different config")
        start_epoch, step = int(meta["epoch"]), int(meta["step"])
        history = tensors["history"].reshape(-1, len(HISTORY_COLUMNS))
    else:
        vocab = build_vocabulary(model_cfg, [w for c in clips for w in c.tokens])
        speakers = sorted({c.speaker for c in clips})
        model = HOPModel(model_cfg, vocab, speakers, np.random.default_rng([train_cfg.seed, 0]))
        start_epoch, step, history, tensors = 0, 0, np.zeros((0, len(HISTORY_COLUMNS))), None
    opt_g = Adam(model.generator_parameters(), train_cfg.lr, train_cfg.betas)
    opt_d = Adam(model.discriminator_parameters(), train_cfg.lr, train_cfg.betas)
    if tensors is not None:
        opt_g.load_state_tensors(tensors, "opt_g")
        opt_d.load_state_tensors(tensors, "opt_d")
    extra = {"corpus_hash": c_hash}
    checkpoints = []
    if resume_from is None:
        checkpoints.append(save_checkpoint(ckpt_root / "epoch_0000", model, train_cfg, 0, 0, history,
                                           opt_g, opt_d, extra))
    feats = prepare_features(clips, model_cfg, model.vocab)
    unknown = {f.speaker for f in feats} - set(model.style.speakers)
    if unknown:
        raise ConfigError(f"clips reference speakers missing from the checkpoint: {sorted(unknown)}")
    rows = [history]
    last = train_cfg.epochs if stop_after is None else min(train_cfg.epochs, start_epoch + stop_after)
    for epoch in range(start_epoch + 1, last + 1):
        order = np.random.default_rng([train_cfg.seed, 1, epoch]).permutation(len(feats))
        for b in range(0, len(order), train_cfg.batch_size):
            step += 1
            batch = [feats[i] for i in order[b:b + train_cfg.batch_size]]
            try:
                with T.checked():
                    parts = train_step(model, batch, train_cfg, opt_g, opt_d,
                                       np.random.default_rng([train_cfg.seed, 2, step]))
            except T.NonFiniteError as exc:
                raise TrainingDivergedError(exc.op, step, str(exc)) from None
            rows.append(np.array([[step, epoch] + [parts[c] for c in HISTORY_COLUMNS[2:]]]))
        history = np.concatenate(rows)
        rows = [history]
        checkpoints.append(save_checkpoint(ckpt_root / f"epoch_{epoch:04d}", model, train_cfg, epoch, step,
                                           history, opt_g, opt_d, extra))
        (out_dir / "loss_history.csv").write_text(history_csv(history))
        if not quiet:
            m = epoch_means(history[history[:, 1] == epoch])[0]
            log.info("epoch %d  huber %.5f  style %.4f  kld %.4f  G %.4f  D %.4f", epoch, m["huber"],
                     m["style"], m["kld"], m["gan_g"], m["gan_d"])
    means = epoch_means(history)
    summary = {"config_hash": run_hash(model_cfg, train_cfg), "corpus_hash": c_hash, "epochs": last,
               "steps": step, "clips": len(clips), "final_checkpoint": str(checkpoints[-1]) if checkpoints else None,
               "epoch_means": means}
    (out_dir / "train_summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return TrainResult(model, history, checkpoints, summary)


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

def generate_clips(model: HOPModel, feats: Sequence[ClipFeatures], seed: int = 0, mode: str = "previous",
                   style_noise: bool = True) -> list[np.ndarray]:
    """Generate one pose window per clip, in order.

    mode: 'ground_truth' seeds from each clip's own first frames; 'previous'
    from the last frames generated for the same speaker (rest pose at first);
    'rest' always from the rest pose.
    """
    if mode not in SEED_MODES:
        raise ConfigError(f"unknown seed mode {mode!r}; choose from {SEED_MODES}")
    cfg = model.cfg
    rest = np.broadcast_to(model.rest_pose, (cfg.seed_frames,) + model.rest_pose.shape)
    last: dict[str, np.ndarray] = {}
    out = []
    with T.no_grad():
        for i, f in enumerate(feats):
            if mode == "ground_truth" and f.poses is not None:
                seed_poses = f.poses[:cfg.seed_frames]
            elif mode == "previous":
                seed_poses = last.get(f.speaker, rest)
            else:
                seed_poses = rest
            noise = np.random.default_rng([seed, 3, i]).standard_normal((1, cfg.style_dim))
            if not style_noise:
                noise[:] = 0.0
            z = model.style.sample([f.speaker], noise)
            mel, words, nodes, s = batch_arrays([f], seed=np.asarray(seed_poses)[None])
            poses = model.generate(mel, words, nodes, s, z).data[0]
            last[f.speaker] = poses[-cfg.seed_frames:]
            out.append(poses)
    return out


def alignment_score(model: HOPModel, feats: Sequence[ClipFeatures]) -> float:
    """Mean cosine similarity between each clip's reprogrammed audio tokens and its transcript embeddings."""
    sims = []
    with T.no_grad():
        for f in feats:
            if f.words is None:
                continue
            w_hat = model.reprogrammed(f.mel[None]).data[0]
            a = w_hat / np.maximum(np.linalg.norm(w_hat, axis=1, keepdims=True), 1e-12)
            b = f.words / np.maximum(np.linalg.norm(f.words, axis=1, keepdims=True), 1e-12)
            sims.append(float((a @ b.T).mean()))
    if not sims:
        raise ConfigError("alignment needs clips with transcripts")
    return float(np.mean(sims))
