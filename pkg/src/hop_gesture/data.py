"""Pose and manifest formats, ingest windowing, and the deterministic synthetic corpus.

Poses are (T, J, 3) arrays of unit direction vectors.  A manifest is JSON
lines, one record per clip: {id, speaker, wav_path, transcript, pose_path},
paths relative to the manifest's directory.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .audio import MissingAudioError, Waveform, load_waveform, quantize_pcm16, save_waveform
from .graph import SkeletonTopology, skeleton_preset


class DatasetError(ValueError):
    pass


# ---------------------------------------------------------------------------
# pose files
# ---------------------------------------------------------------------------

def poses_to_json(poses: np.ndarray, fps: float, joints: Sequence[str]) -> dict:
    poses = np.asarray(poses, dtype=np.float64)
    if poses.ndim != 3 or poses.shape[2] != 3 or poses.shape[1] != len(joints):
        raise DatasetError(f"poses must be (T, {len(joints)}, 3), got {poses.shape}")
    return {"fps": fps, "joints": list(joints), "frames": poses.tolist()}


def save_pose_json(path, poses: np.ndarray, fps: float, joints: Sequence[str]) -> None:
    Path(path).write_text(json.dumps(poses_to_json(poses, fps, joints)) + "\n")


def load_pose_json(path) -> tuple[np.ndarray, float, list[str]]:
    """Returns (frames (T, J, 3), fps, joint names); floats round-trip exactly."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"pose file not found: {path}")
    d = json.loads(path.read_text())
    try:
        frames = np.array(d["frames"], dtype=np.float64)
        fps, joints = d["fps"], list(d["joints"])
    except KeyError as exc:
        raise DatasetError(f"{path}: pose JSON missing key {exc}") from None
    if frames.ndim != 3 or frames.shape[1:] != (len(joints), 3):
        raise DatasetError(f"{path}: frames have shape {frames.shape}, expected (T, {len(joints)}, 3)")
    return frames, fps, joints


def save_pose_csv(path, poses: np.ndarray, joints: Sequence[str]) -> None:
    poses = np.asarray(poses, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"{j}_{ax}" for j in joints for ax in "xyz"])
        for frame in poses.reshape(poses.shape[0], -1):
            w.writerow([repr(float(v)) for v in frame])


def load_pose_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if len(header) % 3:
        raise DatasetError(f"{path}: {len(header)} columns is not a multiple of 3")
    return np.array(body, dtype=np.float64).reshape(len(body), len(header) // 3, 3)


# ---------------------------------------------------------------------------
# clips and manifests
# ---------------------------------------------------------------------------

@dataclass
class ClipRecord:
    id: str
    speaker: str
    transcript: str
    waveform: Waveform
    poses: np.ndarray            # (T, J, 3)
    fps: float = 15.0

    @property
    def tokens(self) -> list[str]:
        return self.transcript.split()

    @property
    def n_frames(self) -> int:
        return self.poses.shape[0]


def clip_samples(frames: int, sample_rate: int, fps: float) -> int:
    """Audio samples spanning ``frames`` pose frames (36267 for 34 frames at 16 kHz / 15 fps)."""
    return int(round(frames * sample_rate / fps))


def window_clip(clip: ClipRecord, frames: int = 34, stride: int = 10) -> list[ClipRecord]:
    """Cut a long recording into ``frames``-long pose windows with matching audio segments."""
    if clip.n_frames < frames:
        raise DatasetError(f"clip {clip.id}: {clip.n_frames} frames is shorter than a {frames}-frame window")
    sr = clip.waveform.sample_rate
    n_audio = clip_samples(frames, sr, clip.fps)
    hop = sr / clip.fps
    out = []
    for k, start in enumerate(range(0, clip.n_frames - frames + 1, stride)):
        a0 = int(round(start * hop))
        seg = clip.waveform.samples[a0:a0 + n_audio]
        short = n_audio - len(seg)
        if short > hop:
            raise DatasetError(f"clip {clip.id}: audio ends {short} samples before pose window {k}")
        if short > 0:
            seg = np.concatenate([seg, np.zeros(short)])
        cid = clip.id if clip.n_frames == frames else f"{clip.id}_w{k:03d}"
        out.append(ClipRecord(cid, clip.speaker, clip.transcript, Waveform(seg, sr),
                              clip.poses[start:start + frames].copy(), clip.fps))
    return out


def read_manifest(path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"manifest not found: {path}")
    records = []
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{n}: invalid JSON ({exc.msg})") from None
        missing = [k for k in ("id", "speaker", "wav_path", "pose_path") if k not in rec]
        if missing:
            raise DatasetError(f"{path}:{n}: record missing {missing}")
        records.append(rec)
    if not records:
        raise DatasetError(f"{path}: manifest has no records")
    return records


def write_manifest(path, records: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def load_clips(manifest_path, frames: int = 34, stride: int = 10, sample_rate: int | None = None,
               check_only: bool = False) -> list[ClipRecord]:
    """Load every manifest record, windowing longer recordings at ingest."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    records = read_manifest(manifest_path)
    for r in records:
        for key in ("wav_path", "pose_path"):
            if not (root / r[key]).is_file():
                raise DatasetError(f"clip {r['id']}: {key} not found: {root / r[key]}")
    if check_only:
        return []
    clips = []
    for r in records:
        try:
            wav = load_waveform(root / r["wav_path"], sample_rate)
        except MissingAudioError:
            raise DatasetError(f"clip {r['id']}: wav_path not found") from None
        poses, fps, _ = load_pose_json(root / r["pose_path"])
        clip = ClipRecord(str(r["id"]), str(r["speaker"]), r.get("transcript") or "", wav, poses, float(fps))
        clips.extend(window_clip(clip, frames, stride))
    return clips


def corpus_hash(clips: Sequence[ClipRecord]) -> str:
    h = hashlib.sha256()
    for c in clips:
        h.update(json.dumps([c.id, c.speaker, c.transcript, c.fps, c.waveform.sample_rate]).encode())
        h.update(np.ascontiguousarray(c.waveform.samples, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(c.poses, dtype="<f8").tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

WORDS = ["wave", "point", "lift", "open", "sweep", "push", "circle", "drop",
         "raise", "clap", "shrug", "reach", "tap", "swing", "fold", "spread"]


@dataclass
class SyntheticCorpusSpec:
    seed: int = 7
    clips: int = 64
    words: int = 8                 # vocabulary of K gesture words
    beat_period: int = 12          # frames per full swing; beats fall every half period
    noise: float = 0.01            # white-noise level added to the audio
    click_shift: float = 0.0       # seconds added to every click time (0 keeps clicks on the beats)
    speakers: int = 4
    words_per_clip: tuple = (2, 4)
    frames: int = 34
    fps: float = 15.0
    sample_rate: int = 16000
    skeleton: str = "ted"

    def __post_init__(self):
        if self.clips < 1:
            raise ValueError(f"clip count must be >= 1, got {self.clips}")
        if not 1 <= self.words <= len(WORDS):
            raise ValueError(f"vocabulary size must be in [1, {len(WORDS)}], got {self.words}")
        if self.beat_period < 2 or self.beat_period % 2:
            raise ValueError(f"beat period must be an even number of frames >= 2, got {self.beat_period}")
        self.words_per_clip = tuple(self.words_per_clip)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["words_per_clip"] = list(self.words_per_clip)
        return d


@dataclass
class GestureWord:
    token: str
    amplitude: np.ndarray         # (J,) swing amplitude in radians
    tone_hz: float


@dataclass
class SyntheticCorpus:
    spec: SyntheticCorpusSpec
    skeleton: SkeletonTopology
    vocabulary: list[GestureWord]
    axes: np.ndarray                                               # (J, 3) swing axes
    clips: list[ClipRecord] = field(default_factory=list)
    beats: dict[str, np.ndarray] = field(default_factory=dict)    # clip id -> beat times (s)

    @property
    def hash(self) -> str:
        return corpus_hash(self.clips)


def _orthogonal_axes(rest: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(rest.shape)
    v -= (v * rest).sum(axis=1, keepdims=True) * rest
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def gesture_vocabulary(spec: SyntheticCorpusSpec, skeleton: SkeletonTopology) -> list[GestureWord]:
    rng = np.random.default_rng([spec.seed, 0])
    vocab = []
    for k in range(spec.words):
        amp = rng.uniform(0.1, 0.8, size=skeleton.n_joints)
        amp[0] *= 0.3                               # the spine barely moves
        tone = 300.0 * 8.0 ** (k / max(1, spec.words - 1))
        vocab.append(GestureWord(WORDS[k], amp, tone))
    return vocab


def word_weights(n_frames: int, bounds: Sequence[float], ramp: float = 0.5) -> np.ndarray:
    """(len(bounds)+1, n_frames) smooth partition of unity switching at ``bounds`` (frames)."""
    t = np.arange(n_frames, dtype=np.float64)
    edges = [1.0 / (1.0 + np.exp(-(t - b) / ramp)) for b in bounds]
    n = len(bounds) + 1
    w = np.empty((n, n_frames))
    for i in range(n):
        lo = edges[i - 1] if i > 0 else 1.0
        hi = edges[i] if i < n - 1 else 0.0
        w[i] = lo - hi
    return w


def swing_poses(rest: np.ndarray, axes: np.ndarray, amplitude: np.ndarray, phase: np.ndarray) -> np.ndarray:
    """Rotate each rest direction about its (orthogonal) axis by amplitude(t) * sin(phase(t)).

    amplitude: (T, J); phase: (T,).  Output vectors are unit length by construction.
    """
    theta = (amplitude * np.sin(phase)[:, None])[..., None]
    return rest[None] * np.cos(theta) + np.cross(axes, rest)[None] * np.sin(theta)


def _word_bounds(crossings: np.ndarray, n_frames: int, n_words: int) -> list[float]:
    """Pick up to n_words-1 swing zero-crossings near an even split of the clip."""
    picks = []
    for i in range(1, n_words):
        if len(crossings) == 0:
            break
        c = float(crossings[np.argmin(np.abs(crossings - i * n_frames / n_words))])
        if c not in picks:
            picks.append(c)
    return sorted(picks)


def click_track(n_samples: int, sample_rate: int, times: np.ndarray, rng: np.random.Generator,
                amplitude: float = 0.6, length_s: float = 0.04, decay_s: float = 0.01) -> np.ndarray:
    """Decaying noise bursts starting at ``times`` (s)."""
    out = np.zeros(n_samples)
    n = int(length_s * sample_rate)
    env = np.exp(-np.arange(n) / (decay_s * sample_rate))
    for t in times:
        i = int(round(t * sample_rate))
        if 0 <= i < n_samples:
            m = min(n, n_samples - i)
            out[i:i + m] += amplitude * env[:m] * rng.uniform(-1.0, 1.0, size=m)
    return out


def synthesize_corpus(spec: SyntheticCorpusSpec) -> SyntheticCorpus:
    """Deterministic clips whose motion beats coincide with audio clicks.

    All joints swing about fixed axes in a shared phase; each word sets the
    per-joint amplitudes and a tone.  Beats (turning points, where angular
    speed vanishes) land on whole frames every half period, and words change
    only at swing zero-crossings so the crossfades never blur a beat.
    """
    skeleton = skeleton_preset(spec.skeleton)
    vocab = gesture_vocabulary(spec, skeleton)
    axes = _orthogonal_axes(skeleton.rest_directions, np.random.default_rng([spec.seed, 2]))
    corpus = SyntheticCorpus(spec, skeleton, vocab, axes)
    speakers = [f"spk{i}" for i in range(spec.speakers)]
    speaker_scale = np.linspace(0.75, 1.25, spec.speakers) if spec.speakers > 1 else np.ones(1)
    n_audio = clip_samples(spec.frames, spec.sample_rate, spec.fps)
    half = spec.beat_period // 2
    t_frames = np.arange(spec.frames, dtype=np.float64)
    t_audio = np.arange(n_audio) / spec.sample_rate
    for c in range(spec.clips):
        rng = np.random.default_rng([spec.seed, 1, c])
        n_words = int(rng.integers(spec.words_per_clip[0], spec.words_per_clip[1] + 1))
        s = int(rng.integers(0, spec.speakers))
        offset = int(rng.integers(0, half))            # first beat frame
        crossings = offset - half / 2 + half * np.arange(spec.frames // half + 2)
        crossings = crossings[(crossings > 1) & (crossings < spec.frames - 2)]
        bounds = _word_bounds(crossings, spec.frames, n_words)
        ids = rng.integers(0, spec.words, size=len(bounds) + 1)
        words = [vocab[i] for i in ids]
        weights = word_weights(spec.frames, bounds)
        amplitude = speaker_scale[s] * (weights.T @ np.stack([w.amplitude for w in words]))
        phase = np.pi / 2 + np.pi * (t_frames - offset) / half
        poses = swing_poses(skeleton.rest_directions, axes, amplitude, phase)
        beat_times = np.arange(offset, spec.frames, half) / spec.fps

        audio = click_track(n_audio, spec.sample_rate, beat_times + spec.click_shift, rng)
        w_audio = np.stack([np.interp(t_audio * spec.fps, t_frames, w) for w in weights])
        for w, word in zip(w_audio, words):
            audio += 0.15 * w * np.sin(2 * np.pi * word.tone_hz * t_audio)
        audio += spec.noise * rng.standard_normal(n_audio)
        audio = quantize_pcm16(audio)

        cid = f"clip{c:04d}"
        corpus.clips.append(ClipRecord(cid, speakers[s], " ".join(w.token for w in words),
                                       Waveform(audio, spec.sample_rate), poses, spec.fps))
        corpus.beats[cid] = beat_times
    return corpus


def write_corpus(corpus: SyntheticCorpus, out_dir) -> Path:
    """Write wav/, poses/, transcripts/ and manifest.jsonl; returns the manifest path."""
    out = Path(out_dir)
    for sub in ("wav", "poses", "transcripts"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    records = []
    for c in corpus.clips:
        save_waveform(out / "wav" / f"{c.id}.wav", c.waveform)
        save_pose_json(out / "poses" / f"{c.id}.json", c.poses, c.fps, corpus.skeleton.names)
        (out / "transcripts" / f"{c.id}.txt").write_text(c.transcript + "\n")
        records.append({"id": c.id, "speaker": c.speaker, "wav_path": f"wav/{c.id}.wav",
                        "transcript": c.transcript, "pose_path": f"poses/{c.id}.json"})
    manifest = out / "manifest.jsonl"
    write_manifest(manifest, records)
    info = {"corpus_hash": corpus.hash, "spec": corpus.spec.to_dict(), "clips": len(corpus.clips),
            "skeleton": corpus.skeleton.to_dict(), "vocabulary": [w.token for w in corpus.vocabulary],
            "beats": {k: v.tolist() for k, v in corpus.beats.items()}}
    (out / "corpus.json").write_text(json.dumps(info, indent=1, sort_keys=True) + "\n")
    return manifest
