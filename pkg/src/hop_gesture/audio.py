"""Waveform IO, log-Mel spectrograms and the windowed audio-to-graph converter."""
from __future__ import annotations

import functools
import wave
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np


class AudioError(ValueError):
    pass


class MissingAudioError(AudioError, FileNotFoundError):
    pass


class UnsupportedAudioError(AudioError):
    pass


class EmptyAudioError(AudioError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioError(f"waveform must be mono (1-D), got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise AudioError(f"sample rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def load_waveform(path, target_rate: int | None = None) -> Waveform:
    """Read a RIFF/PCM16 file, averaging stereo channels and scaling to [-1, 1]."""
    path = Path(path)
    if not path.is_file():
        raise MissingAudioError(f"audio file not found: {path}")
    try:
        with wave.open(str(path), "rb") as fh:
            width, channels, rate = fh.getsampwidth(), fh.getnchannels(), fh.getframerate()
            if fh.getcomptype() != "NONE" or width != 2:
                raise UnsupportedAudioError(f"{path}: only PCM 16-bit WAV is supported "
                                            f"(sample width {width} bytes, compression {fh.getcomptype()})")
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise UnsupportedAudioError(f"{path}: not a PCM WAV file ({exc})") from None
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    if pcm.size == 0:
        raise EmptyAudioError(f"{path}: audio has zero samples")
    samples = pcm.reshape(-1, channels).mean(axis=1) / 32767.0
    w = Waveform(np.clip(samples, -1.0, 1.0), rate)
    if target_rate is not None and target_rate != rate:
        w = resample_waveform(w, target_rate)
    return w


def save_waveform(path, w: Waveform) -> None:
    pcm = np.round(np.clip(w.samples, -1.0, 1.0) * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(w.sample_rate))
        fh.writeframes(pcm.tobytes())


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    """Snap to the PCM16 grid so a save/load round trip is exact."""
    return np.round(np.clip(samples, -1.0, 1.0) * 32767.0) / 32767.0 + 0.0     # + 0.0 folds -0.0 into 0.0


def resample_waveform(w: Waveform, rate: int) -> Waveform:
    if rate == w.sample_rate:
        return w
    n_out = max(1, int(round(len(w) * rate / w.sample_rate)))
    t_in = np.arange(len(w)) / w.sample_rate
    t_out = np.arange(n_out) / rate
    return Waveform(np.interp(t_out, t_in, w.samples), rate)


# ---------------------------------------------------------------------------
# log-Mel spectrogram
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = 16000
    n_fft: int = 512
    hop_length: int = 1067       # round(16000 / 15): one frame per pose frame
    n_mels: int = 128
    fmin: float = 0.0
    fmax: float | None = None
    floor: float = 1e-10

    def to_dict(self) -> dict:
        return asdict(self)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(cfg: MelConfig) -> np.ndarray:
    """n_mels + 2 HTK-spaced frequencies; band b spans edges[b]..edges[b+2], peaking at edges[b+1]."""
    fmax = cfg.sample_rate / 2.0 if cfg.fmax is None else cfg.fmax
    return mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(fmax), cfg.n_mels + 2))


@functools.lru_cache(maxsize=16)
def mel_filterbank(cfg: MelConfig, oversample: int = 32) -> np.ndarray:
    """Triangular filters averaged over each FFT bin's frequency interval.

    Averaging (rather than sampling at bin centres) keeps bands narrower
    than the bin spacing from coming out empty.
    """
    edges = mel_band_edges(cfg)
    n_bins = cfg.n_fft // 2 + 1
    df = cfg.sample_rate / cfg.n_fft
    offsets = (np.arange(oversample) + 0.5) / oversample - 0.5
    freqs = (np.arange(n_bins)[:, None] + offsets[None, :]) * df
    lo, mid, hi = edges[:-2, None, None], edges[1:-1, None, None], edges[2:, None, None]
    up = (freqs[None] - lo) / (mid - lo)
    down = (hi - freqs[None]) / (hi - mid)
    tri = np.maximum(0.0, np.minimum(up, down))
    fb = tri.mean(axis=2)
    fb.setflags(write=False)
    return fb


@dataclass
class MelFrames:
    frames: np.ndarray          # (T_mel, n_mels)
    config: MelConfig

    @property
    def shape(self):
        return self.frames.shape

    def to_json(self) -> dict:
        return {"shape": list(self.frames.shape), "values": self.frames.reshape(-1).tolist(),
                "config": self.config.to_dict()}


def frame_count(n_samples: int, cfg: MelConfig) -> int:
    return 1 + (n_samples - cfg.n_fft) // cfg.hop_length


def power_spectrogram(samples: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    n = 1 + (len(samples) - n_fft) // hop
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n)[:, None]
    window = np.hanning(n_fft + 1)[:-1]
    spec = np.fft.rfft(samples[idx] * window, axis=1)
    return spec.real ** 2 + spec.imag ** 2


def mel_spectrogram(w: Waveform, cfg: MelConfig = MelConfig()) -> MelFrames:
    """Uncentred STFT power -> mel filterbank -> natural log with floor."""
    if cfg.n_mels < 1:
        raise AudioError(f"n_mels must be >= 1, got {cfg.n_mels}")
    w = resample_waveform(w, cfg.sample_rate)
    if len(w) < cfg.n_fft:
        raise AudioError(f"clip of {len(w)} samples is shorter than one STFT window ({cfg.n_fft})")
    power = power_spectrogram(w.samples, cfg.n_fft, cfg.hop_length)
    mel = power @ mel_filterbank(cfg).T
    return MelFrames(np.log(np.maximum(mel, cfg.floor)), cfg)


# ---------------------------------------------------------------------------
# sliding windows and the audio matrix converter
# ---------------------------------------------------------------------------

@dataclass
class AudioWindows:
    windows: np.ndarray         # (W, window_len)
    window_len: int
    stride: int


def window_count(n_samples: int, window_len: int, stride: int) -> int:
    return (n_samples - window_len) // stride + 1


def window_audio(w: Waveform | np.ndarray, window_len: int = 3400, stride: int = 2191) -> AudioWindows:
    samples = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    if window_len < 1 or stride < 1:
        raise AudioError(f"window length and stride must be >= 1, got {window_len}, {stride}")
    if window_len > len(samples):
        raise AudioError(f"window of {window_len} samples exceeds clip length {len(samples)}")
    n = window_count(len(samples), window_len, stride)
    idx = np.arange(window_len)[None, :] + stride * np.arange(n)[:, None]
    return AudioWindows(samples[idx], window_len, stride)


def interpolation_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) linear-interpolation weights with both endpoints kept."""
    if n_in < 1 or n_out < 1:
        raise ValueError(f"resampling needs positive lengths, got {n_in} -> {n_out}")
    m = np.zeros((n_out, n_in))
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    pos = np.linspace(0.0, n_in - 1, n_out) if n_out > 1 else np.zeros(1)
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - lo
    rows = np.arange(n_out)
    m[rows, lo] = 1.0 - frac
    m[rows, lo + 1] += frac
    return m


def linear_resample(x: np.ndarray, n_out: int, axis: int = -1) -> np.ndarray:
    x = np.moveaxis(np.asarray(x, dtype=np.float64), axis, -1)
    out = x @ interpolation_matrix(x.shape[-1], n_out).T
    return np.moveaxis(out, -1, axis)


def audio_matrix_converter(aw: AudioWindows, joints: int = 9, feat: int = 170) -> np.ndarray:
    """Resample each window to joints*feat samples and reshape to (W, joints, feat)."""
    if joints * feat <= 0:
        raise AudioError(f"joints * feat must be positive, got {joints} x {feat}")
    if joints * feat > aw.window_len:
        raise AudioError(f"joints*feat = {joints * feat} exceeds window length {aw.window_len}")
    flat = linear_resample(aw.windows, joints * feat, axis=1)
    return flat.reshape(aw.windows.shape[0], joints, feat)
