"""Acoustic features aligned to 30 fps video frames.

Each video frame gets a 45-dim row: 14 MFCCs, 14 first-order and 14
second-order deltas, zero-crossing rate, loudness (dB) and raw energy.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct
from scipy.io import wavfile

N_FEATURES = 45
LOG_FLOOR = 1e-10

COLUMNS = (
    [f"mfcc{i:02d}" for i in range(14)]
    + [f"d1_{i:02d}" for i in range(14)]
    + [f"d2_{i:02d}" for i in range(14)]
    + ["zcr", "loudness", "energy"]
)


class AudioError(ValueError):
    """Audio could not be loaded or is unusable."""


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.size == 0:
            raise AudioError("waveform must be a non-empty mono signal")
        if self.sample_rate < 8000:
            raise AudioError(f"sample rate {self.sample_rate} Hz is below 8000 Hz")
        if not np.all(np.isfinite(s)) or np.max(np.abs(s)) > 1.0:
            raise AudioError("samples must be finite and within [-1, 1]")
        object.__setattr__(self, "samples", s)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class FrontendConfig:
    fps: int = 30
    window_len: int = 1024
    n_mels: int = 26
    n_mfcc: int = 14
    delta_width: int = 2

    def validate(self) -> None:
        if self.fps < 1:
            raise ValueError("frontend.fps must be >= 1")
        if self.window_len < 2:
            raise ValueError("frontend.window_len must be >= 2")
        if self.n_mfcc != 14:
            raise ValueError("frontend.n_mfcc is fixed at 14 by the 45-column layout")
        if self.n_mels < self.n_mfcc:
            raise ValueError("frontend.n_mels must be >= n_mfcc")
        if self.delta_width < 1:
            raise ValueError("frontend.delta_width must be >= 1")


def load_wav(path) -> Waveform:
    """Read a 16-bit PCM or 32-bit float WAV file, downmixed to mono."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"audio file not found: {path}")
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise AudioError(f"{path}: {exc}") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AudioError(f"{path}: unsupported sample format {data.dtype} "
                         "(need 16-bit PCM or 32-bit float)")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if samples.size == 0:
        raise AudioError(f"{path}: zero-length audio")
    return Waveform(np.clip(samples, -1.0, 1.0), int(rate))


def write_wav(path, w: Waveform) -> None:
    """Write 16-bit PCM mono."""
    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype("<i2")
    wavfile.write(Path(path), w.sample_rate, pcm)


def n_video_frames(n_samples: int, sample_rate: int, fps: int = 30) -> int:
    return (n_samples * fps) // sample_rate


def frame_for_video(w: Waveform, fps: int = 30, window_len: int = 1024) -> np.ndarray:
    """Cut one analysis window per video frame, centred on ``round(i * sr / fps)``.

    Returns an array of shape ``(n_frames, window_len)``; samples outside the
    signal are zero.
    """
    if window_len < 2:
        raise ValueError("window_len must be >= 2")
    n = n_video_frames(w.samples.size, w.sample_rate, fps)
    half = window_len // 2
    # round-half-up on exact rationals: (2*i*sr + fps) // (2*fps)
    centers = (2 * np.arange(n, dtype=np.int64) * w.sample_rate + fps) // (2 * fps)
    padded = np.concatenate([np.zeros(half), w.samples, np.zeros(window_len)])
    idx = centers[:, None] + np.arange(window_len)[None, :]
    return padded[idx]


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@functools.lru_cache(maxsize=16)
def mel_filterbank(n_fft: int, sample_rate: int, n_mels: int) -> np.ndarray:
    """Triangular filters on the mel scale, shape ``(n_mels, n_fft // 2 + 1)``.

    Edges are equally spaced in mel from 0 Hz to Nyquist; each triangle peaks
    at 1 on its centre frequency and is evaluated at the DFT bin frequencies.
    """
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.flags.writeable = False
    return fb


def mel_band_centers(sample_rate: int, n_mels: int) -> np.ndarray:
    return mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))[1:-1]


def mel_energies(frames: np.ndarray, sample_rate: int, n_mels: int) -> np.ndarray:
    """Hann-windowed power spectrum pooled by the mel filterbank, per row."""
    frames = np.atleast_2d(frames)
    n = frames.shape[1]
    power = np.abs(np.fft.rfft(frames * hann(n), axis=1)) ** 2
    return power @ mel_filterbank(n, sample_rate, n_mels).T


def mfcc(frame: np.ndarray, sample_rate: int, n_mels: int = 26, n_mfcc: int = 14) -> np.ndarray:
    """MFCCs of one frame, or of each row when given a 2-D array."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape[-1] < 2:
        raise ValueError("frame length must be >= 2")
    if n_mfcc > n_mels:
        raise ValueError("n_mfcc must not exceed n_mels")
    logmel = np.log(mel_energies(frame, sample_rate, n_mels) + LOG_FLOOR)
    coeffs = dct(logmel, type=2, norm="ortho", axis=1)[:, :n_mfcc]
    return coeffs[0] if frame.ndim == 1 else coeffs


def _regression_delta(x: np.ndarray, width: int) -> np.ndarray:
    T = x.shape[0]
    padded = np.concatenate([np.repeat(x[:1], width, axis=0), x,
                             np.repeat(x[-1:], width, axis=0)])
    out = np.zeros_like(x)
    for n in range(1, width + 1):
        out += n * (padded[width + n:width + n + T] - padded[width - n:width - n + T])
    return out / (2.0 * sum(n * n for n in range(1, width + 1)))


def delta_features(mfcc_rows: np.ndarray, width: int = 2) -> np.ndarray:
    """First-order deltas then second-order deltas, ``(T, 2 * D)``; edges replicated."""
    x = np.asarray(mfcc_rows, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("delta_features needs a (T, D) array with T >= 1")
    d1 = _regression_delta(x, width)
    return np.concatenate([d1, _regression_delta(d1, width)], axis=1)


def zcr(frame: np.ndarray) -> float | np.ndarray:
    """Fraction of adjacent sample pairs whose sign flips (zero counts as non-negative)."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape[-1] < 2:
        raise ValueError("frame length must be >= 2")
    neg = frame < 0
    flips = np.count_nonzero(neg[..., 1:] != neg[..., :-1], axis=-1)
    out = flips / (frame.shape[-1] - 1)
    return float(out) if frame.ndim == 1 else out


def loudness(frame: np.ndarray) -> float | np.ndarray:
    """Mean-square level in dB with a 1e-10 floor."""
    frame = np.asarray(frame, dtype=np.float64)
    out = 10.0 * np.log10(np.mean(frame * frame, axis=-1) + LOG_FLOOR)
    return float(out) if frame.ndim == 1 else out


def energy(frame: np.ndarray) -> float | np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    out = np.sum(frame * frame, axis=-1)
    return float(out) if frame.ndim == 1 else out


def extract_features(w: Waveform, config: FrontendConfig | None = None) -> np.ndarray:
    """Full ``(T, 45)`` feature matrix for a waveform, ``T = floor(duration * fps)``."""
    config = config or FrontendConfig()
    config.validate()
    frames = frame_for_video(w, config.fps, config.window_len)
    if frames.shape[0] == 0:
        raise AudioError(f"audio of {w.duration:.4f} s is shorter than one video frame")
    m = mfcc(frames, w.sample_rate, config.n_mels, config.n_mfcc)
    out = np.concatenate([
        m,
        delta_features(m, config.delta_width),
        zcr(frames)[:, None],
        loudness(frames)[:, None],
        energy(frames)[:, None],
    ], axis=1)
    assert out.shape[1] == N_FEATURES
    return out


def write_feature_csv(path, features: np.ndarray) -> None:
    lines = [",".join(COLUMNS)]
    lines += [",".join(f"{v:.9g}" for v in row) for row in features]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
