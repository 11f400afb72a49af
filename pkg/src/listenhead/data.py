"""Paired speaker-audio / listener-coefficient clips on disk.

Layout: a manifest CSV with header ``id,audio,coeffs,ref_frame,attitude,split``;
paths are relative to the manifest's directory. Coefficient files are
headerless CSVs with angle, translation and expression columns.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .coeffs import CoeffDims, CoeffSequence, load_coeffs, write_coeffs
from .frontend import FrontendConfig, Waveform, extract_features, load_wav, write_wav
from .training import Clip

MANIFEST_COLUMNS = ("id", "audio", "coeffs", "ref_frame", "attitude", "split")
ATTITUDES = ("positive", "natural", "negative")
SPLITS = ("train", "test", "ood")


class ManifestError(ValueError):
    pass


class MissingColumnError(ManifestError):
    pass


class VocabularyError(ManifestError):
    pass


class DanglingReferenceError(ManifestError):
    pass


class SplitIntegrityError(ManifestError):
    pass


class ClipAlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class ClipRecord:
    id: str
    audio: Path
    coeffs: Path
    ref_frame: int
    attitude: str
    split: str


def load_manifest(path, check_files: bool = True) -> list[ClipRecord]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    base = path.parent.resolve()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in MANIFEST_COLUMNS if c not in header]
        if missing:
            raise MissingColumnError(f"{path}: missing column(s) {', '.join(missing)}")
        records, seen = [], {}
        for rowno, row in enumerate(reader, start=2):
            where = f"{path}:{rowno}"
            if row["attitude"] not in ATTITUDES:
                raise VocabularyError(f"{where}: unknown attitude {row['attitude']!r}")
            if row["split"] not in SPLITS:
                raise VocabularyError(f"{where}: unknown split {row['split']!r}")
            try:
                ref = int(row["ref_frame"])
            except ValueError:
                raise ManifestError(f"{where}: ref_frame {row['ref_frame']!r} is not an integer") from None
            if ref < 0:
                raise ManifestError(f"{where}: ref_frame must be >= 0")
            audio, coeffs = base / row["audio"], base / row["coeffs"]
            if check_files:
                for p in (audio, coeffs):
                    if not p.is_file():
                        raise DanglingReferenceError(f"{where}: file not found: {p}")
            if seen.setdefault(row["id"], row["split"]) != row["split"]:
                raise SplitIntegrityError(
                    f"{where}: clip {row['id']!r} appears in splits "
                    f"{seen[row['id']]!r} and {row['split']!r}")
            records.append(ClipRecord(row["id"], audio, coeffs, ref, row["attitude"], row["split"]))
    return records


def align(features: np.ndarray, coeffs: CoeffSequence, clip_id: str = "?") -> tuple[np.ndarray, CoeffSequence]:
    """Truncate to the shorter of the two when they differ by at most one frame."""
    ta, tc = features.shape[0], len(coeffs)
    if abs(ta - tc) > 1:
        raise ClipAlignmentError(
            f"clip {clip_id}: audio has {ta} video frames but coefficients have {tc} rows")
    n = min(ta, tc)
    return features[:n], coeffs.truncate(n)


def load_clip(record: ClipRecord, dims: CoeffDims,
              frontend: FrontendConfig | None = None) -> Clip:
    features = extract_features(load_wav(record.audio), frontend)
    features, coeffs = align(features, load_coeffs(record.coeffs, dims), record.id)
    if record.ref_frame >= len(coeffs):
        raise ClipAlignmentError(f"clip {record.id}: ref_frame {record.ref_frame} "
                                 f"beyond {len(coeffs)} frames")
    return Clip(record.id, features, coeffs, coeffs.frame(record.ref_frame))


def load_dataset(manifest, dims: CoeffDims, frontend: FrontendConfig | None = None,
                 split: str | None = None) -> list[Clip]:
    return [load_clip(r, dims, frontend) for r in load_manifest(manifest)
            if split is None or r.split == split]


# ---------------------------------------------------------------- synthetic

SAMPLE_RATE = 16000


def synth_audio(rng: np.random.Generator, duration_s: float) -> Waveform:
    """2-4 sine tones under a piecewise-linear amplitude envelope."""
    n = int(round(duration_s * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    tones = np.zeros(n)
    for _ in range(int(rng.integers(2, 5))):
        freq = rng.uniform(120.0, 2000.0)
        tones += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
    knots_t = np.arange(0.0, duration_s + 0.25, 0.25)
    knots_v = rng.uniform(0.02, 1.0, size=knots_t.size)
    signal = tones * np.interp(t, knots_t, knots_v)
    return Waveform(0.9 * signal / np.max(np.abs(signal)), SAMPLE_RATE)


def _causal_smooth(x: np.ndarray, alpha: float) -> np.ndarray:
    out = np.empty_like(x)
    acc = x[0]
    for i, v in enumerate(x):
        acc = alpha * v + (1.0 - alpha) * acc
        out[i] = acc
    return out


def synth_coefficients(features: np.ndarray, dims: CoeffDims) -> np.ndarray:
    """Deterministic smooth head motion driven by per-frame level and zero-crossing rate.

    Angles follow smoothed log level, translation follows smoothed ZCR, and
    each expression channel follows the level delayed by a channel-specific
    lag. Every output depends only on current and past audio.
    """
    level = (features[:, 43] + 20.0) / 10.0   # loudness column, roughly [-2, 2]
    zc = features[:, 42] * 10.0
    slow = _causal_smooth(level, 0.3)
    fast = _causal_smooth(level, 0.7)
    zs = _causal_smooth(zc, 0.3)
    T = features.shape[0]
    out = np.zeros((T, dims.total))
    for j in range(dims.angle):
        out[:, j] = 0.1 * (j + 1) + 0.15 * (-1) ** j * slow
    for j in range(dims.translation):
        out[:, dims.angle + j] = 0.05 * (j - 1) + 0.1 * zs * (1.0 if j % 2 == 0 else -0.5)
    e0 = dims.angle + dims.translation
    for k in range(dims.expression):
        lag = k % 4
        lagged = np.concatenate([np.full(lag, fast[0]), fast[:T - lag]])
        out[:, e0 + k] = 0.2 * np.cos(k) + 0.1 * lagged
    return out


def generate_synthetic(out_dir, seed: int, n_clips: int, duration_s: float,
                       dims: CoeffDims, frontend: FrontendConfig | None = None) -> Path:
    """Write ``n_clips`` WAV/CSV pairs and ``manifest.csv``; returns the manifest path."""
    if n_clips < 1:
        raise ValueError("n_clips must be >= 1")
    if duration_s < 0.5:
        raise ValueError("duration must be >= 0.5 s")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [",".join(MANIFEST_COLUMNS)]
    for i in range(n_clips):
        rng = np.random.default_rng([seed, i])
        name = f"clip_{i:03d}"
        wav_path = out / f"{name}.wav"
        write_wav(wav_path, synth_audio(rng, duration_s))
        # derive targets from the quantised file so they match what loaders see
        features = extract_features(load_wav(wav_path), frontend)
        write_coeffs(out / f"{name}.csv", synth_coefficients(features, dims))
        rows.append(f"{name},{name}.wav,{name}.csv,0,{ATTITUDES[i % 3]},train")
    manifest = out / "manifest.csv"
    manifest.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return manifest
