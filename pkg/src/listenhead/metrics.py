"""Coefficient feature distance and frame-level image metrics (SSIM, PSNR, CPBD)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .coeffs import CoeffSequence


class ImageSizeError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureDistanceReport:
    """Mean absolute error per coefficient group, multiplied by 100."""

    angle: float
    expression: float
    translation: float

    def as_dict(self) -> dict[str, float]:
        return {"angle": self.angle, "exp": self.expression, "trans": self.translation}


def feature_distance(pred: CoeffSequence, gt: CoeffSequence) -> FeatureDistanceReport:
    if pred.dims != gt.dims or len(pred) != len(gt):
        raise ValueError(f"prediction ({len(pred)} x {pred.dims.total}) and ground truth "
                         f"({len(gt)} x {gt.dims.total}) disagree")
    if len(gt) == 0:
        raise ValueError("feature distance needs at least one frame")

    def l1(a, b):
        return 100.0 * float(np.mean(np.abs(a - b)))

    return FeatureDistanceReport(
        angle=l1(pred.angle, gt.angle),
        expression=l1(pred.expression, gt.expression),
        translation=l1(pred.translation, gt.translation),
    )


# ---------------------------------------------------------------- images

def as_gray(img) -> np.ndarray:
    """Float grayscale in [0, 255]; RGB(A) is reduced with BT.601 luma weights."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 3:
        a = a[..., 0] * 0.299 + a[..., 1] * 0.587 + a[..., 2] * 0.114
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale or RGB image, got shape {a.shape}")
    return np.clip(a, 0.0, 255.0)


def load_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode not in ("L", "RGB", "RGBA"):
            im = im.convert("RGB")
        return as_gray(np.asarray(im))


def psnr(a, b, peak: float = 255.0) -> float:
    """PSNR in dB; identical images give ``math.inf``."""
    a, b = as_gray(a), as_gray(b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    n = g.size
    y = sliding_window_view(x, n, axis=0) @ g
    return sliding_window_view(y, n, axis=1) @ g


def ssim(a, b, window: int = 11, sigma: float = 1.5, peak: float = 255.0) -> float:
    """Mean SSIM over every valid Gaussian-window position.

    Images narrower than ``window`` use the largest odd window that fits.
    """
    a, b = as_gray(a), as_gray(b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if min(a.shape) < 8:
        raise ImageSizeError(f"SSIM needs images of at least 8x8, got {a.shape}")
    size = min(window, *a.shape)
    size -= 1 - size % 2
    g = gaussian_window(size, sigma)
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class CPBDConfig:
    beta: float = 3.6
    detection_threshold: float = 0.63
    contrast_split: float = 50.0
    jnb_low_contrast: float = 5.0
    jnb_high_contrast: float = 3.0
    # edge pixels: Sobel magnitude above this fraction of the image maximum
    edge_fraction: float = 0.2
    # intensity steps at or below this count as flat when measuring edge width;
    # half a grey level is below what 8-bit frames can resolve
    flat_step: float = 0.5


@dataclass(frozen=True)
class CPBDResult:
    value: float
    n_edges: int
    zero_edges: bool


def _walk(profile: np.ndarray, pos: int, sign: float, flat: float = 0.0) -> tuple[int, int]:
    """Extend from ``pos`` to the nearest local extrema of a 1-D intensity profile.

    Moves forward while intensity keeps rising by more than ``flat`` in
    direction ``sign`` and backward while it keeps falling against it.
    """
    hi = pos
    while hi + 1 < profile.size and (profile[hi + 1] - profile[hi]) * sign > flat:
        hi += 1
    lo = pos
    while lo - 1 >= 0 and (profile[lo] - profile[lo - 1]) * sign > flat:
        lo -= 1
    return lo, hi


def cpbd_report(img, config: CPBDConfig = CPBDConfig()) -> CPBDResult:
    """No-reference sharpness: share of edge pixels whose blur stays below detection."""
    a = as_gray(img)
    if min(a.shape) < 16:
        raise ImageSizeError(f"CPBD needs images of at least 16x16, got {a.shape}")
    gx = ndimage.sobel(a, axis=1, mode="nearest")
    gy = ndimage.sobel(a, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    mag[0, :] = mag[-1, :] = 0.0
    mag[:, 0] = mag[:, -1] = 0.0
    peak = float(mag.max())
    if peak <= 1e-9:
        return CPBDResult(1.0, 0, True)
    edges = np.argwhere(mag > config.edge_fraction * peak)

    detected_sharp = 0
    for r, c in edges:
        if abs(gx[r, c]) >= abs(gy[r, c]):
            profile, pos, sign = a[r, :], c, np.sign(gx[r, c])
        else:
            profile, pos, sign = a[:, c], r, np.sign(gy[r, c])
        lo, hi = _walk(profile, pos, sign, config.flat_step)
        width = max(hi - lo, 1)
        contrast = abs(profile[hi] - profile[lo])
        jnb = config.jnb_low_contrast if contrast <= config.contrast_split else config.jnb_high_contrast
        p_blur = 1.0 - math.exp(-((width / jnb) ** config.beta))
        if p_blur <= config.detection_threshold:
            detected_sharp += 1
    return CPBDResult(detected_sharp / len(edges), len(edges), False)


def cpbd(img, config: CPBDConfig = CPBDConfig()) -> float:
    return cpbd_report(img, config).value


def list_frames(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"frame directory not found: {d}")
    return sorted(d.glob("frame_*.png"))


def frame_metrics(pred_dir, gt_dir) -> dict[str, float]:
    """Mean SSIM and PSNR of paired frames, mean CPBD of the predicted frames."""
    pred, gt = list_frames(pred_dir), list_frames(gt_dir)
    if not pred:
        raise ValueError(f"no frame_*.png files in {pred_dir}")
    if [p.name for p in pred] != [g.name for g in gt]:
        raise ValueError(f"frame files in {pred_dir} and {gt_dir} do not pair up")
    s, p, c = [], [], []
    for fp, fg in zip(pred, gt):
        a, b = load_png(fp), load_png(fg)
        s.append(ssim(a, b))
        p.append(psnr(a, b))
        c.append(cpbd(a))
    return {"ssim": float(np.mean(s)), "psnr": float(np.mean(p)), "cpbd": float(np.mean(c))}
