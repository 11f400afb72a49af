"""Head-motion coefficient containers: angle, translation, expression per frame."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class CoeffDims:
    angle: int = 3
    translation: int = 3
    expression: int = 64

    @property
    def total(self) -> int:
        return self.angle + self.translation + self.expression

    @property
    def angle_slice(self) -> slice:
        return slice(0, self.angle)

    @property
    def translation_slice(self) -> slice:
        return slice(self.angle, self.angle + self.translation)

    @property
    def expression_slice(self) -> slice:
        return slice(self.angle + self.translation, self.total)


class CoeffFormatError(ValueError):
    pass


@dataclass
class CoeffSequence:
    """``values`` is ``(T, angle + translation + expression)``, columns in that order."""

    values: np.ndarray
    dims: CoeffDims

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != self.dims.total:
            raise CoeffFormatError(
                f"coefficient array of shape {v.shape} does not have {self.dims.total} columns")
        if not np.all(np.isfinite(v)):
            raise CoeffFormatError("coefficients must be finite")
        self.values = v

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def angle(self) -> np.ndarray:
        return self.values[:, self.dims.angle_slice]

    @property
    def translation(self) -> np.ndarray:
        return self.values[:, self.dims.translation_slice]

    @property
    def expression(self) -> np.ndarray:
        return self.values[:, self.dims.expression_slice]

    def frame(self, i: int) -> np.ndarray:
        return self.values[i].copy()

    def truncate(self, n: int) -> CoeffSequence:
        return CoeffSequence(self.values[:n], self.dims)


def dims_from_width(width: int) -> CoeffDims:
    if width < 7:
        raise CoeffFormatError(f"coefficient rows need at least 7 columns, got {width}")
    return CoeffDims(expression=width - 6)


def write_coeffs(path, seq: CoeffSequence | np.ndarray) -> None:
    values = seq.values if isinstance(seq, CoeffSequence) else np.atleast_2d(seq)
    text = "".join(",".join(f"{v:.9g}" for v in row) + "\n" for row in values)
    Path(path).write_text(text, encoding="utf-8")


def load_coeffs(path, dims: CoeffDims | None = None) -> CoeffSequence:
    """Read a headerless coefficient CSV. ``dims=None`` infers the expression width."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"coefficient file not found: {path}")
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        cells = line.split(",")
        try:
            row = [float(c) for c in cells]
        except ValueError as exc:
            raise CoeffFormatError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
        if dims is None:
            dims = dims_from_width(len(row))
        if len(row) != dims.total:
            raise CoeffFormatError(
                f"{path}:{lineno}: expected {dims.total} columns, found {len(row)}")
        rows.append(row)
    if dims is None:
        raise CoeffFormatError(f"{path}: no coefficient rows")
    values = np.array(rows, dtype=np.float64).reshape(-1, dims.total)
    if not np.all(np.isfinite(values)):
        raise CoeffFormatError(f"{path}: non-finite coefficient")
    return CoeffSequence(values, dims)
