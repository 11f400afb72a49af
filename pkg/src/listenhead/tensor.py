"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op is a plain function. When any input belongs to a :class:`GradTape`
the op appends a record holding a vector-Jacobian closure; :func:`backward`
replays those records in reverse. Sequences are channel-major ``[C, T]``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

_DEBUG = os.environ.get("LISTENHEAD_DEBUG", "") not in ("", "0")


class ContractError(ValueError):
    """An operation was called with arguments violating its contract."""


class NumericalError(ArithmeticError):
    """A NaN or infinity appeared where finite values are required."""


def set_debug(enabled: bool) -> None:
    """Toggle post-op finiteness checks on every op output."""
    global _DEBUG
    _DEBUG = bool(enabled)


class Tensor:
    __slots__ = ("data", "tape", "name")

    def __init__(self, data, *, tape: GradTape | None = None, name: str | None = None,
                 validate: bool = True):
        arr = np.array(data, dtype=np.float64)  # always a private copy
        if validate and not np.all(np.isfinite(arr)):
            raise NumericalError(f"non-finite value in tensor {name or '<input>'}")
        arr.flags.writeable = False
        self.data = arr
        self.tape = tape
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, tape: GradTape | None, op: str) -> Tensor:
        t = cls.__new__(cls)
        arr = np.asarray(arr)  # ops on 0-d arrays return numpy scalars
        if _DEBUG and not np.all(np.isfinite(arr)):
            raise NumericalError(f"non-finite output from {op}")
        arr.flags.writeable = False
        t.data = arr
        t.tape = tape
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"


@dataclass(frozen=True)
class _Record:
    output: Tensor
    inputs: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class GradTape:
    """Ordered log of executed differentiable ops plus the watched leaves."""

    def __init__(self):
        self.records: list[_Record] = []
        self.params: dict[str, Tensor] = {}

    def watch(self, name: str, data) -> Tensor:
        if name in self.params:
            raise ContractError(f"parameter {name!r} already watched")
        t = Tensor(data, tape=self, name=name)
        self.params[name] = t
        return t

    def __len__(self) -> int:
        return len(self.records)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(arr: np.ndarray, inputs: Sequence[Tensor], vjp, op: str) -> Tensor:
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ContractError(f"{op}: inputs recorded on different tapes")
            tape = t.tape
    out = Tensor._wrap(arr, tape, op)
    if tape is not None:
        tape.records.append(_Record(out, tuple(inputs), vjp))
    return out


def backward(tape: GradTape, output: Tensor) -> dict[str, np.ndarray]:
    """Gradient of a scalar ``output`` with respect to every watched parameter.

    Parameters with no path to ``output`` get exact zeros.
    """
    if output.data.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    grads: dict[int, np.ndarray] = {}
    if output.tape is tape:
        grads[id(output)] = np.ones_like(output.data)
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.vjp(g)):
            if gi is None or inp.tape is not tape:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    return {name: grads.get(id(p), np.zeros_like(p.data)) for name, p in tape.params.items()}


# ---------------------------------------------------------------- elementwise

def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ContractError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same("add", a, b)
    return _emit(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same("sub", a, b)
    return _emit(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same("mul", a, b)
    x, y = a.data, b.data
    return _emit(x * y, (a, b), lambda g: (g * y, g * x), "mul")


def scale(a: Tensor, factor: float) -> Tensor:
    return _emit(a.data * factor, (a,), lambda g: (g * factor,), "scale")


def square(a: Tensor) -> Tensor:
    x = a.data
    return _emit(x * x, (a,), lambda g: (2.0 * x * g,), "square")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _emit(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return _emit(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _emit(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _emit(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),), "sum")


# ---------------------------------------------------------------- structural

def rows(a: Tensor, start: int, stop: int) -> Tensor:
    """Slice ``a[start:stop]`` along the first axis."""
    shape = a.shape
    if not 0 <= start <= stop <= shape[0]:
        raise ContractError(f"rows: bad range [{start}, {stop}) for shape {shape}")

    def vjp(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return _emit(a.data[start:stop].copy(), (a,), vjp, "rows")


def column(a: Tensor, t: int) -> Tensor:
    """Column ``t`` of a ``[D, T]`` tensor as a ``[D]`` vector."""
    shape = a.shape
    if a.data.ndim != 2 or not 0 <= t < shape[1]:
        raise ContractError(f"column: index {t} invalid for shape {shape}")

    def vjp(g):
        full = np.zeros(shape)
        full[:, t] = g
        return (full,)

    return _emit(a.data[:, t].copy(), (a,), vjp, "column")


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the first axis."""
    sizes = [p.shape[0] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _emit(np.concatenate([p.data for p in parts], axis=0), tuple(parts), vjp, "concat")


def stack_columns(cols: Sequence[Tensor]) -> Tensor:
    """Stack ``[D]`` vectors into a ``[D, T]`` tensor."""
    if not cols:
        raise ContractError("stack_columns: empty sequence")
    d = cols[0].shape
    for c in cols:
        if c.shape != d or len(d) != 1:
            raise ContractError("stack_columns: all columns must be equal-length vectors")
    return _emit(np.stack([c.data for c in cols], axis=1), tuple(cols),
                 lambda g: tuple(g[:, i] for i in range(len(cols))), "stack_columns")


# ---------------------------------------------------------------- linear maps

def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``weight @ x + bias`` for a vector ``[D_in]`` or per column of ``[D_in, T]``."""
    w, b, xv = weight.data, bias.data, x.data
    if w.ndim != 2 or b.shape != (w.shape[0],) or xv.ndim not in (1, 2) or xv.shape[0] != w.shape[1]:
        raise ContractError(
            f"affine: input {xv.shape}, weight {w.shape}, bias {b.shape} do not agree")
    if xv.ndim == 1:
        out = w @ xv + b

        def vjp(g):
            return w.T @ g, np.outer(g, xv), g
    else:
        out = w @ xv + b[:, None]

        def vjp(g):
            return w.T @ g, g @ xv.T, g.sum(axis=1)

    return _emit(out, (x, weight, bias), vjp, "affine")


def conv1d_causal_dilated(x: Tensor, weight: Tensor, bias: Tensor, dilation: int) -> Tensor:
    """Causal dilated 1-D convolution on ``[C_in, T]``.

    ``out[:, t] = bias + sum_k weight[:, :, k] @ x[:, t - k*dilation]`` with
    taps before time 0 contributing nothing. Output keeps length ``T``.
    """
    xv, w, b = x.data, weight.data, bias.data
    if int(dilation) != dilation or dilation < 1:
        raise ContractError(f"conv1d: dilation must be a positive integer, got {dilation}")
    if xv.ndim != 2 or w.ndim != 3 or xv.shape[1] < 1 or w.shape[2] < 1:
        raise ContractError(f"conv1d: input {xv.shape} / weight {w.shape} have wrong rank")
    if w.shape[1] != xv.shape[0]:
        raise ContractError(
            f"conv1d: weight expects {w.shape[1]} input channels, input has {xv.shape[0]}")
    if b.shape != (w.shape[0],):
        raise ContractError(f"conv1d: bias shape {b.shape} != ({w.shape[0]},)")
    T, K = xv.shape[1], w.shape[2]
    out = np.repeat(b[:, None], T, axis=1)
    for k in range(K):
        s = k * dilation
        if s >= T:
            break
        out[:, s:] += w[:, :, k] @ xv[:, :T - s]

    def vjp(g):
        gx = np.zeros_like(xv)
        gw = np.zeros_like(w)
        for k in range(K):
            s = k * dilation
            if s >= T:
                break
            gx[:, :T - s] += w[:, :, k].T @ g[:, s:]
            gw[:, :, k] = g[:, s:] @ xv[:, :T - s].T
        return gx, gw, g.sum(axis=1)

    return _emit(out, (x, weight, bias), vjp, "conv1d")


# ---------------------------------------------------------------- recurrent

def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w_x: Tensor, w_h: Tensor,
              bias: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step; gate rows of the weights are ordered input, forget, output, candidate."""
    H = h.shape[0]
    z = affine(x, w_x, bias)
    z = add(z, affine(h, w_h, Tensor(np.zeros(4 * H), validate=False)))
    i = sigmoid(rows(z, 0, H))
    f = sigmoid(rows(z, H, 2 * H))
    o = sigmoid(rows(z, 2 * H, 3 * H))
    g = tanh(rows(z, 3 * H, 4 * H))
    c_new = add(mul(f, c), mul(i, g))
    h_new = mul(o, tanh(c_new))
    return h_new, c_new


def lstm_unroll(x: Tensor, w_x: Tensor, w_h: Tensor, bias: Tensor, h0: Tensor,
                c0: Tensor) -> Tensor:
    """Run an LSTM over every column of ``x`` ``[D, T]`` and return hidden states ``[H, T]``.

    Fused op with a hand-written backward pass through time; computes the
    same recurrences as :func:`lstm_cell` applied step by step.
    """
    xv, wx, wh, b = x.data, w_x.data, w_h.data, bias.data
    H = wh.shape[1]
    if (xv.ndim != 2 or wx.shape != (4 * H, xv.shape[0]) or wh.shape != (4 * H, H)
            or b.shape != (4 * H,) or h0.shape != (H,) or c0.shape != (H,)):
        raise ContractError(
            f"lstm: shapes x {xv.shape}, w_x {wx.shape}, w_h {wh.shape}, b {b.shape}, "
            f"h0 {h0.shape}, c0 {c0.shape} do not agree")
    T = xv.shape[1]
    zx = wx @ xv + b[:, None]
    gates = np.empty((4 * H, T))
    cs = np.empty((H, T + 1))
    hs = np.empty((H, T + 1))
    hs[:, 0] = h0.data
    cs[:, 0] = c0.data
    for t in range(T):
        z = zx[:, t] + wh @ hs[:, t]
        ifo = _sigmoid(z[:3 * H])
        g = np.tanh(z[3 * H:])
        gates[:3 * H, t] = ifo
        gates[3 * H:, t] = g
        cs[:, t + 1] = ifo[H:2 * H] * cs[:, t] + ifo[:H] * g
        hs[:, t + 1] = ifo[2 * H:] * np.tanh(cs[:, t + 1])

    def vjp(gout):
        dz = np.empty((4 * H, T))
        dh_next = np.zeros(H)
        dc_next = np.zeros(H)
        for t in range(T - 1, -1, -1):
            i, f, o = gates[:H, t], gates[H:2 * H, t], gates[2 * H:3 * H, t]
            g = gates[3 * H:, t]
            tc = np.tanh(cs[:, t + 1])
            dh = gout[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz[:H, t] = dc * g * i * (1.0 - i)
            dz[H:2 * H, t] = dc * cs[:, t] * f * (1.0 - f)
            dz[2 * H:3 * H, t] = dh * tc * o * (1.0 - o)
            dz[3 * H:, t] = dc * i * (1.0 - g * g)
            dh_next = wh.T @ dz[:, t]
            dc_next = dc * f
        return (wx.T @ dz, dz @ xv.T, dz @ hs[:, :T].T, dz.sum(axis=1), dh_next, dc_next)

    return _emit(hs[:, 1:].copy(), (x, w_x, w_h, bias, h0, c0), vjp, "lstm")


# ---------------------------------------------------------------- loss helpers

def frame_diff(a: Tensor) -> Tensor:
    """Inter-frame change along time of ``[D, T]``; the first column is zero."""
    xv = a.data
    if xv.ndim != 2 or xv.shape[1] < 1:
        raise ContractError(f"frame_diff: expected [D, T] with T >= 1, got {xv.shape}")
    out = np.zeros_like(xv)
    out[:, 1:] = xv[:, 1:] - xv[:, :-1]

    def vjp(g):
        gx = np.zeros_like(g)
        gx[:, 1:] += g[:, 1:]
        gx[:, :-1] -= g[:, 1:]
        return (gx,)

    return _emit(out, (a,), vjp, "frame_diff")


def column_norm_sum(a: Tensor) -> Tensor:
    """Sum over columns of the Euclidean norm of each column.

    The gradient of a zero-norm column is taken as zero.
    """
    xv = a.data
    if xv.ndim != 2:
        raise ContractError(f"column_norm_sum: expected [D, T], got {xv.shape}")
    norms = np.sqrt((xv * xv).sum(axis=0))

    def vjp(g):
        safe = np.where(norms > 0, norms, 1.0)
        return (float(g) * np.where(norms > 0, xv / safe, 0.0),)

    return _emit(np.array(norms.sum()), (a,), vjp, "column_norm_sum")
