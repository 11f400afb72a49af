"""WaveNet-style causal feature stack feeding a two-layer LSTM decoder.

Acoustic features ``(T, 45)`` go through a 1x1 input projection, a chain of
gated residual blocks with dilated causal convolutions, and a skip-sum
post-net. Two stacked LSTM layers, each started from a hidden state embedded
from the reference listener frame, unroll over time; an affine head maps the
top hidden state to one coefficient frame per step.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from . import tensor as tn
from .coeffs import CoeffDims, CoeffSequence
from .tensor import ContractError, Tensor

N_FEATURES = 45


@dataclass(frozen=True)
class ModelConfig:
    in_dim: int = N_FEATURES
    residual_channels: int = 64
    skip_channels: int = 128
    kernel_size: int = 2
    dilation_schedule: tuple[int, ...] = (1, 2, 4, 1, 2, 4)
    lstm_hidden: int = 128
    angle_dim: int = 3
    translation_dim: int = 3
    expression_dim: int = 64
    rng_seed: int = 0
    # feed the previous predicted frame (the reference at t=0) into the first LSTM layer
    output_feedback: bool = False

    def __post_init__(self):
        object.__setattr__(self, "dilation_schedule", tuple(int(d) for d in self.dilation_schedule))

    def validate(self) -> None:
        for name in ("in_dim", "residual_channels", "skip_channels", "kernel_size",
                     "lstm_hidden", "angle_dim", "translation_dim", "expression_dim"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"model.{name} must be >= 1")
        if not self.dilation_schedule:
            raise ValueError("model.dilation_schedule must not be empty")
        if any(d < 1 for d in self.dilation_schedule):
            raise ValueError("model.dilation_schedule values must be >= 1")

    @property
    def dims(self) -> CoeffDims:
        return CoeffDims(self.angle_dim, self.translation_dim, self.expression_dim)

    @property
    def out_dim(self) -> int:
        return self.angle_dim + self.translation_dim + self.expression_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilation_schedule"] = list(self.dilation_schedule)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> ModelConfig:
        return cls(**d)


def receptive_field(kernel_size: int, dilations) -> int:
    """Number of input steps that can reach one output step of the conv stack."""
    return 1 + (kernel_size - 1) * sum(dilations)


def param_specs(config: ModelConfig) -> list[tuple[str, tuple[int, ...], int | None]]:
    """``(name, shape, fan_in)`` for every parameter; ``fan_in`` is None for biases."""
    R, S, K, H = (config.residual_channels, config.skip_channels,
                  config.kernel_size, config.lstm_hidden)
    D = config.out_dim
    specs = [("input.w", (R, config.in_dim), config.in_dim), ("input.b", (R,), None)]
    for i in range(len(config.dilation_schedule)):
        p = f"layer{i}."
        specs += [
            (p + "filter.w", (R, R, K), R * K), (p + "filter.b", (R,), None),
            (p + "gate.w", (R, R, K), R * K), (p + "gate.b", (R,), None),
            (p + "res.w", (R, R), R), (p + "res.b", (R,), None),
            (p + "skip.w", (S, R), R), (p + "skip.b", (S,), None),
        ]
    specs += [("post1.w", (S, S), S), ("post1.b", (S,), None),
              ("post2.w", (S, S), S), ("post2.b", (S,), None)]
    lstm_in = S + D if config.output_feedback else S
    for layer, d_in in ((0, lstm_in), (1, H)):
        specs += [(f"lstm{layer}.w_x", (4 * H, d_in), d_in),
                  (f"lstm{layer}.w_h", (4 * H, H), H),
                  (f"lstm{layer}.b", (4 * H,), None)]
    for layer in (0, 1):
        specs += [(f"ref{layer}.w", (H, D), D), (f"ref{layer}.b", (H,), None)]
    specs += [("head.w", (D, H), H), ("head.b", (D,), None)]
    return specs


def parameter_count(config: ModelConfig) -> int:
    """Closed-form count of learnable scalars."""
    R, S, K, H = (config.residual_channels, config.skip_channels,
                  config.kernel_size, config.lstm_hidden)
    D, L = config.out_dim, len(config.dilation_schedule)
    lstm_in = S + D if config.output_feedback else S
    return ((config.in_dim + 1) * R
            + L * (2 * (R * R * K + R) + (R * R + R) + (S * R + S))
            + 2 * (S * S + S)
            + 4 * H * (lstm_in + H + 1) + 4 * H * (H + H + 1)
            + 2 * (H * D + H)
            + D * H + D)


@dataclass
class ListenerHeadModel:
    config: ModelConfig
    params: dict[str, np.ndarray]
    # per-column feature standardisation, fitted from training data
    feature_mean: np.ndarray = field(default_factory=lambda: np.zeros(N_FEATURES))
    feature_std: np.ndarray = field(default_factory=lambda: np.ones(N_FEATURES))

    def n_parameters(self) -> int:
        return sum(v.size for v in self.params.values())

    def constants(self) -> dict[str, Tensor]:
        return {k: Tensor(v, name=k) for k, v in self.params.items()}


def init_params(config: ModelConfig) -> ListenerHeadModel:
    config.validate()
    rng = np.random.default_rng(config.rng_seed)
    H = config.lstm_hidden
    params = {}
    for name, shape, fan_in in param_specs(config):
        if fan_in is None:
            value = np.zeros(shape)
            if name.startswith("lstm"):
                value[H:2 * H] = 1.0  # forget gate
        else:
            s = 1.0 / np.sqrt(fan_in)
            value = rng.uniform(-s, s, size=shape)
        params[name] = value
    return ListenerHeadModel(config, params,
                             np.zeros(config.in_dim), np.ones(config.in_dim))


@dataclass
class WaveNetLayer:
    filter_w: Tensor
    filter_b: Tensor
    gate_w: Tensor
    gate_b: Tensor
    res_w: Tensor
    res_b: Tensor
    skip_w: Tensor
    skip_b: Tensor
    dilation: int

    @classmethod
    def from_params(cls, P: Mapping[str, Tensor], index: int, dilation: int) -> WaveNetLayer:
        p = f"layer{index}."
        return cls(P[p + "filter.w"], P[p + "filter.b"], P[p + "gate.w"], P[p + "gate.b"],
                   P[p + "res.w"], P[p + "res.b"], P[p + "skip.w"], P[p + "skip.b"], dilation)


def gated_activation(x_f: Tensor, x_g: Tensor) -> Tensor:
    """``tanh(x_f) * sigmoid(x_g)`` elementwise."""
    if x_f.shape != x_g.shape:
        raise ContractError(f"gated_activation: shapes {x_f.shape} and {x_g.shape} differ")
    return tn.mul(tn.tanh(x_f), tn.sigmoid(x_g))


def wavenet_block(layer: WaveNetLayer, x: Tensor) -> tuple[Tensor, Tensor]:
    """One gated residual block; returns ``(residual_out, skip_out)``."""
    h = gated_activation(
        tn.conv1d_causal_dilated(x, layer.filter_w, layer.filter_b, layer.dilation),
        tn.conv1d_causal_dilated(x, layer.gate_w, layer.gate_b, layer.dilation),
    )
    residual = tn.add(x, tn.affine(h, layer.res_w, layer.res_b))
    return residual, tn.affine(h, layer.skip_w, layer.skip_b)


def normalize_features(model: ListenerHeadModel, features: np.ndarray) -> np.ndarray:
    """``(T, in_dim)`` raw features to standardised channel-major ``[in_dim, T]``."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[1] != model.config.in_dim:
        raise ContractError(
            f"features must be (T, {model.config.in_dim}), got {f.shape}")
    if f.shape[0] < 1:
        raise ContractError("features must have at least one frame")
    return ((f - model.feature_mean) / model.feature_std).T


def wavenet_forward(model: ListenerHeadModel, features: np.ndarray,
                    P: Mapping[str, Tensor] | None = None) -> Tensor:
    """Deep features ``[skip_channels, T]`` from raw ``(T, 45)`` features."""
    P = P if P is not None else model.constants()
    x = tn.affine(Tensor(normalize_features(model, features)), P["input.w"], P["input.b"])
    skip = None
    for i, d in enumerate(model.config.dilation_schedule):
        x, s = wavenet_block(WaveNetLayer.from_params(P, i, d), x)
        skip = s if skip is None else tn.add(skip, s)
    y = tn.affine(tn.relu(skip), P["post1.w"], P["post1.b"])
    return tn.affine(tn.relu(y), P["post2.w"], P["post2.b"])


def embed_reference(model: ListenerHeadModel, ref,
                    P: Mapping[str, Tensor] | None = None) -> list[tuple[Tensor, Tensor]]:
    """Initial ``(h0, c0)`` for each LSTM layer from the reference frame."""
    P = P if P is not None else model.constants()
    ref_t = ref if isinstance(ref, Tensor) else Tensor(np.asarray(ref, dtype=np.float64))
    if ref_t.shape != (model.config.out_dim,):
        raise ContractError(
            f"reference frame must have {model.config.out_dim} values, got {ref_t.shape}")
    c0 = Tensor(np.zeros(model.config.lstm_hidden), validate=False)
    return [(tn.tanh(tn.affine(ref_t, P[f"ref{l}.w"], P[f"ref{l}.b"])), c0) for l in (0, 1)]


def decode_sequence(model: ListenerHeadModel, deep: Tensor, ref,
                    P: Mapping[str, Tensor] | None = None) -> Tensor:
    """Unroll the stacked LSTM over ``deep`` ``[S, T]``; returns ``[out_dim, T]``."""
    P = P if P is not None else model.constants()
    cfg = model.config
    if deep.data.ndim != 2 or deep.shape[0] != cfg.skip_channels:
        raise ContractError(f"deep features must be [{cfg.skip_channels}, T], got {deep.shape}")
    (h0a, c0a), (h0b, c0b) = embed_reference(model, ref, P)
    if not cfg.output_feedback:
        h1 = tn.lstm_unroll(deep, P["lstm0.w_x"], P["lstm0.w_h"], P["lstm0.b"], h0a, c0a)
        h2 = tn.lstm_unroll(h1, P["lstm1.w_x"], P["lstm1.w_h"], P["lstm1.b"], h0b, c0b)
        return tn.affine(h2, P["head.w"], P["head.b"])

    prev = ref if isinstance(ref, Tensor) else Tensor(np.asarray(ref, dtype=np.float64))
    ha, ca, hb, cb = h0a, c0a, h0b, c0b
    outputs = []
    for t in range(deep.shape[1]):
        x_t = tn.concat([tn.column(deep, t), prev])
        ha, ca = tn.lstm_cell(x_t, ha, ca, P["lstm0.w_x"], P["lstm0.w_h"], P["lstm0.b"])
        hb, cb = tn.lstm_cell(ha, hb, cb, P["lstm1.w_x"], P["lstm1.w_h"], P["lstm1.b"])
        prev = tn.affine(hb, P["head.w"], P["head.b"])
        outputs.append(prev)
    return tn.stack_columns(outputs)


def forward(model: ListenerHeadModel, features: np.ndarray, ref,
            P: Mapping[str, Tensor] | None = None) -> Tensor:
    """Prediction as a ``[out_dim, T]`` tensor (differentiable when ``P`` is taped)."""
    P = P if P is not None else model.constants()
    return decode_sequence(model, wavenet_forward(model, features, P), ref, P)


def predict(model: ListenerHeadModel, features: np.ndarray, ref) -> CoeffSequence:
    out = forward(model, features, ref)
    return CoeffSequence(out.data.T.copy(), model.config.dims)
