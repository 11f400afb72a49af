"""Composite coefficient loss, Adam, and the per-clip training loop."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import tensor as tn
from .coeffs import CoeffDims, CoeffSequence
from .model import ListenerHeadModel, forward
from .tensor import ContractError, GradTape, NumericalError, Tensor, backward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossBreakdown:
    angle_term: float
    translation_term: float
    expression_term: float
    motion_term: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def inter_frame_delta(seq: np.ndarray) -> np.ndarray:
    """``x_t - x_{t-1}`` along the rows of ``(T, D)``; the first row is zero."""
    x = np.asarray(seq, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"inter_frame_delta needs (T, D) with T >= 1, got {x.shape}")
    out = np.zeros_like(x)
    out[1:] = x[1:] - x[:-1]
    return out


def loss_terms(pred: Tensor, target: np.ndarray, dims: CoeffDims,
               motion_on_angle: bool = False) -> tuple[Tensor, LossBreakdown]:
    """Differentiable loss of a ``[D, T]`` prediction against ``(T, D)`` ground truth.

    Per frame: Euclidean norms of the angle, translation and expression
    errors plus the norm of the error in inter-frame translation change,
    all summed over time.
    """
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.T.shape or pred.shape[0] != dims.total:
        raise ContractError(f"prediction {pred.shape} and target {target.shape} disagree "
                            f"for {dims.total} coefficient columns")
    diff = tn.sub(pred, Tensor(target.T))

    def group(sl: slice) -> Tensor:
        return tn.rows(diff, sl.start, sl.stop)

    angle = tn.column_norm_sum(group(dims.angle_slice))
    trans = tn.column_norm_sum(group(dims.translation_slice))
    expr = tn.column_norm_sum(group(dims.expression_slice))
    motion = tn.column_norm_sum(tn.frame_diff(group(dims.translation_slice)))
    if motion_on_angle:
        motion = tn.add(motion, tn.column_norm_sum(tn.frame_diff(group(dims.angle_slice))))
    total = tn.add(tn.add(angle, trans), tn.add(expr, motion))
    parts = [angle.item(), trans.item(), expr.item(), motion.item()]
    return total, LossBreakdown(*parts, total=total.item())


def coefficient_loss(pred: CoeffSequence, gt: CoeffSequence, motion_on_angle: bool = False) -> LossBreakdown:
    if pred.dims != gt.dims or len(pred) != len(gt):
        raise ContractError(f"prediction ({len(pred)} x {pred.dims}) and ground truth "
                            f"({len(gt)} x {gt.dims}) disagree")
    if len(gt) < 1:
        raise ContractError("loss needs at least one frame")
    _, breakdown = loss_terms(Tensor(pred.values.T), gt.values, gt.dims, motion_on_angle)
    return breakdown


# ---------------------------------------------------------------- optimiser

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    algorithm: str = "adam"

    @classmethod
    def for_params(cls, params: Mapping[str, np.ndarray], **hyper) -> AdamState:
        return cls(**hyper,
                   m={k: np.zeros_like(v) for k, v in params.items()},
                   v={k: np.zeros_like(v) for k, v in params.items()})


def optimizer_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
                   state: AdamState) -> tuple[dict[str, np.ndarray], AdamState]:
    """Bias-corrected Adam update. Returns new parameter arrays; ``state`` is updated in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
        if g.shape != params[name].shape:
            raise ContractError(f"gradient for {name!r} has shape {g.shape}, "
                                f"parameter has {params[name].shape}")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    new = {}
    for name, p in params.items():
        g = grads[name]
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        new[name] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return new, state


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Rescale ``grads`` in place so their joint norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * factor
    return norm


# ---------------------------------------------------------------- loop

@dataclass
class Clip:
    """One in-memory training example."""

    id: str
    features: np.ndarray   # (T, 45)
    target: CoeffSequence  # T frames
    ref: np.ndarray        # reference coefficient frame


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    lr: float = 1e-3
    seed: int = 0
    clip_norm: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    motion_on_angle: bool = False
    normalize_features: bool = True
    checkpoint_path: str | None = None

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValueError("train.epochs must be >= 0")
        if self.lr < 0:
            raise ValueError("train.lr must be >= 0")
        if self.clip_norm < 0:
            raise ValueError("train.clip_norm must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("train.beta1 and train.beta2 must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError("train.eps must be > 0")

    def header_dict(self) -> dict:
        d = asdict(self)
        d.pop("checkpoint_path")
        return d


@dataclass
class TrainState:
    optimizer: AdamState
    rng_state: dict
    epoch: int = 0


@dataclass
class EpochRecord:
    epoch: int
    loss: LossBreakdown
    total_per_frame: float
    grad_norm: float

    def as_dict(self) -> dict:
        d = {"epoch": self.epoch}
        d.update(self.loss.as_dict())
        d["total_per_frame"] = self.total_per_frame
        d["grad_norm"] = self.grad_norm
        return d


@dataclass
class TrainReport:
    epochs: list[EpochRecord]
    state: TrainState


def fit_feature_normalizer(model: ListenerHeadModel, clips: Sequence[Clip]) -> None:
    stacked = np.concatenate([c.features for c in clips], axis=0)
    std = stacked.std(axis=0)
    model.feature_mean = stacked.mean(axis=0)
    model.feature_std = np.where(std > 1e-8, std, 1.0)


def clip_loss(model: ListenerHeadModel, clip: Clip, P: Mapping[str, Tensor],
              motion_on_angle: bool = False) -> tuple[Tensor, LossBreakdown]:
    pred = forward(model, clip.features, clip.ref, P)
    return loss_terms(pred, clip.target.values, model.config.dims, motion_on_angle)


def _check_dataset(model: ListenerHeadModel, clips: Sequence[Clip]) -> None:
    if not clips:
        raise ContractError("training needs at least one clip")
    cfg = model.config
    for c in clips:
        if c.features.ndim != 2 or c.features.shape[1] != cfg.in_dim:
            raise ContractError(f"clip {c.id}: features {c.features.shape} "
                                f"do not have {cfg.in_dim} columns")
        if c.target.dims != cfg.dims:
            raise ContractError(f"clip {c.id}: coefficient dims {c.target.dims} "
                                f"do not match model {cfg.dims}")
        if len(c.target) != c.features.shape[0]:
            raise ContractError(f"clip {c.id}: {len(c.target)} coefficient frames "
                                f"vs {c.features.shape[0]} feature frames")


def _average(records: Sequence[LossBreakdown]) -> LossBreakdown:
    arr = np.array([[r.angle_term, r.translation_term, r.expression_term,
                     r.motion_term, r.total] for r in records])
    return LossBreakdown(*(float(v) for v in arr.mean(axis=0)))


def train(model: ListenerHeadModel, clips: Sequence[Clip], config: TrainConfig,
          state: TrainState | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None,
          meta: dict | None = None) -> TrainReport:
    """Run ``config.epochs`` more epochs, one optimiser step per clip.

    A fresh run (``state is None``) fits the feature normaliser and seeds the
    shuffle generator from ``config.seed``; passing the state of a loaded
    checkpoint continues exactly where that run stopped. ``model.params`` is
    replaced in place after every step.
    """
    from .checkpoint import Checkpoint, save_checkpoint

    config.validate()
    _check_dataset(model, clips)
    if state is None:
        if config.normalize_features:
            fit_feature_normalizer(model, clips)
        rng = np.random.default_rng(config.seed)
        opt = AdamState.for_params(model.params, lr=config.lr, beta1=config.beta1,
                                   beta2=config.beta2, eps=config.eps)
        state = TrainState(opt, rng.bit_generator.state, 0)
    else:
        rng = np.random.default_rng()
        rng.bit_generator.state = state.rng_state
        state.optimizer.lr = config.lr

    history = []
    for _ in range(config.epochs):
        losses, frames, norms = [], 0, []
        for i in rng.permutation(len(clips)):
            clip = clips[int(i)]
            tape = GradTape()
            P = {k: tape.watch(k, v) for k, v in model.params.items()}
            total, breakdown = clip_loss(model, clip, P, config.motion_on_angle)
            if not np.isfinite(breakdown.total):
                raise NumericalError(
                    f"non-finite loss on clip {clip.id} in epoch {state.epoch + 1}")
            grads = backward(tape, total)
            norms.append(clip_global_norm(grads, config.clip_norm))
            model.params, state.optimizer = optimizer_step(model.params, grads, state.optimizer)
            losses.append(breakdown)
            frames += len(clip.target)
        state.epoch += 1
        state.rng_state = rng.bit_generator.state
        avg = _average(losses)
        record = EpochRecord(state.epoch, avg, avg.total * len(losses) / frames,
                             float(np.mean(norms)))
        history.append(record)
        log.debug("epoch %d total %.6g", record.epoch, avg.total)
        if config.checkpoint_path:
            save_checkpoint(Checkpoint(model, state, {**(meta or {}), "train": config.header_dict()}),
                            config.checkpoint_path)
        if on_epoch is not None:
            on_epoch(record)
    return TrainReport(history, state)
