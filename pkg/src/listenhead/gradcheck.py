"""Central finite-difference check of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .tensor import ContractError, GradTape, Tensor, backward


class NonDeterministicError(RuntimeError):
    """Two identical forward passes produced different values."""


@dataclass
class GradCheckReport:
    max_relative_error: float
    passed: bool
    worst_param: str | None
    worst_index: tuple[int, ...] | None
    n_checked: int

    def as_dict(self) -> dict:
        return {
            "max_relative_error": self.max_relative_error,
            "pass": self.passed,
            "worst_param": self.worst_param,
            "worst_index": list(self.worst_index) if self.worst_index is not None else None,
            "n_checked": self.n_checked,
        }


def relative_error(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def analytic_gradients(function: Callable[[dict[str, Tensor]], Tensor],
                       params: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    tape = GradTape()
    watched = {name: tape.watch(name, value) for name, value in params.items()}
    return backward(tape, function(watched))


def grad_check(function: Callable[[dict[str, Tensor]], Tensor],
               params: Mapping[str, np.ndarray],
               epsilon: float = 1e-5,
               tolerance: float = 1e-4,
               analytic: Mapping[str, np.ndarray] | None = None) -> GradCheckReport:
    """Compare tape gradients of ``function`` against central differences.

    ``function`` maps a dict of named tensors to a scalar tensor. Pass
    ``analytic`` to check externally supplied gradients instead of the tape's.
    """
    if not 0.0 < epsilon <= 1e-2:
        raise ContractError(f"epsilon must lie in (0, 1e-2], got {epsilon}")
    base = {name: np.array(v, dtype=np.float64) for name, v in params.items()}

    def evaluate(values: dict[str, np.ndarray]) -> float:
        return function({n: Tensor(v, name=n) for n, v in values.items()}).item()

    first, second = evaluate(base), evaluate(base)
    if first != second:
        raise NonDeterministicError(
            f"function is not deterministic: {first!r} then {second!r}")

    grads = analytic if analytic is not None else analytic_gradients(function, base)

    worst, worst_name, worst_idx, count = 0.0, None, None, 0
    for name, value in base.items():
        a_grad = np.asarray(grads[name], dtype=np.float64)
        if a_grad.shape != value.shape:
            raise ContractError(f"gradient for {name} has shape {a_grad.shape}, "
                                f"parameter has {value.shape}")
        for idx in np.ndindex(value.shape):
            orig = value[idx]
            value[idx] = orig + epsilon
            f_plus = evaluate(base)
            value[idx] = orig - epsilon
            f_minus = evaluate(base)
            value[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            err = float(relative_error(a_grad[idx], numeric))
            count += 1
            if err > worst or worst_name is None:
                worst, worst_name, worst_idx = err, name, idx
    return GradCheckReport(worst, worst < tolerance, worst_name, worst_idx, count)


def _relu_inputs(model, features: np.ndarray) -> np.ndarray:
    from . import tensor as tn
    from .model import WaveNetLayer, normalize_features, wavenet_block

    P = model.constants()
    x = tn.affine(Tensor(normalize_features(model, features)), P["input.w"], P["input.b"])
    skip = None
    for i, d in enumerate(model.config.dilation_schedule):
        x, s = wavenet_block(WaveNetLayer.from_params(P, i, d), x)
        skip = s if skip is None else tn.add(skip, s)
    post1 = tn.affine(tn.relu(skip), P["post1.w"], P["post1.b"])
    return np.concatenate([skip.data.ravel(), post1.data.ravel()])


def sample_check_instance(config, seed: int, frames: int = 3, param_scale: float = 1.3,
                          target_scale: float = 0.3, kink_margin: float = 1e-2,
                          max_tries: int = 100):
    """Random model parameters, features, target and reference frame for a gradient check.

    Every tensor, biases included, is drawn from
    ``uniform(-param_scale / sqrt(fan_in), param_scale / sqrt(fan_in))`` so the
    point is generic. Draws that put any ReLU input within ``kink_margin`` of
    zero are rejected, since finite differences straddling a kink are meaningless.

    The target is the instance's own prediction plus ``target_scale`` standard
    normal noise. A target far from the prediction makes the loss large, and
    central differences then lose the small gradient entries to roundoff.
    """
    from .model import ListenerHeadModel, forward, param_specs

    rng = np.random.default_rng(seed)
    specs = param_specs(config)
    weight_fan = {}
    for name, _, fan_in in specs:
        if fan_in is not None:
            weight_fan[name.rsplit(".", 1)[0]] = fan_in
    for _ in range(max_tries):
        params = {}
        for name, shape, fan_in in specs:
            s = param_scale / np.sqrt(fan_in or weight_fan[name.rsplit(".", 1)[0]])
            params[name] = rng.uniform(-s, s, size=shape)
        model = ListenerHeadModel(config, params, np.zeros(config.in_dim), np.ones(config.in_dim))
        features = rng.normal(size=(frames, config.in_dim))
        target = rng.normal(size=(frames, config.out_dim))
        ref = rng.normal(size=config.out_dim)
        if np.min(np.abs(_relu_inputs(model, features))) >= kink_margin:
            target = forward(model, features, ref).data.T + target_scale * target
            return model, features, target, ref
    raise RuntimeError(f"no kink-free instance found in {max_tries} draws")


def model_gradient_check(config, seed: int, frames: int = 3, epsilon: float = 3e-4,
                         tolerance: float = 1e-4, param_scale: float = 1.3,
                         target_scale: float = 0.3) -> GradCheckReport:
    """Check tape gradients of the full model plus coefficient loss on a random instance."""
    from .model import forward
    from .training import loss_terms

    model, features, target, ref = sample_check_instance(config, seed, frames, param_scale,
                                                         target_scale)

    def loss(P):
        return loss_terms(forward(model, features, ref, P), target, config.dims)[0]

    return grad_check(loss, model.params, epsilon, tolerance)
