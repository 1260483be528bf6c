"""Training updates: Adam, LAMB with per-tensor trust ratios, gradient
clipping, learning-rate warmup, and the auxiliary loss terms.

LAMB applies Adam-style moment estimates per named parameter tensor and then
rescales each tensor's update by the ratio of the parameter norm to the
update norm. Decoupled weight decay enters the update before the ratio and
is never applied to biases. The trust ratio is not clipped; its denominator
carries a small offset against division by zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import tensor as T

__all__ = [
    "OptimizerConfig",
    "OptimizerState",
    "Optimizer",
    "clip_global_norm",
    "clip_per_element",
    "warmup_lr",
    "adam_step",
    "lamb_step",
    "activation_penalty",
    "l2_penalty",
    "is_bias",
]

DEFAULT_LR = {"lamb": 2e-3, "adam": 1e-4}


def is_bias(name: str) -> bool:
    return name.endswith(".bias")


@dataclass
class OptimizerConfig:
    kind: str = "lamb"
    lr: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.2
    l2_coefficient: float = 1e-4
    trust_denominator_offset: float = 1e-6
    grad_clip_norm: float = 10.0
    clip_mode: str = "global"
    warmup_epochs: int = 8
    warmup: bool | None = None

    def __post_init__(self):
        if self.kind not in ("adam", "lamb"):
            raise ValueError(f"optimizer kind must be 'adam' or 'lamb', got {self.kind!r}")
        if self.lr is None:
            self.lr = DEFAULT_LR[self.kind]
        if self.lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.weight_decay < 0 or self.l2_coefficient < 0:
            raise ValueError("decay coefficients must be non-negative")
        if self.clip_mode not in ("global", "element"):
            raise ValueError(f"clip_mode must be 'global' or 'element', got {self.clip_mode!r}")
        if self.warmup is None:
            # warmup belongs to the large-batch recipe; Adam runs skip it
            self.warmup = self.kind == "lamb"


@dataclass
class OptimizerState:
    """First/second moment estimates per parameter tensor plus a step count."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init_for(cls, params: Mapping[str, "T.Tensor"]) -> "OptimizerState":
        return cls(
            m={name: np.zeros_like(p.data) for name, p in params.items()},
            v={name: np.zeros_like(p.data) for name, p in params.items()},
            t=0,
        )


def clip_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    """Scale all gradients by max_norm/norm when the global L2 norm exceeds it.

    Returns the (possibly rescaled) gradients and the pre-clip global norm.
    """
    total = 0.0
    for g in grads.values():
        total += float(np.dot(g.reshape(-1), g.reshape(-1)))
    norm = float(np.sqrt(total))
    if not np.isfinite(norm):
        raise T.NonFiniteError("non-finite gradient norm")
    if norm <= max_norm:
        return dict(grads), norm
    factor = max_norm / norm
    return {name: g * factor for name, g in grads.items()}, norm


def clip_per_element(grads: Mapping[str, np.ndarray], max_abs: float) -> dict[str, np.ndarray]:
    """Clamp every gradient component into [-max_abs, max_abs]."""
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            raise T.NonFiniteError("non-finite gradient")
    return {name: np.clip(g, -max_abs, max_abs) for name, g in grads.items()}


def warmup_lr(base_lr: float, iteration: int, iterations_per_epoch: int, warmup_epochs: int) -> float:
    """Linear per-iteration ramp to base_lr over the warmup epochs."""
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    total = warmup_epochs * iterations_per_epoch
    if total <= 0:
        return base_lr
    return base_lr * min(1.0, (iteration + 1) / total)


def _moments(
    state: OptimizerState, name: str, grad: np.ndarray, cfg: OptimizerConfig
) -> tuple[np.ndarray, np.ndarray]:
    m = state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * grad
    v = state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * grad * grad
    m_hat = m / (1.0 - cfg.beta1**state.t)
    v_hat = v / (1.0 - cfg.beta2**state.t)
    return m_hat, v_hat


def adam_step(
    params: Mapping[str, "T.Tensor"],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    cfg: OptimizerConfig,
    lr_eff: float,
) -> None:
    state.t += 1
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m_hat, v_hat = _moments(state, name, g, cfg)
        update = lr_eff * m_hat / (np.sqrt(v_hat) + cfg.eps)
        if not np.all(np.isfinite(update)):
            raise T.NonFiniteError(f"non-finite update for '{name}'")
        p.data -= update.astype(p.data.dtype, copy=False)


def lamb_step(
    params: Mapping[str, "T.Tensor"],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    cfg: OptimizerConfig,
    lr_eff: float,
    trace_hook: Callable[[str, np.ndarray, np.ndarray, float], None] | None = None,
) -> None:
    """One LAMB step over all named tensors.

    ``trace_hook(name, param_before, update_direction, trust_ratio)`` is
    invoked per tensor when provided, for independent verification.
    """
    state.t += 1
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m_hat, v_hat = _moments(state, name, g, cfg)
        u = m_hat / (np.sqrt(v_hat) + cfg.eps)
        if cfg.weight_decay and not is_bias(name):
            u = u + cfg.weight_decay * p.data
        p_norm = float(np.linalg.norm(p.data))
        u_norm = float(np.linalg.norm(u))
        ratio = p_norm / (u_norm + cfg.trust_denominator_offset)
        if not np.isfinite(ratio):
            raise T.NonFiniteError(f"non-finite trust ratio for '{name}'")
        if trace_hook is not None:
            trace_hook(name, p.data.copy(), u, ratio)
        p.data -= (lr_eff * ratio * u).astype(p.data.dtype, copy=False)


class Optimizer:
    """Stateful wrapper dispatching to the configured update rule."""

    def __init__(self, cfg: OptimizerConfig, params: Mapping[str, "T.Tensor"]):
        self.cfg = cfg
        self.state = OptimizerState.init_for(params)
        self.trace_hook: Callable[[str, np.ndarray, np.ndarray, float], None] | None = None

    def step(self, params: Mapping[str, "T.Tensor"], grads: Mapping[str, np.ndarray], lr_eff: float) -> None:
        if self.cfg.kind == "adam":
            adam_step(params, grads, self.state, self.cfg, lr_eff)
        else:
            lamb_step(params, grads, self.state, self.cfg, lr_eff, self.trace_hook)


def activation_penalty(captured: list["T.Tensor"], coefficient: float = 2e-3) -> T.Tensor:
    """coefficient * mean of squares over all captured activation tensors.

    Differentiable: built from tape ops so the penalty shapes the gradients.
    """
    total = None
    count = 0
    for t in captured:
        s = T.reduce_sum(T.square(t))
        total = s if total is None else T.add(total, s)
        count += t.size
    if total is None or count == 0:
        raise ValueError("no activations captured")
    return T.scale(total, coefficient / count)


def l2_penalty(params: Mapping[str, "T.Tensor"], coefficient: float) -> T.Tensor:
    """coefficient * sum of squared weights; bias tensors are excluded."""
    if coefficient < 0:
        raise ValueError("coefficient must be non-negative")
    total = None
    for name, p in params.items():
        if is_bias(name):
            continue
        s = T.reduce_sum(T.square(p))
        total = s if total is None else T.add(total, s)
    if total is None:
        raise ValueError("no weight tensors found")
    return T.scale(total, coefficient)
