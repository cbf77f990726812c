"""AdamW with decoupled decay, warmup + cosine schedule, layer-wise lr decay, EMA."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from ..arch.init import no_weight_decay


class TrainingError(RuntimeError):
    pass


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-6
    weight_decay: float = 0.05

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray], **hparams) -> "OptimizerState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()}, **hparams)


def adamw_step(state: OptimizerState, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
               lr: float, lr_scale: Optional[Mapping[str, float]] = None,
               exempt: Callable[[str], bool] = no_weight_decay):
    """One AdamW update; returns ``(new_state, new_params)`` and leaves inputs untouched.

    Per parameter: ``p <- p * (1 - lr * wd)`` (skipped for exempt names), then
    ``p <- p - lr * m_hat / (sqrt(v_hat) + eps)`` with bias-corrected moments.
    """
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_m, new_v, new_p = {}, {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise TrainingError(f"step {state.step}: grad for {name!r} has shape {g.shape}, param {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"step {state.step}: non-finite gradient in {name!r}")
        plr = lr * (lr_scale[name] if lr_scale is not None else 1.0)
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        q = p if exempt(name) else p * (1.0 - plr * state.weight_decay)
        new_p[name] = q - plr * ((m / c1) / (np.sqrt(v / c2) + state.eps))
        new_m[name], new_v[name] = m, v
    new_state = OptimizerState(new_m, new_v, t, b1, b2, state.eps, state.weight_decay)
    return new_state, new_p


@dataclass(frozen=True)
class LrSchedule:
    peak_lr: float
    warmup_steps: int
    total_steps: int
    floor_lr: float = 0.0
    layer_decay: float = 1.0

    def __post_init__(self):
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError(f"need 0 <= warmup_steps <= total_steps, got {self.warmup_steps}, {self.total_steps}")
        if not 0.0 < self.layer_decay <= 1.0:
            raise ValueError(f"layer_decay must lie in (0, 1], got {self.layer_decay}")


def cosine_lr(step: int, schedule: LrSchedule) -> float:
    s = schedule
    if step < s.warmup_steps:
        return s.peak_lr * step / s.warmup_steps
    if step >= s.total_steps:
        return s.floor_lr
    t = (step - s.warmup_steps) / (s.total_steps - s.warmup_steps)
    return s.floor_lr + 0.5 * (s.peak_lr - s.floor_lr) * (1.0 + math.cos(math.pi * t))


def layerwise_lr(base: float, decay: float, group: int, num_groups: int) -> float:
    """``base * decay**(num_groups - 1 - group)``; the last group (head) keeps ``base``."""
    if not 0 <= group < num_groups:
        raise IndexError(f"group {group} outside [0, {num_groups})")
    return base * decay ** (num_groups - 1 - group)


def ema_update(ema: Mapping[str, np.ndarray], params: Mapping[str, np.ndarray], alpha: float) -> dict:
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"ema alpha must lie in [0, 1), got {alpha}")
    out = {}
    for k, e in ema.items():
        p = params[k]
        if np.shape(p) != np.shape(e):
            raise ValueError(f"ema entry {k!r}: shape {np.shape(e)} vs param {np.shape(p)}")
        out[k] = alpha * e + (1.0 - alpha) * p
    return out
