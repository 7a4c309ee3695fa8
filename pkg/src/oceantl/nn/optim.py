"""AdamW with decoupled weight decay and cosine warm-restart schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, NumericsError

__all__ = ["OptimizerState", "adamw_step", "LrSchedule", "cosine_warm_restart_lr"]


@dataclass
class OptimizerState:
    """Moment buffers and hyperparameters for :func:`adamw_step`."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight decay must be non-negative")
        if self.step < 0:
            raise ConfigError("step counter must be non-negative")

    def reset_moments(self) -> None:
        self.m.clear()
        self.v.clear()
        self.step = 0


def adamw_step(params: dict, grads: dict, state: OptimizerState) -> dict:
    """One update over a named parameter set, in place.

    theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
    with bias-corrected moments. Updates are elementwise and sequential, so
    identical inputs give bit-identical results.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient for parameter '{name}'")
        if g.shape != p.shape:
            raise NumericsError(
                f"gradient shape {g.shape} does not match parameter "
                f"'{name}' {p.shape}"
            )
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay:
            update = update + state.weight_decay * p
        p -= state.lr * update
    return params


@dataclass(frozen=True)
class LrSchedule:
    """Cosine annealing with warm restarts.

    Cycle i lasts ``t0 * t_mult**i`` epochs; the learning rate falls from
    ``lr_max`` to ``lr_min`` along a half cosine within each cycle and snaps
    back to ``lr_max`` at every restart.
    """

    lr_max: float = 1e-3
    lr_min: float = 1e-6
    t0: int = 50
    t_mult: int = 2

    def __post_init__(self) -> None:
        if not 0 < self.lr_min <= self.lr_max:
            raise ConfigError("need 0 < lr_min <= lr_max")
        if self.t0 < 1 or self.t_mult < 1:
            raise ConfigError("cycle length and multiplier must be >= 1")


def cosine_warm_restart_lr(schedule: LrSchedule, epoch: int) -> float:
    """Learning rate at an integer epoch (0-based)."""
    if epoch < 0:
        raise ConfigError("epoch must be non-negative")
    t0, mult = schedule.t0, schedule.t_mult
    if mult == 1:
        t_i = t0
        t_cur = epoch % t0
    else:
        # Epoch sits in the cycle where the geometric cumsum first exceeds it.
        t_i = t0
        start = 0
        while epoch >= start + t_i:
            start += t_i
            t_i *= mult
        t_cur = epoch - start
    return schedule.lr_min + 0.5 * (schedule.lr_max - schedule.lr_min) * (
        1.0 + np.cos(np.pi * t_cur / t_i)
    )
