"""RMSprop and the step-decay learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal

import numpy as np

from .errors import ConfigError, NumericError, OptimizerStateError


@dataclass
class RMSpropState:
    squared_grad_avg: dict = field(default_factory=dict)
    decay: float = 0.95
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict, decay: float = 0.95, eps: float = 1e-8) -> "RMSpropState":
        return cls({name: np.zeros_like(p.data) for name, p in params.items()}, decay, eps)


def rmsprop_step(params: dict, grads: dict, state: RMSpropState, lr: float) -> None:
    """In-place update ``v = rho*v + (1-rho)*g^2``, ``theta -= lr*g/(sqrt(v)+eps)``.

    All gradients are checked before anything is written, so a NaN aborts the
    whole step.
    """
    keys = set(params)
    if keys != set(grads) or keys != set(state.squared_grad_avg):
        odd = (keys ^ set(grads)) | (keys ^ set(state.squared_grad_avg))
        raise OptimizerStateError(f"params, grads and optimizer state disagree on keys: {sorted(odd)}")
    if not lr >= 0:
        raise ConfigError(f"learning rate must be non-negative, got {lr}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")

    rho = state.decay
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=p.dtype)
        v = state.squared_grad_avg[name]
        v *= rho
        v += (1.0 - rho) * g * g
        if lr == 0:
            continue
        p.data -= (lr * g / (np.sqrt(v) + state.eps)).astype(p.dtype)


@dataclass(frozen=True)
class LrSchedule:
    initial_lr: float = 1e-4
    drop_factor: float = 0.4
    drop_period_epochs: int = 10

    def __post_init__(self):
        if not 0 < self.drop_factor < 1:
            raise ConfigError(f"drop_factor must lie in (0, 1), got {self.drop_factor}")
        if self.drop_period_epochs < 1:
            raise ConfigError(f"drop_period_epochs must be >= 1, got {self.drop_period_epochs}")
        if not self.initial_lr > 0:
            raise ConfigError(f"initial_lr must be positive, got {self.initial_lr}")


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    """``initial_lr * drop_factor ** (epoch // period)``.

    Evaluated in decimal on the shortest repr of each hyperparameter, then
    rounded once, so 1e-4 * 0.4**2 comes out as 1.6e-05 rather than
    1.6000000000000003e-05.
    """
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    drops = epoch // schedule.drop_period_epochs
    value = Decimal(repr(float(schedule.initial_lr))) * Decimal(repr(float(schedule.drop_factor))) ** drops
    return float(value)
