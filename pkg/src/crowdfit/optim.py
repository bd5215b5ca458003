"""AdamW with decoupled weight decay and a cosine-annealed learning rate.

The optimizer operates on flat float64 numpy vectors; a step is a pure
state update, so runs are bitwise deterministic for fixed inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NonFiniteGradientError


@dataclass
class AdamWConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    lr_max: float = 1e-5
    lr_min: float = 0.0
    total_steps: int = 260

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigurationError("betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ConfigurationError("eps must be positive")
        if self.total_steps < 0:
            raise ConfigurationError("total_steps must be >= 0")


@dataclass
class AdamWState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamWState":
        return cls(m=np.zeros(n), v=np.zeros(n), step=0)


def adamw_step(state: AdamWState, params: np.ndarray, grad: np.ndarray,
               lr: float, config: AdamWConfig):
    """One AdamW update; returns (new_params, new_state).

    Refuses the step (raises NonFiniteGradientError) if the gradient
    contains non-finite values, leaving state untouched.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape:
        raise ConfigurationError("gradient/parameter length mismatch")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradientError("gradient contains non-finite values")
    b1, b2 = config.beta1, config.beta2
    m = b1 * state.m + (1.0 - b1) * grad
    v = b2 * state.v + (1.0 - b2) * grad * grad
    step = state.step + 1
    m_hat = m / (1.0 - b1 ** step)
    v_hat = v / (1.0 - b2 ** step)
    update = m_hat / (np.sqrt(v_hat) + config.eps)
    new_params = params - lr * (update + config.weight_decay * params)
    return new_params, AdamWState(m=m, v=v, step=step)


def cosine_lr(config: AdamWConfig, step: int) -> float:
    """Half-cosine decay from lr_max at step 0 to lr_min at total_steps."""
    t = config.total_steps
    if t == 0 or step >= t:
        return config.lr_min
    return config.lr_min + 0.5 * (config.lr_max - config.lr_min) * (
        1.0 + math.cos(math.pi * step / t))


@dataclass
class TraceEntry:
    step: int
    lr: float
    objective: float


@dataclass
class MinimizeResult:
    x: np.ndarray                 # last iterate
    best_x: np.ndarray            # iterate with the lowest objective
    best_f: float
    trajectory: list = field(default_factory=list)
    error: Exception | None = None


def minimize(value_and_grad, x0: np.ndarray, config: AdamWConfig,
             callback=None) -> MinimizeResult:
    """Runs total_steps of AdamW with the cosine schedule.

    value_and_grad maps a parameter vector to (objective, gradient).
    The trajectory records (step, lr, objective) for every evaluation,
    including a final evaluation after the last update. On an
    evaluation or step error the best iterate so far is returned
    together with the error.
    """
    x = np.array(x0, dtype=np.float64)
    state = AdamWState.zeros(x.size)
    trajectory: list[TraceEntry] = []
    best_x, best_f = x.copy(), math.inf

    def record(step, lr, f, xcur):
        nonlocal best_x, best_f
        trajectory.append(TraceEntry(step=step, lr=lr, objective=f))
        if f < best_f:
            best_f, best_x = f, xcur.copy()

    try:
        for step in range(config.total_steps):
            lr = cosine_lr(config, step)
            f, g = value_and_grad(x)
            record(step, lr, float(f), x)
            x, state = adamw_step(state, x, g, lr, config)
            if callback is not None:
                callback(step, x)
        f_final, _ = value_and_grad(x)
        record(config.total_steps, cosine_lr(config, config.total_steps),
               float(f_final), x)
    except Exception as exc:  # noqa: BLE001 - reported to the caller
        return MinimizeResult(x=best_x, best_x=best_x, best_f=best_f,
                              trajectory=trajectory, error=exc)
    return MinimizeResult(x=x, best_x=best_x, best_f=best_f,
                          trajectory=trajectory)
