"""Gradients of scene objectives with respect to per-person parameters.

The flattened parameter layout is, per person and in this order:
theta (72 axis-angle values), beta (10 shape coefficients), then the
camera triple (f_c, t_x, t_y) -- 85 values per person, concatenated by
person index.

Gradients are exact reverse-mode derivatives obtained from torch
autograd; check_gradient provides the independent central
finite-difference route.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .body import K_JOINTS, N_SHAPE, POSE_DIM
from .errors import EvaluationError

PER_PERSON = POSE_DIM + N_SHAPE + 3  # 85

# Tiny tensors; a single thread is faster and keeps runs bitwise
# reproducible regardless of the host's core count.
torch.set_num_threads(1)


@dataclass
class GradReport:
    gradient: np.ndarray
    value: float
    max_abs: float
    evaluations: int


def pack_person(theta: np.ndarray, beta: np.ndarray, f_c: float,
                t_x: float, t_y: float) -> np.ndarray:
    return np.concatenate([np.asarray(theta, dtype=np.float64).reshape(-1),
                           np.asarray(beta, dtype=np.float64).reshape(-1),
                           [f_c, t_x, t_y]])


def unpack(x: torch.Tensor, n_persons: int):
    """Splits (..., 85*N) into theta (..., N, K, 3), beta (..., N, S),
    cam (..., N, 3)."""
    per = x.reshape(*x.shape[:-1], n_persons, PER_PERSON)
    theta = per[..., :POSE_DIM].reshape(*per.shape[:-1], K_JOINTS, 3)
    beta = per[..., POSE_DIM:POSE_DIM + N_SHAPE]
    cam = per[..., POSE_DIM + N_SHAPE:]
    return theta, beta, cam


def gradient(objective, x: np.ndarray) -> GradReport:
    """Reverse-mode gradient of a scalar objective at x.

    objective maps a torch tensor (..., D) to a (...,) tensor; here it
    is evaluated on a single parameter vector.
    """
    xt = torch.from_numpy(np.asarray(x, dtype=np.float64)).clone()
    xt.requires_grad_(True)
    y = objective(xt)
    if y.dim() != 0:
        y = y.reshape(())
    if not torch.isfinite(y):
        raise EvaluationError("objective value is not finite")
    (g,) = torch.autograd.grad(y, xt)
    gnp = g.detach().numpy()
    if not np.all(np.isfinite(gnp)):
        bad = int(np.flatnonzero(~np.isfinite(gnp))[0])
        raise EvaluationError(
            "non-finite gradient component %d (person %d)"
            % (bad, bad // PER_PERSON))
    return GradReport(gradient=gnp, value=float(y.detach()),
                      max_abs=float(np.abs(gnp).max()), evaluations=1)


def value_and_grad(objective):
    """Adapts an objective to the (value, gradient) callable the
    optimizer consumes."""
    def fn(x: np.ndarray):
        rep = gradient(objective, x)
        return rep.value, rep.gradient
    return fn


def _fd_values(objective, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Objective at x +/- h*e_i for all i; returns (2, D)."""
    d = x.size
    pts = np.repeat(x[None, :], 2 * d, axis=0)
    idx = np.arange(d)
    pts[idx, idx] += h
    pts[d + idx, idx] -= h
    xt = torch.from_numpy(pts)
    try:
        vals = objective(xt)
        if vals.shape != (2 * d,):
            raise ValueError
        out = vals.detach().numpy()
    except Exception:
        # objective does not support batching; evaluate one by one
        out = np.array([float(objective(torch.from_numpy(p)))
                        for p in pts])
    return out.reshape(2, d)


def check_gradient(objective, x: np.ndarray, h: float | None = None) -> float:
    """Max relative error between autograd and central differences.

    Per-coordinate step defaults to 1e-5 * max(1, |x_i|); the relative
    error denominator is max(|a|, |b|, 1e-8).
    """
    x = np.asarray(x, dtype=np.float64)
    rep = gradient(objective, x)
    steps = (np.full_like(x, h) if h is not None
             else 1e-5 * np.maximum(1.0, np.abs(x)))
    plus, minus = _fd_values(objective, x, steps)
    fd = (plus - minus) / (2.0 * steps)
    denom = np.maximum(np.maximum(np.abs(rep.gradient), np.abs(fd)), 1e-8)
    return float(np.max(np.abs(rep.gradient - fd) / denom))
