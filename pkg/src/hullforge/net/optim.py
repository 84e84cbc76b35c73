"""Adadelta with exponentially decaying accumulators."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdadeltaState:
    sq_grad: dict = field(default_factory=dict)  # E[g^2]
    sq_delta: dict = field(default_factory=dict)  # E[dx^2]
    steps: int = 0

    @classmethod
    def fresh(cls, params):
        return cls(
            {k: np.zeros_like(v) for k, v in params.items()},
            {k: np.zeros_like(v) for k, v in params.items()},
        )


def adadelta_step(params, grads, state, rho=0.95, eps=1e-6):
    """One in-place Adadelta update; returns ``(params, state)``.

    E[g^2]  <- rho E[g^2] + (1 - rho) g^2
    dx      <- -sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
    E[dx^2] <- rho E[dx^2] + (1 - rho) dx^2
    x       <- x + dx
    """
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not state.sq_grad:
        fresh = AdadeltaState.fresh(params)
        state.sq_grad, state.sq_delta = fresh.sq_grad, fresh.sq_delta
    for name, x in params.items():
        g = grads[name]
        if g.shape != x.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {x.shape}")
        eg = state.sq_grad[name]
        ed = state.sq_delta[name]
        eg *= rho
        eg += (1 - rho) * g * g
        dx = -(np.sqrt(ed + eps) / np.sqrt(eg + eps)) * g
        ed *= rho
        ed += (1 - rho) * dx * dx
        x += dx.astype(x.dtype, copy=False)
    state.steps += 1
    return params, state
