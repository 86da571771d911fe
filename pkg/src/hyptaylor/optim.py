"""Adam and an exp-map update variant for ball-valued parameters."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .core import PtseConfig
from .errors import NumericalError
from .gyro import exp_map_ptse

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class OptState:
    """First and second moments per parameter plus the shared step counter."""

    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def zeros(cls, params) -> "OptState":
        return cls(0, [np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def _check_grads(grads):
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient")


def adam_direction(grads, state: OptState, lr: float) -> list[np.ndarray]:
    """Advance the moments in ``state`` and return the bias-corrected step ``u``."""
    _check_grads(grads)
    state.step += 1
    t = state.step
    c1 = 1.0 - BETA1**t
    c2 = 1.0 - BETA2**t
    out = []
    for k, g in enumerate(grads):
        state.m[k] = BETA1 * state.m[k] + (1.0 - BETA1) * g
        state.v[k] = BETA2 * state.v[k] + (1.0 - BETA2) * g * g
        out.append(-lr * (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + EPS))
    return out


def adam_step(params: list[Tensor], grads, state: OptState, lr: float):
    """Standard bias-corrected Adam; parameters are updated in place."""
    for p, u in zip(params, adam_direction(grads, state, lr)):
        p.data += u
    return params, state


def radam_lite_step(params: list[Tensor], grads, state: OptState, lr: float, c: float = 1.0, manifold=None, n: int = 3):
    """Adam direction applied through the series exponential map.

    Parameters flagged in ``manifold`` are moved as ``p <- exp_p(u)`` row by
    row; all others take the plain Adam step.
    """
    manifold = [True] * len(params) if manifold is None else manifold
    cfg = PtseConfig(n=n, c=c)
    for p, u, on_ball in zip(params, adam_direction(grads, state, lr), manifold):
        if on_ball and np.any(u):
            p.data = exp_map_ptse(p.data, u, cfg)
        else:
            p.data += u
    return params, state
