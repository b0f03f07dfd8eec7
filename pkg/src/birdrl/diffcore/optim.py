"""Adam and global-norm gradient clipping over name -> array mappings."""

from dataclasses import dataclass, field

import numpy as np


class DivergenceError(FloatingPointError):
    """A loss or gradient became non-finite."""


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(a) for k, a in params.items()},
                   {k: np.zeros_like(a) for k, a in params.items()}, 0)


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradient_norm(grads, max_norm):
    """Scale every gradient by ``max_norm / norm`` when the global L2 norm exceeds it."""
    if not max_norm > 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {k!r}")
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads)
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    if not lr > 0:
        raise ValueError(f"lr must be positive, got {lr}")
    t = state.step + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {k!r}")
        m = beta1 * state.m[k] + (1.0 - beta1) * g
        v = beta2 * state.v[k] + (1.0 - beta2) * (g * g)
        new_params[k] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[k] = m
        new_v[k] = v
    return new_params, OptimizerState(new_m, new_v, t)
