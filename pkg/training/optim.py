"""
Adam with bias correction and the cosine annealing schedule.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from core.exceptions import InvalidInputError, ShapeMismatchError
from encoder.network import ModelParams


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params):
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(params, grads, state, t, lr, beta1=0.9, beta2=0.999, eps=1e-8, names=None):
    """
    One Adam update at step t >= 1. Returns new (params, state); inputs are not mutated.

    names restricts the update to a subset of tensors (frozen encoder).
    """
    if t < 1:
        raise InvalidInputError(f"Adam step counter starts at 1, got t={t}")
    selected = set(params.names() if names is None else names)
    new_params = {}
    new_m, new_v = dict(state.m), dict(state.v)
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        if name not in selected:
            new_params[name] = p
            continue
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if g.shape != p.shape or m is None or m.shape != p.shape or v.shape != p.shape:
            raise ShapeMismatchError(f"Adam state or gradient for {name} does not match {p.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        new_params[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[name], new_v[name] = m, v
    return ModelParams(new_params), AdamState(m=new_m, v=new_v)


def cosine_lr(t, total, lr_max, lr_min=0.0):
    """lr_min + (lr_max - lr_min) * (1 + cos(pi * t / total)) / 2 for 0 <= t <= total."""
    if total <= 0:
        raise InvalidInputError(f"schedule length must be positive, got {total}")
    if not 0 <= t <= total:
        raise InvalidInputError(f"schedule position {t} outside [0, {total}]")
    lr = lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / total))
    return min(max(lr, lr_min), lr_max)
