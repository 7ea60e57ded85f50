"""Plain Adam with bias correction, shared by volume, encoder and pose updates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, shape) -> "AdamState":
        return cls(m=np.zeros(shape), v=np.zeros(shape), t=0)

    @classmethod
    def like(cls, param: np.ndarray) -> "AdamState":
        return cls.zeros(np.asarray(param).shape)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float) -> np.ndarray:
    """One in-place Adam update; returns the updated parameter block."""
    if param.shape != grad.shape or param.shape != state.m.shape:
        raise DimensionMismatch("parameter, gradient and state shapes differ")
    state.t += 1
    state.m *= BETA1
    state.m += (1.0 - BETA1) * grad
    state.v *= BETA2
    state.v += (1.0 - BETA2) * grad * grad
    mh = state.m / (1.0 - BETA1 ** state.t)
    vh = state.v / (1.0 - BETA2 ** state.t)
    param -= lr * mh / (np.sqrt(vh) + EPS)
    return param
