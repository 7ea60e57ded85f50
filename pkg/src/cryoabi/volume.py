"""Explicit Hartley-space volume stored as mantissa and exponent fields."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch
from .optim import AdamState, adam_step
from .transforms import hartley_3d, slice_consistent_hartley

# exp() stays finite and well inside float range
EXPONENT_CLAMP = 20.0


@dataclass
class MEVolume:
    """L^3 Hartley coefficients parameterized as m * exp(e), with Adam state."""

    m: np.ndarray
    e: np.ndarray
    pixel_size: float
    adam_m: AdamState = field(default=None)
    adam_e: AdamState = field(default=None)

    def __post_init__(self):
        if self.m.shape != self.e.shape or self.m.ndim != 3:
            raise DimensionMismatch("mantissa and exponent grids must be equal 3D shapes")
        if len(set(self.m.shape)) != 1 or self.m.shape[0] % 2:
            raise DimensionMismatch("volume must be cubic with even side")
        if self.adam_m is None:
            self.adam_m = AdamState.like(self.m)
        if self.adam_e is None:
            self.adam_e = AdamState.like(self.e)

    @property
    def L(self) -> int:
        return self.m.shape[0]


def init_volume(L: int, pixel_size: float) -> MEVolume:
    """Zero-initialized volume: the mantissa learns first since dH/dm = 1 there."""
    if L % 2:
        raise DimensionMismatch("side length must be even")
    return MEVolume(m=np.zeros((L, L, L)), e=np.zeros((L, L, L)), pixel_size=float(pixel_size))


def volume_from_density(density: np.ndarray, pixel_size: float) -> MEVolume:
    """Load a real-space density so that central slices match image transforms."""
    h = slice_consistent_hartley(np.asarray(density, dtype=float))
    return MEVolume(m=h, e=np.zeros_like(h), pixel_size=float(pixel_size))


def me_value(vol: MEVolume) -> np.ndarray:
    """Dense Hartley grid m * exp(e)."""
    return vol.m * np.exp(vol.e)


def accumulate_and_step(vol: MEVolume, grads, lr: float) -> MEVolume:
    """Sum a batch of sparse gradients and apply one Adam update to both fields.

    grads is an iterable of (indices, grad_m, grad_e) triples (or dense
    (grad_m, grad_e) pairs); summation happens in the given order so serial
    runs are reproducible.  The exponent field is clamped to +-EXPONENT_CLAMP.
    """
    n = vol.m.size
    dense_m = np.zeros(n)
    dense_e = np.zeros(n)
    for entry in grads:
        if len(entry) == 3:
            idx, gm, ge = entry
            idx = np.asarray(idx).reshape(-1)
            if idx.size and idx.max() >= n:
                raise DimensionMismatch("gradient indices exceed the volume size")
            dense_m += np.bincount(idx, weights=np.asarray(gm, dtype=float).reshape(-1), minlength=n)
            dense_e += np.bincount(idx, weights=np.asarray(ge, dtype=float).reshape(-1), minlength=n)
        else:
            gm, ge = entry
            gm = np.asarray(gm, dtype=float)
            if gm.shape != vol.m.shape:
                raise DimensionMismatch("dense gradient shape differs from the volume")
            dense_m += gm.reshape(-1)
            dense_e += np.asarray(ge, dtype=float).reshape(-1)

    adam_step(vol.m, dense_m.reshape(vol.m.shape), vol.adam_m, lr)
    adam_step(vol.e, dense_e.reshape(vol.e.shape), vol.adam_e, lr)
    np.clip(vol.e, -EXPONENT_CLAMP, EXPONENT_CLAMP, out=vol.e)
    return vol


def to_real_density(vol: MEVolume) -> np.ndarray:
    """Real-space density via the inverse (involutive) Hartley transform."""
    return hartley_3d(me_value(vol))
