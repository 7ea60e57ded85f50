"""Data likelihood in the Hartley domain, winner-takes-all selection, noise estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyStack, NonFiniteLoss
from .transforms import (
    centered_indices,
    hartley_2d,
    hartley_shift,
    hartley_shift_gradient,
    pixel_mask,
    point_reflect,
)


@dataclass(frozen=True)
class NoiseModel:
    """White noise level in Hartley-coefficient units."""

    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")


@dataclass
class LossRecord:
    """Per-head losses for one image and the selected winner."""

    losses: np.ndarray
    winner: int

    @property
    def winning_loss(self) -> float:
        return float(self.losses[self.winner])


def nll(slice_h: np.ndarray, t, ctf: np.ndarray, image_h: np.ndarray,
        noise: NoiseModel, mask_radius: float) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of an image given a model slice and pose translation.

    loss = sum over in-mask pixels of (ctf * shift(slice, t) - image)^2,
    normalized by 2 sigma^2 and the mask pixel count.  Returns the loss and
    its exact gradient w.r.t. the unshifted slice (CTF and shift adjoints
    included).
    """
    losses, grads = nll_batch(slice_h[None], np.asarray(t, dtype=float)[None],
                              ctf[None], image_h[None], noise, mask_radius)
    return float(losses[0]), grads[0]


def nll_batch(slices: np.ndarray, ts: np.ndarray, ctfs: np.ndarray, images_h: np.ndarray,
              noise: NoiseModel, mask_radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized nll over a batch; arrays carry a leading batch axis."""
    slices = np.asarray(slices, dtype=float)
    B, L = slices.shape[0], slices.shape[1]
    if slices.shape != ctfs.shape or slices.shape != images_h.shape:
        raise DimensionMismatch("slice, ctf and image grids must share shapes")
    mask, _ = pixel_mask(L, mask_radius)
    npix = int(mask.sum())

    kx, ky = centered_indices(L)
    theta = 2.0 * np.pi * (kx[None] * ts[:, 0, None, None] + ky[None] * ts[:, 1, None, None]) / L
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    reflected = np.roll(np.roll(slices[:, ::-1, ::-1], 1, axis=1), 1, axis=2)
    shifted = cos_t * slices + sin_t * reflected

    resid = (ctfs * shifted - images_h) * mask[None]
    scale = 1.0 / (noise.sigma**2 * npix)
    losses = 0.5 * scale * np.einsum("bxy,bxy->b", resid, resid)

    g_shift = ctfs * resid * scale
    # adjoint of the shift operator is the shift by -t
    g_reflected = np.roll(np.roll(g_shift[:, ::-1, ::-1], 1, axis=1), 1, axis=2)
    grad_slices = cos_t * g_shift - sin_t * g_reflected
    return losses, grad_slices


def translation_gradient(slice_h: np.ndarray, t, ctf: np.ndarray, image_h: np.ndarray,
                         noise: NoiseModel, mask_radius: float) -> np.ndarray:
    """dloss/dt through the Hartley shift adjoint."""
    L = slice_h.shape[0]
    mask, _ = pixel_mask(L, mask_radius)
    npix = int(mask.sum())
    shifted = hartley_shift(slice_h, t)
    resid = (ctf * shifted - image_h) * mask
    upstream = ctf * resid / (noise.sigma**2 * npix)
    return hartley_shift_gradient(slice_h, t, upstream)


def wta_select(losses) -> tuple[float, int]:
    """Minimum loss and its head index; ties break toward the lowest index."""
    losses = np.asarray(losses, dtype=float)
    if losses.size < 1:
        raise NonFiniteLoss("need at least one candidate loss")
    if not np.all(np.isfinite(losses)):
        raise NonFiniteLoss("candidate losses contain non-finite values")
    idx = int(np.argmin(losses))
    return float(losses[idx]), idx


def estimate_sigma(images: np.ndarray, subsample: int = 512) -> NoiseModel:
    """Noise level from the Hartley coefficients outside 0.9 Nyquist.

    White real-space noise keeps its standard deviation under the symmetric
    Hartley normalization, so the high-frequency annulus reads sigma directly.
    """
    images = np.asarray(images, dtype=float)
    if images.ndim != 3 or images.shape[0] == 0:
        raise EmptyStack("need a nonempty (n, L, L) image stack")
    n, L = images.shape[0], images.shape[1]
    kx, ky = centered_indices(L)
    annulus = kx * kx + ky * ky > (0.9 * L / 2) ** 2
    take = min(n, subsample)
    coeffs = np.empty((take, int(annulus.sum())))
    for i in range(take):
        coeffs[i] = hartley_2d(images[i])[annulus]
    return NoiseModel(sigma=float(np.std(coeffs)))
