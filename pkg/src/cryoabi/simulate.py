"""Synthetic phantoms and particle stacks: project, modulate by a CTF, add noise."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, optimize

from .dataio import ParticleStack
from .geometry import (geodesic_degrees, rotation_from_axis_angle, rotation_with_view,
                       sample_uniform_rotation, sphere_grid)
from .objective import NoiseModel
from .transforms import CTFParams, FrequencyGrid, centered_indices, ctf_eval, real_projection_oracle


@dataclass
class Phantom:
    """Procedural blob density standing in for a deposited structure."""

    density: np.ndarray
    centers: np.ndarray
    widths: np.ndarray       # per-blob principal standard deviations (pixels)
    amplitudes: np.ndarray
    seed: int

    @property
    def L(self) -> int:
        return self.density.shape[0]


@dataclass
class SimSpec:
    """Synthesis protocol settings."""

    n: int
    L: int
    snr: float
    pixel_size: float = 1.0
    centered: bool = True
    translation_range: float | None = None  # pixels; defaults to L/16 when uncentered
    defocus_min_um: float = 1.0
    defocus_max_um: float = 2.5
    voltage_kv: float = 300.0
    cs_mm: float = 2.7
    amplitude_contrast: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one particle")
        if not self.snr > 0:
            raise ValueError("SNR must be positive")


def _blob_sum(L, centers, covs_inv, amplitudes):
    ax = np.arange(L) - L / 2
    x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
    pts = np.stack([x, y, z], -1)
    rho = np.zeros((L, L, L))
    for c, cinv, a in zip(centers, covs_inv, amplitudes):
        d = pts - c
        rho += a * np.exp(-0.5 * np.einsum("...i,ij,...j->...", d, cinv, d))
    return rho


def _rotate_density(density, rotation):
    L = density.shape[0]
    ax = np.arange(L) - L // 2
    x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
    pts = np.stack([x, y, z], 0).reshape(3, -1)
    src = np.asarray(rotation).T @ pts + L // 2
    return ndimage.map_coordinates(density, src, order=1, mode="constant").reshape(L, L, L)


def rotational_self_similarity(density: np.ndarray, min_angle_deg: float = 15.0,
                               refine: bool = True) -> float:
    """Highest mean-subtracted correlation of the density with a nontrivial rotation of itself.

    Candidates come from sphere-grid level 2 crossed with eight in-plane
    angles, at least min_angle_deg from the identity; the best candidate is
    then polished locally so an exact symmetry rotation (which generally
    falls between grid points) is not missed.
    """
    centered = density - density.mean()
    norm = np.linalg.norm(centered)

    def corr(r):
        rot = _rotate_density(density, r)
        rot = rot - rot.mean()
        return float(np.dot(centered.reshape(-1), rot.reshape(-1))
                     / (norm * np.linalg.norm(rot) + 1e-30))

    grid = sphere_grid(2)
    best, best_r = -1.0, None
    for d in grid.centers:
        for a in np.linspace(0, 2 * np.pi, 8, endpoint=False):
            r = rotation_with_view(d, a)
            if geodesic_degrees(r, np.eye(3)) < min_angle_deg:
                continue
            c = corr(r)
            if c > best:
                best, best_r = c, r
    if not refine:
        return best

    def neg(w):
        r = rotation_from_axis_angle(w) @ best_r
        if geodesic_degrees(r, np.eye(3)) < min_angle_deg:
            return 1.0
        return -corr(r)

    res = optimize.minimize(neg, np.zeros(3), method="Powell",
                            options={"maxfev": 120, "xtol": 1e-3})
    return max(best, float(-res.fun))


def make_phantom(L: int, n_blobs: int, seed: int, spread: float = 0.15,
                 width_lo: float = 0.04, width_hi: float = 0.08,
                 reject_symmetric: bool = True, max_tries: int = 8) -> Phantom:
    """Sum of anisotropic Gaussian blobs with no near-symmetric layout.

    spread bounds blob centers as a fraction of L; widths are principal
    standard deviations in fractions of L.  Layouts whose best nontrivial
    self-alignment correlation reaches 0.8 are rejected and redrawn.
    """
    if n_blobs < 3:
        raise ValueError("need at least three blobs")
    for attempt in range(max_tries):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(attempt,)))
        centers = rng.uniform(-spread * L, spread * L, size=(n_blobs, 3))
        amplitudes = rng.uniform(0.5, 1.5, size=n_blobs)
        covs_inv = []
        widths = np.empty((n_blobs, 3))
        for i in range(n_blobs):
            q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
            s = rng.uniform(width_lo * L, width_hi * L, size=3)
            widths[i] = s
            covs_inv.append(q @ np.diag(1.0 / s**2) @ q.T)
        density = _blob_sum(L, centers, covs_inv, amplitudes)
        if not reject_symmetric or rotational_self_similarity(density) < 0.995:
            return Phantom(density=density, centers=centers, widths=widths,
                           amplitudes=amplitudes, seed=seed)
    raise RuntimeError("could not draw an asymmetric blob layout")


def sigma_for_snr(clean_images: np.ndarray, target_snr: float) -> float:
    """Noise standard deviation that hits the target signal-to-noise ratio.

    SNR is defined as pooled variance of the clean post-CTF images over the
    noise variance.
    """
    clean_images = np.asarray(clean_images, dtype=float)
    if clean_images.size == 0:
        raise ValueError("need at least one clean image")
    return float(np.sqrt(np.var(clean_images) / target_snr))


def synthesize_dataset(phantom: Phantom, spec: SimSpec) -> ParticleStack:
    """Particle stack following the synthetic protocol.

    Per image: Haar-random rotation, real-space projection, optional pixel
    shift, CTF multiplication in the Fourier domain, then white Gaussian
    noise scaled to the target SNR.  Per-image randomness derives from
    (seed, particle index), so generation order never matters.
    """
    L = spec.L
    if phantom.L != L:
        raise ValueError("phantom size differs from the requested image size")
    freqs = FrequencyGrid(L=L, pixel_size=spec.pixel_size)
    kx, ky = centered_indices(L)
    t_range = spec.translation_range if spec.translation_range is not None else L / 16.0

    children = np.random.SeedSequence(spec.seed).spawn(spec.n)
    rotations = np.empty((spec.n, 3, 3))
    translations = np.zeros((spec.n, 2))
    defocus = np.empty(spec.n)
    clean = np.empty((spec.n, L, L), dtype=np.float32)
    noise_rngs = []
    for i in range(spec.n):
        par_seq, noise_seq = children[i].spawn(2)
        rng = np.random.default_rng(par_seq)
        noise_rngs.append(np.random.default_rng(noise_seq))
        rotations[i] = sample_uniform_rotation(rng)
        defocus[i] = rng.uniform(spec.defocus_min_um, spec.defocus_max_um) * 1e4
        if not spec.centered:
            translations[i] = rng.uniform(-t_range, t_range, size=2)

        proj = real_projection_oracle(phantom.density, rotations[i])
        f = np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(proj)))
        if not spec.centered:
            phase = np.exp(-2j * np.pi * (kx * translations[i, 0] + ky * translations[i, 1]) / L)
            f = f * phase
        ctf = ctf_eval(freqs, CTFParams(defocus_a=defocus[i], voltage_kv=spec.voltage_kv,
                                        cs_mm=spec.cs_mm,
                                        amplitude_contrast=spec.amplitude_contrast))
        clean[i] = np.fft.ifftshift(np.fft.ifft2(np.fft.fftshift(f * ctf))).real

    sigma = sigma_for_snr(clean, spec.snr)
    images = np.empty((spec.n, L, L), dtype=np.float32)
    for i in range(spec.n):
        images[i] = (clean[i] + sigma * noise_rngs[i].standard_normal((L, L))).astype(np.float32)

    return ParticleStack(
        images=images.astype(np.float64),
        pixel_size=spec.pixel_size,
        defocus=defocus,
        voltage_kv=np.full(spec.n, spec.voltage_kv),
        cs_mm=np.full(spec.n, spec.cs_mm),
        amplitude_contrast=np.full(spec.n, spec.amplitude_contrast),
        gt_rotations=rotations,
        gt_translations=translations,
        sigma_noise=sigma,
    )
