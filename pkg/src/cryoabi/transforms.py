"""Hartley/Fourier transforms, central-slice extraction with gradients, shifts and CTF."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatch, StaleCache
from .geometry import axis_angle_jacobian

# interpolation corner offsets, z fastest
_CORNERS = np.array([(bx, by, bz) for bx in (0, 1) for by in (0, 1) for bz in (0, 1)])


def _centered_fftn(x: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.fftn(np.fft.ifftshift(x)))


def hartley_2d(image: np.ndarray) -> np.ndarray:
    """Discrete Hartley transform, centered layout, symmetric normalization.

    Involutive: applying it twice returns the input.  The spatial origin and
    the DC frequency both sit at index L/2.
    """
    image = np.asarray(image, dtype=float)
    if image.ndim != 2 or image.shape[0] != image.shape[1] or image.shape[0] % 2:
        raise DimensionMismatch("expected a square image with even side")
    f = _centered_fftn(image)
    return (f.real - f.imag) / np.sqrt(image.size)


def hartley_3d(vol: np.ndarray) -> np.ndarray:
    """3D analogue of hartley_2d."""
    vol = np.asarray(vol, dtype=float)
    if vol.ndim != 3 or len(set(vol.shape)) != 1 or vol.shape[0] % 2:
        raise DimensionMismatch("expected a cubic volume with even side")
    f = _centered_fftn(vol)
    return (f.real - f.imag) / np.sqrt(vol.size)


def fourier_pair_from_hartley(h_pos, h_neg):
    """Complex Fourier coefficient (re, im) from the Hartley values at k and -k."""
    h_pos = np.asarray(h_pos, dtype=float)
    h_neg = np.asarray(h_neg, dtype=float)
    return (h_pos + h_neg) / 2.0, (h_neg - h_pos) / 2.0


def point_reflect(grid: np.ndarray) -> np.ndarray:
    """Values at -k for every centered frequency k (Nyquist rows alias to themselves)."""
    out = grid[::-1, ::-1]
    return np.roll(np.roll(out, 1, axis=0), 1, axis=1)


_FREQ_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def centered_indices(L: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer frequency index grids kx, ky with DC at index L/2."""
    if L not in _FREQ_CACHE:
        ax = np.arange(L) - L // 2
        kx, ky = np.meshgrid(ax, ax, indexing="ij")
        _FREQ_CACHE[L] = (kx, ky)
    return _FREQ_CACHE[L]


@dataclass(frozen=True)
class FrequencyGrid:
    """Centered integer indices and the physical frequencies they carry."""

    L: int
    pixel_size: float

    @property
    def kx(self) -> np.ndarray:
        return centered_indices(self.L)[0]

    @property
    def ky(self) -> np.ndarray:
        return centered_indices(self.L)[1]

    @property
    def s2(self) -> np.ndarray:
        """Squared physical frequency in 1/Angstrom^2."""
        kx, ky = centered_indices(self.L)
        return (kx.astype(float) ** 2 + ky.astype(float) ** 2) / (self.L * self.pixel_size) ** 2


def hartley_shift(grid: np.ndarray, t) -> np.ndarray:
    """Translate by t (pixels) in the Hartley domain.

    Equivalent to the Fourier phase shift; exact for integer t against a
    circular shift of the underlying image.
    """
    grid = np.asarray(grid, dtype=float)
    L = grid.shape[0]
    tx, ty = float(t[0]), float(t[1])
    if tx == 0.0 and ty == 0.0:
        return grid.copy()
    kx, ky = centered_indices(L)
    theta = 2.0 * np.pi * (kx * tx + ky * ty) / L
    return np.cos(theta) * grid + np.sin(theta) * point_reflect(grid)


def hartley_shift_gradient(grid: np.ndarray, t, upstream: np.ndarray) -> np.ndarray:
    """d<upstream, shifted>/dt for the Hartley-domain translation."""
    grid = np.asarray(grid, dtype=float)
    L = grid.shape[0]
    kx, ky = centered_indices(L)
    theta = 2.0 * np.pi * (kx * float(t[0]) + ky * float(t[1])) / L
    common = upstream * (-np.sin(theta) * grid + np.cos(theta) * point_reflect(grid))
    scale = 2.0 * np.pi / L
    return np.array([np.sum(common * kx) * scale, np.sum(common * ky) * scale])


# ---------------------------------------------------------------------------
# CTF
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CTFParams:
    """Two-parameter weak-phase contrast transfer function settings."""

    defocus_a: float
    voltage_kv: float = 300.0
    cs_mm: float = 2.7
    amplitude_contrast: float = 0.1

    def __post_init__(self):
        if self.defocus_a <= 0:
            raise ValueError("defocus must be positive")
        if not 0.0 <= self.amplitude_contrast <= 1.0:
            raise ValueError("amplitude contrast must lie in [0, 1]")


def electron_wavelength(voltage_kv: float) -> float:
    """Relativistic electron wavelength in Angstrom."""
    v = voltage_kv * 1e3
    return 12.2643247 / np.sqrt(v * (1.0 + v * 0.978466e-6))


def ctf_phase(s2, params: CTFParams):
    """Aberration phase gamma as a function of squared frequency."""
    lam = electron_wavelength(params.voltage_kv)
    cs = params.cs_mm * 1e7
    return np.pi * lam * params.defocus_a * s2 - 0.5 * np.pi * cs * lam**3 * s2 * s2


def ctf_eval(freqs: FrequencyGrid, params: CTFParams) -> np.ndarray:
    """CTF values on the full frequency grid."""
    gamma = ctf_phase(freqs.s2, params)
    alpha = params.amplitude_contrast
    return -np.sqrt(1.0 - alpha * alpha) * np.sin(gamma) - alpha * np.cos(gamma)


# ---------------------------------------------------------------------------
# Central-slice extraction and its adjoints
# ---------------------------------------------------------------------------

_PIXEL_CACHE: dict[tuple[int, float], tuple[np.ndarray, np.ndarray]] = {}


def pixel_mask(L: int, mask_radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Boolean in-mask grid and the (P, 3) integer frequency vectors inside it."""
    key = (L, float(mask_radius))
    if key not in _PIXEL_CACHE:
        kx, ky = centered_indices(L)
        mask = kx * kx + ky * ky <= mask_radius * mask_radius
        k = np.stack([kx[mask], ky[mask], np.zeros(int(mask.sum()))], axis=1).astype(float)
        _PIXEL_CACHE[key] = (mask, k)
    return _PIXEL_CACHE[key]


@dataclass
class SliceCache:
    """Interpolation record reused by the backward passes.

    Arrays carry a leading batch axis; single-rotation callers use batch 1.
    """

    L: int
    mask_radius: float
    mask: np.ndarray
    k: np.ndarray            # (P, 3) integer frequencies with k_z = 0
    rotations: np.ndarray    # (B, 3, 3)
    coords: np.ndarray       # (B, P, 3) sample positions in volume index space
    corner_flat: np.ndarray  # (B, P, 8) flattened voxel indices
    weights: np.ndarray      # (B, P, 8) trilinear weights
    frac: np.ndarray         # (B, P, 3)
    valid: np.ndarray        # (B, P) inside-volume flags

    @property
    def batch(self) -> int:
        return self.rotations.shape[0]


def _build_cache(L: int, rotations: np.ndarray, mask_radius: float) -> SliceCache:
    mask, k = pixel_mask(L, mask_radius)
    coords = np.einsum("pa,bac->bpc", k, rotations)  # rows R^T k
    idx = coords + L // 2
    valid = np.all((idx >= 0.0) & (idx <= L - 1.0), axis=2)
    base = np.clip(np.floor(idx), 0, L - 2).astype(np.int64)
    frac = idx - base
    corner = base[:, :, None, :] + _CORNERS[None, None, :, :]
    corner_flat = (corner[..., 0] * L + corner[..., 1]) * L + corner[..., 2]
    w = np.ones(frac.shape[:2] + (8,))
    for axis in range(3):
        f = frac[:, :, axis]
        hi = _CORNERS[:, axis].astype(bool)
        w[:, :, hi] *= f[:, :, None]
        w[:, :, ~hi] *= (1.0 - f)[:, :, None]
    w *= valid[:, :, None]
    return SliceCache(L=L, mask_radius=float(mask_radius), mask=mask, k=k,
                      rotations=rotations, coords=coords, corner_flat=corner_flat,
                      weights=w, frac=frac, valid=valid)


def extract_slices(vol_h: np.ndarray, rotations: np.ndarray, mask_radius: float,
                   cache: SliceCache | None = None) -> tuple[np.ndarray, SliceCache]:
    """Central slices of a 3D Hartley grid for a batch of rotations.

    Each in-mask pixel k is the trilinear interpolation of the volume at
    R^T (k_x, k_y, 0); pixels outside the mask are zero.
    """
    vol_h = np.asarray(vol_h, dtype=float)
    L = vol_h.shape[0]
    rotations = np.asarray(rotations, dtype=float).reshape(-1, 3, 3)
    if cache is None:
        cache = _build_cache(L, rotations, mask_radius)
    elif cache.L != L:
        raise StaleCache("cache was built for a different volume size")
    corner_vals = vol_h.reshape(-1)[cache.corner_flat]
    vals = np.einsum("bpc,bpc->bp", corner_vals, cache.weights)
    out = np.zeros((cache.batch, L, L))
    out[:, cache.mask] = vals
    return out, cache


def extract_slice(vol_h: np.ndarray, rotation: np.ndarray, mask_radius: float
                  ) -> tuple[np.ndarray, SliceCache]:
    """Single-rotation convenience wrapper around extract_slices."""
    slices, cache = extract_slices(vol_h, np.asarray(rotation)[None], mask_radius)
    return slices[0], cache


@dataclass
class SliceGradients:
    """Sparse volume gradients plus per-pixel coordinate gradients."""

    indices: np.ndarray      # (B, P, 8) flattened voxel indices
    grad_m: np.ndarray       # (B, P, 8) matching mantissa gradients
    grad_e: np.ndarray       # (B, P, 8) matching exponent gradients
    grad_coords: np.ndarray  # (B, P, 3)


def slice_backprop(grad_slices: np.ndarray, cache: SliceCache, vol) -> SliceGradients:
    """Chain rule through trilinear interpolation and the mantissa/exponent fields.

    vol must expose `m` and `e` arrays of the cached volume size.  Gradients
    w.r.t. the fields ride on the interpolation weights; grad_coords is the
    spatial derivative of the interpolant times the upstream signal.
    """
    m = np.asarray(vol.m, dtype=float)
    e = np.asarray(vol.e, dtype=float)
    if m.shape != (cache.L,) * 3 or e.shape != m.shape:
        raise StaleCache("volume dimensions do not match the slice cache")
    grad_slices = np.asarray(grad_slices, dtype=float)
    if grad_slices.ndim == 2:
        grad_slices = grad_slices[None]
    g = grad_slices[:, cache.mask]  # (B, P)

    idx = cache.corner_flat
    m_c = m.reshape(-1)[idx]
    exp_e_c = np.exp(e.reshape(-1)[idx])
    h_c = m_c * exp_e_c

    gw = g[:, :, None] * cache.weights
    grad_m = gw * exp_e_c
    grad_e = gw * h_c

    # derivative of the interpolant w.r.t. the continuous sample position
    v = (h_c * cache.valid[:, :, None]).reshape(*h_c.shape[:2], 2, 2, 2)
    f = cache.frac
    wx = np.stack([1.0 - f[..., 0], f[..., 0]], axis=-1)
    wy = np.stack([1.0 - f[..., 1], f[..., 1]], axis=-1)
    wz = np.stack([1.0 - f[..., 2], f[..., 2]], axis=-1)
    dx = np.einsum("bpjk,bpj,bpk->bp", v[:, :, 1] - v[:, :, 0], wy, wz)
    dy = np.einsum("bpik,bpi,bpk->bp", v[:, :, :, 1] - v[:, :, :, 0], wx, wz)
    dz = np.einsum("bpij,bpi,bpj->bp", v[:, :, :, :, 1] - v[:, :, :, :, 0], wx, wy)
    grad_coords = np.stack([dx, dy, dz], axis=-1) * g[:, :, None] * cache.valid[:, :, None]
    return SliceGradients(indices=idx, grad_m=grad_m, grad_e=grad_e, grad_coords=grad_coords)


def rotation_gradient(cache: SliceCache, grad_coords: np.ndarray) -> np.ndarray:
    """dL/dR for each rotation in the cache, from slice coordinate gradients."""
    return np.einsum("pa,bpc->bac", cache.k, grad_coords)


def pose_gradient(grad_coords: np.ndarray, r_current: np.ndarray, k: np.ndarray,
                  omega: np.ndarray | None = None) -> np.ndarray:
    """Gradient of the loss w.r.t. the axis-angle increment of R <- R_delta(omega) R.

    grad_coords are per-pixel gradients under coords = (R_delta R)^T k; the
    default omega is the zero vector used by every refinement step.
    """
    grad_coords = np.asarray(grad_coords, dtype=float)
    single = grad_coords.ndim == 2
    if single:
        grad_coords = grad_coords[None]
    r_current = np.asarray(r_current, dtype=float).reshape(-1, 3, 3)
    blocks = axis_angle_jacobian(np.zeros(3) if omega is None else omega)
    u = np.einsum("bac,bpc->bpa", r_current, grad_coords)
    out = np.einsum("bpi,icj,pc->bj", u, blocks, k)
    return out[0] if single else out


def real_projection_oracle(vol_real: np.ndarray, rotation: np.ndarray) -> np.ndarray:
    """Rotate a density by R (trilinear resampling) and integrate along z.

    Reference path for the slice theorem; also drives the simulator.
    """
    vol_real = np.asarray(vol_real, dtype=float)
    L = vol_real.shape[0]
    ax = np.arange(L) - L // 2
    x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
    pts = np.stack([x, y, z], axis=0).reshape(3, -1)
    src = np.asarray(rotation).T @ pts + L // 2
    rot = ndimage.map_coordinates(vol_real, src, order=1, mode="constant").reshape(L, L, L)
    return rot.sum(axis=2)


def slice_consistent_hartley(vol_real: np.ndarray) -> np.ndarray:
    """3D Hartley grid whose central slices equal hartley_2d of the projections.

    The 2D and 3D symmetric normalizations differ by sqrt(L), so a ground
    truth volume must carry that factor before it can be compared against
    image transforms.
    """
    L = vol_real.shape[0]
    return np.sqrt(L) * hartley_3d(vol_real)
