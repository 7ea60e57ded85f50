import numpy as np
import pytest


def blob_volume(L, seed=0, n_blobs=6, spread=0.08, sig_lo=1.5, sig_hi=3.0):
    """Smooth positive test density: a sum of random anisotropic Gaussians."""
    rng = np.random.default_rng(seed)
    ax = np.arange(L) - L / 2
    x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
    pts = np.stack([x, y, z], -1)
    rho = np.zeros((L, L, L))
    for _ in range(n_blobs):
        c = rng.uniform(-spread * L, spread * L, 3)
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        s = rng.uniform(sig_lo, sig_hi, 3)
        cinv = q @ np.diag(1.0 / s**2) @ q.T
        d = pts - c
        rho += rng.uniform(0.5, 1.5) * np.exp(-0.5 * np.einsum("...i,ij,...j->...", d, cinv, d))
    return rho


def rel_err(a, b, eps=1e-30):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), eps)


@pytest.fixture(scope="session")
def small_volume():
    return blob_volume(24, seed=1)
