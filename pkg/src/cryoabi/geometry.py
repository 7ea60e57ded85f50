"""Rotation representations, stabilized derivatives, sphere grids and global pose alignment."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, EmptyInput, OutOfHemisphere

# Rodrigues scalars switch to series expansions below this angle.
SMALL_ANGLE = 1e-4
_PARALLEL_TOL = 1e-6

# Conjugating a rotation by this reflection converts between the two hands
# of a reconstruction that share all projections.
MIRROR = np.diag([1.0, 1.0, -1.0])


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix of a 3-vector."""
    v = np.asarray(v, dtype=float).reshape(3)
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def is_rotation(r: np.ndarray, tol: float = 1e-6) -> bool:
    """True when r is orthonormal with determinant +1 within tol."""
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        return False
    ortho = np.max(np.abs(r.T @ r - np.eye(3)))
    return bool(ortho <= tol and abs(np.linalg.det(r) - 1.0) <= tol)


def rotation_from_s2s2(p: np.ndarray) -> np.ndarray:
    """Map a raw 6-vector onto SO(3).

    The two 3-subvectors are normalized, crossed into a unit normal, and the
    middle column is recomputed so the result is exactly orthonormal.  Scaling
    either half by a positive factor leaves the output unchanged.
    """
    p = np.asarray(p, dtype=float).reshape(6)
    a, b = p[:3], p[3:]
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        raise DegenerateInput("six-vector half has near-zero norm")
    v1 = a / na
    v2 = b / nb
    c = np.cross(v1, v2)
    nc = np.linalg.norm(c)
    if nc < _PARALLEL_TOL:
        raise DegenerateInput("six-vector halves are parallel")
    v3 = c / nc
    w = np.cross(v3, v1)
    return np.stack([v1, w, v3], axis=1)


def rotation_from_s2s2_vjp(p: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of rotation_from_s2s2.

    upstream is dL/dR (3x3, column layout matching the forward output);
    returns dL/dp (6,).
    """
    p = np.asarray(p, dtype=float).reshape(6)
    g = np.asarray(upstream, dtype=float).reshape(3, 3)
    a, b = p[:3], p[3:]
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    v1 = a / na
    v2 = b / nb
    c = np.cross(v1, v2)
    nc = np.linalg.norm(c)
    v3 = c / nc

    g_v1 = g[:, 0].copy()
    g_w = g[:, 1]
    g_v3 = g[:, 2].copy()
    # w = v3 x v1
    g_v3 += skew(v1) @ g_w
    g_v1 += -skew(v3) @ g_w
    # v3 = c / |c|
    g_c = (np.eye(3) - np.outer(v3, v3)) @ g_v3 / nc
    # c = v1 x v2
    g_v1 += skew(v2) @ g_c
    g_v2 = -skew(v1) @ g_c
    # v1 = a / |a|, v2 = b / |b|
    g_a = (np.eye(3) - np.outer(v1, v1)) @ g_v1 / na
    g_b = (np.eye(3) - np.outer(v2, v2)) @ g_v2 / nb
    return np.concatenate([g_a, g_b])


def _rodrigues_coeffs(theta: float) -> tuple[float, float]:
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0
    return np.sin(theta) / theta, (1.0 - np.cos(theta)) / (theta * theta)


def rotation_from_axis_angle(w: np.ndarray) -> np.ndarray:
    """Rodrigues map with a series branch near zero angle."""
    w = np.asarray(w, dtype=float).reshape(3)
    theta = float(np.linalg.norm(w))
    a, b = _rodrigues_coeffs(theta)
    k = skew(w)
    return np.eye(3) + a * k + b * (k @ k)


def axis_angle_jacobian(w: np.ndarray) -> np.ndarray:
    """Derivative blocks of the Rodrigues map.

    Returns an array of shape (3, 3, 3) where block [i] is dR[:, i]/dw.  The
    four trigonometric scalars are replaced by fourth-order series below
    SMALL_ANGLE so the zero-angle limit -skew(e_i) is reached without a 0/0.
    """
    w = np.asarray(w, dtype=float).reshape(3)
    theta = float(np.linalg.norm(w))
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        c = -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0
        d = -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0
    else:
        s, co = np.sin(theta), np.cos(theta)
        a = s / theta
        b = (1.0 - co) / theta**2
        c = (2.0 * co - 2.0 + theta * s) / theta**4
        d = (theta * co - s) / theta**3
    eye = np.eye(3)
    ww = np.outer(w, w)
    blocks = np.empty((3, 3, 3))
    for i in range(3):
        e = eye[i]
        we = float(w @ e)
        blocks[i] = (
            -(np.outer(e, w) + skew(e)) * a
            + (we * eye + np.outer(w, e)) * b
            + ww * (we * c)
            + np.outer(np.cross(w, e), w) * d
        )
    return blocks


def geodesic_degrees(a: np.ndarray, b: np.ndarray) -> float:
    """Angle of the relative rotation a^T b, in degrees within [0, 180]."""
    t = float(np.trace(np.asarray(a).T @ np.asarray(b)))
    return float(np.degrees(np.arccos(np.clip((t - 1.0) / 2.0, -1.0, 1.0))))


def geodesic_degrees_many(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorized geodesic angle between stacks of rotations (n,3,3)."""
    t = np.einsum("nab,nab->n", np.asarray(a, float), np.asarray(b, float))
    return np.degrees(np.arccos(np.clip((t - 1.0) / 2.0, -1.0, 1.0)))


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def sample_uniform_rotation(rng: np.random.Generator) -> np.ndarray:
    """One Haar-uniform rotation drawn from the caller's generator."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return quaternion_to_matrix(q)


def rotation_about_z(angle: float) -> np.ndarray:
    ca, sa = np.cos(angle), np.sin(angle)
    return np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])


def viewing_direction(r: np.ndarray) -> np.ndarray:
    """Direction in the volume frame that projects onto the optical axis: R^T e_z."""
    return np.asarray(r, dtype=float)[2, :].copy()


def direction_frame(d: np.ndarray) -> np.ndarray:
    """Right-handed orthonormal basis whose third column is the unit vector d."""
    d = np.asarray(d, dtype=float).reshape(3)
    d = d / np.linalg.norm(d)
    pole = np.array([0.0, 0.0, 1.0])
    if abs(d @ pole) > 1.0 - 1e-9:
        pole = np.array([1.0, 0.0, 0.0])
    e1 = np.cross(pole, d)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    return np.stack([e1, e2, d], axis=1)


def rotation_with_view(direction: np.ndarray, inplane: float) -> np.ndarray:
    """Rotation whose viewing direction is `direction`, at a given in-plane angle."""
    return rotation_about_z(inplane) @ direction_frame(direction).T


def reorthonormalize(r: np.ndarray) -> np.ndarray:
    """Snap a drifted matrix back onto SO(3) using its first two columns."""
    r = np.asarray(r, dtype=float)
    return rotation_from_s2s2(np.concatenate([r[:, 0], r[:, 1]]))


# ---------------------------------------------------------------------------
# Equal-area sphere grid (ring-ordered hierarchical pixelization)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SphereGrid:
    """Equal-area partition of the unit sphere with 12 * 4**(level-1) cells."""

    level: int
    n_side: int
    n_cells: int
    centers: np.ndarray = field(repr=False)
    cell_area: float

    def lookup(self, directions: np.ndarray) -> np.ndarray:
        """Cell index of each unit direction; accepts (3,) or (n, 3)."""
        d = np.asarray(directions, dtype=float)
        single = d.ndim == 1
        d = np.atleast_2d(d)
        n = np.linalg.norm(d, axis=1, keepdims=True)
        d = d / n
        z = np.clip(d[:, 2], -1.0, 1.0)
        phi = np.arctan2(d[:, 1], d[:, 0])
        pix = _ang2pix(self.n_side, z, phi)
        return int(pix[0]) if single else pix


def _pix2ang(n_side: int, pix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pix = np.asarray(pix, dtype=np.int64)
    npix = 12 * n_side * n_side
    ncap = 2 * n_side * (n_side - 1)
    z = np.empty(pix.shape, float)
    phi = np.empty(pix.shape, float)

    north = pix < ncap
    if np.any(north):
        p = pix[north]
        ring = ((1 + np.sqrt(1.0 + 2.0 * p)) // 2).astype(np.int64)
        ring = np.where(2 * ring * (ring - 1) > p, ring - 1, ring)
        ring = np.where(2 * ring * (ring + 1) <= p, ring + 1, ring)
        iphi = p - 2 * ring * (ring - 1)
        z[north] = 1.0 - ring**2 / (3.0 * n_side**2)
        phi[north] = (np.pi / (2 * ring)) * (iphi + 0.5)

    eq = (pix >= ncap) & (pix < npix - ncap)
    if np.any(eq):
        p = pix[eq] - ncap
        ring = p // (4 * n_side) + n_side
        iphi = p % (4 * n_side)
        fodd = 0.5 * (1 + ((ring + n_side) % 2))
        z[eq] = (2.0 * n_side - ring) * 2.0 / (3.0 * n_side)
        phi[eq] = (np.pi / (2 * n_side)) * (iphi + 1.0 - fodd)

    south = pix >= npix - ncap
    if np.any(south):
        p = npix - 1 - pix[south]
        ring = ((1 + np.sqrt(1.0 + 2.0 * p)) // 2).astype(np.int64)
        ring = np.where(2 * ring * (ring - 1) > p, ring - 1, ring)
        ring = np.where(2 * ring * (ring + 1) <= p, ring + 1, ring)
        iphi = 4 * ring - 1 - (p - 2 * ring * (ring - 1))
        z[south] = -(1.0 - ring**2 / (3.0 * n_side**2))
        phi[south] = (np.pi / (2 * ring)) * (iphi + 0.5)
    return z, phi


def _ang2pix(n_side: int, z: np.ndarray, phi: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    phi = np.asarray(phi, dtype=float) % (2 * np.pi)
    za = np.abs(z)
    tt = phi / (0.5 * np.pi)
    pix = np.empty(z.shape, np.int64)

    eq = za <= 2.0 / 3.0
    if np.any(eq):
        temp1 = n_side * (0.5 + tt[eq])
        temp2 = n_side * 0.75 * z[eq]
        jp = (temp1 - temp2).astype(np.int64)
        jm = (temp1 + temp2).astype(np.int64)
        ir = n_side + 1 + jp - jm
        kshift = 1 - (ir & 1)
        ip = ((jp + jm - n_side + kshift + 1) // 2) % (4 * n_side)
        pix[eq] = 2 * n_side * (n_side - 1) + (ir - 1) * 4 * n_side + ip

    cap = ~eq
    if np.any(cap):
        tt_c = tt[cap]
        tp = tt_c - np.floor(tt_c)
        tmp = n_side * np.sqrt(3.0 * (1.0 - za[cap]))
        jp = (tp * tmp).astype(np.int64)
        jm = ((1.0 - tp) * tmp).astype(np.int64)
        ir = jp + jm + 1
        ip = (tt_c * ir).astype(np.int64) % (4 * ir)
        pix[cap] = np.where(z[cap] > 0,
                            2 * ir * (ir - 1) + ip,
                            12 * n_side * n_side - 2 * ir * (ir + 1) + ip)
    return pix


def sphere_grid(level: int) -> SphereGrid:
    """Deterministic equal-area grid; every cell covers 4*pi / n_cells steradians."""
    if level < 1:
        raise ValueError("level must be >= 1")
    n_side = 2 ** (level - 1)
    n_cells = 12 * n_side * n_side
    z, phi = _pix2ang(n_side, np.arange(n_cells))
    s = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    centers = np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)
    return SphereGrid(level=level, n_side=n_side, n_cells=n_cells,
                      centers=centers, cell_area=4.0 * np.pi / n_cells)


def gnomonic_project(direction: np.ndarray, center: np.ndarray) -> np.ndarray:
    """Tangent-plane coordinates of a direction around a center direction.

    The center maps to the origin; a direction at angle alpha from the center
    lands at radius tan(alpha).  Raises OutOfHemisphere at or beyond 90 deg.
    """
    d = np.asarray(direction, dtype=float).reshape(3)
    c = np.asarray(center, dtype=float).reshape(3)
    d = d / np.linalg.norm(d)
    c = c / np.linalg.norm(c)
    dot = float(d @ c)
    if dot <= 1e-12:
        raise OutOfHemisphere("direction is 90 degrees or more from the projection center")
    frame = direction_frame(c)
    p = d / dot - c
    return np.array([p @ frame[:, 0], p @ frame[:, 1]])


# ---------------------------------------------------------------------------
# Global alignment of predicted rotations against ground truth
# ---------------------------------------------------------------------------


@dataclass
class AlignmentReport:
    """Result of gauge-fixing a predicted pose set against ground truth."""

    rotation: np.ndarray
    flipped: bool
    side: str
    errors_deg: np.ndarray
    mean_deg: float
    median_deg: float
    branch_stats: dict

    def __post_init__(self):
        self.errors_deg = np.asarray(self.errors_deg, dtype=float)


_COARSE_LEVEL = 3
_COARSE_INPLANE = 32
_REFINE_STEPS = 100
_REFINE_LR = 0.03


_COARSE_CACHE: np.ndarray | None = None


def _coarse_candidates() -> np.ndarray:
    global _COARSE_CACHE
    if _COARSE_CACHE is None:
        grid = sphere_grid(_COARSE_LEVEL)
        angles = np.linspace(0.0, 2.0 * np.pi, _COARSE_INPLANE, endpoint=False)
        cands = np.empty((grid.n_cells * _COARSE_INPLANE, 3, 3))
        i = 0
        for c in grid.centers:
            frame = direction_frame(c)
            for a in angles:
                cands[i] = frame @ rotation_about_z(a)
                i += 1
        _COARSE_CACHE = cands
    return _COARSE_CACHE


_SKEWS = np.stack([skew(e) for e in np.eye(3)])


def _project_so3(m: np.ndarray) -> np.ndarray:
    """Closest rotation to an arbitrary 3x3 matrix (Frobenius sense)."""
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def _mean_angle(q: np.ndarray, rel: np.ndarray) -> float:
    tr = np.einsum("ab,nab->n", q, rel)
    return float(np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0)).mean())


def _refine(q0: np.ndarray, rel: np.ndarray, side: str) -> tuple[np.ndarray, float]:
    """Adam on incremental axis-angle steps; increments composed on `side`.

    Composing increments on the same side as the gauge keeps the whole
    trajectory equivariant, so aligned errors are exactly invariant under a
    common rotation applied to the predictions on that side.
    """
    q = q0.copy()
    best_q, best_f = q.copy(), _mean_angle(q, rel)
    m = np.zeros(3)
    v = np.zeros(3)
    for step in range(1, _REFINE_STEPS + 1):
        cosg = np.clip((np.einsum("ab,nab->n", q, rel) - 1.0) / 2.0, -1.0, 1.0)
        sing = np.sqrt(np.clip(1.0 - cosg * cosg, 1e-12, None))
        if side == "left":
            num = np.einsum("ab,jac,ncb->jn", q, _SKEWS, rel)
        else:
            num = np.einsum("jab,cb,nca->jn", _SKEWS, q, rel)
        grad = (num / (2.0 * sing)).mean(axis=1)
        m = 0.9 * m + 0.1 * grad
        v = 0.999 * v + 0.001 * grad * grad
        mh = m / (1.0 - 0.9**step)
        vh = v / (1.0 - 0.999**step)
        lr = _REFINE_LR * (1.0 - step / (_REFINE_STEPS + 1))
        delta = rotation_from_axis_angle(-lr * mh / (np.sqrt(vh) + 1e-8))
        q = delta @ q if side == "left" else q @ delta
        f = _mean_angle(q, rel)
        if f < best_f:
            best_q, best_f = q.copy(), f
    return best_q, best_f


def _fit_common_rotation(rel: np.ndarray, side: str) -> tuple[np.ndarray, np.ndarray]:
    """Rotation minimizing the mean geodesic angle to a stack of rotations.

    Refines from two starts: the chordal mean (SVD projection, covariant and
    essentially exact for a concentrated stack) and the best of a coarse grid
    over sphere-grid level 3 x 32 in-plane angles.
    """
    q_svd = _project_so3(rel.mean(axis=0))
    # Anchoring the coarse grid at the chordal mean keeps the whole search
    # equivariant under common-rotation moves of the predictions.
    if side == "right":
        cands = np.einsum("ab,cbd->cad", q_svd, _coarse_candidates())
    else:
        cands = np.einsum("cab,bd->cad", _coarse_candidates(), q_svd)
    tr = np.einsum("cab,nab->cn", cands, rel)
    ang = np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0))
    q_grid = cands[int(np.argmin(ang.mean(axis=1)))]

    best_q, best_f = _refine(q_svd, rel, side)
    q2, f2 = _refine(q_grid, rel, side)
    if f2 < best_f:
        best_q, best_f = q2, f2
    errors = geodesic_degrees_many(np.broadcast_to(best_q, rel.shape), rel)
    return best_q, errors


def align_rotations(pred, gt) -> AlignmentReport:
    """Gauge-fix predictions against ground truth up to a global rotation and hand.

    Searches the right-multiplicative gauge produced by a rotated reconstruction
    volume, the left-multiplicative gauge, and both mirror-conjugated versions;
    the combination with the lowest mean aligned error wins.  Per-branch stats
    are retained so flipped and unflipped readings can both be reported.
    """
    pred = np.asarray(pred, dtype=float).reshape(-1, 3, 3)
    gt = np.asarray(gt, dtype=float).reshape(-1, 3, 3)
    if len(pred) == 0 or len(gt) == 0:
        raise EmptyInput("alignment requires at least one rotation pair")
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground-truth lists must have equal length")

    best = None
    branch_stats = {}
    for flipped in (False, True):
        aligned_pred = np.einsum("ab,nbc,cd->nad", MIRROR, pred, MIRROR) if flipped else pred
        for side in ("right", "left"):
            if side == "right":
                rel = np.einsum("nba,nbc->nac", aligned_pred, gt)  # pred^T gt
            else:
                rel = np.einsum("nab,ncb->nac", gt, aligned_pred)  # gt pred^T
            q, errors = _fit_common_rotation(rel, side)
            stats = {"mean_deg": float(errors.mean()), "median_deg": float(np.median(errors))}
            branch_stats[f"{'flipped' if flipped else 'unflipped'}_{side}"] = stats
            if best is None or stats["mean_deg"] < best[0]:
                best = (stats["mean_deg"], q, flipped, side, errors)

    _, q, flipped, side, errors = best
    return AlignmentReport(
        rotation=q,
        flipped=flipped,
        side=side,
        errors_deg=errors,
        mean_deg=float(errors.mean()),
        median_deg=float(np.median(errors)),
        branch_stats=branch_stats,
    )
