"""Particle stacks on disk: MRC image payload plus a CSV metadata sidecar."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .mrc import mrc_read, mrc_write
from .transforms import CTFParams

METADATA_COLUMNS = (
    ["particle_id", "defocus_A", "voltage_kV", "cs_mm", "amp_contrast"]
    + [f"r{i}{j}" for i in range(3) for j in range(3)]
    + ["gt_tx_px", "gt_ty_px", "sigma_noise"]
)


@dataclass
class ParticleStack:
    """N particle images with per-image CTF settings and optional ground truth."""

    images: np.ndarray          # (N, L, L)
    pixel_size: float
    defocus: np.ndarray         # (N,) in Angstrom
    voltage_kv: np.ndarray
    cs_mm: np.ndarray
    amplitude_contrast: np.ndarray
    gt_rotations: np.ndarray | None = None     # (N, 3, 3)
    gt_translations: np.ndarray | None = None  # (N, 2) pixels
    sigma_noise: float | None = None

    def __post_init__(self):
        n = self.images.shape[0]
        for arr in (self.defocus, self.voltage_kv, self.cs_mm, self.amplitude_contrast):
            if len(arr) != n:
                raise DimensionMismatch("per-image CTF arrays must match the stack length")

    @property
    def n(self) -> int:
        return self.images.shape[0]

    @property
    def L(self) -> int:
        return self.images.shape[1]

    def ctf_params(self, i: int) -> CTFParams:
        return CTFParams(defocus_a=float(self.defocus[i]),
                         voltage_kv=float(self.voltage_kv[i]),
                         cs_mm=float(self.cs_mm[i]),
                         amplitude_contrast=float(self.amplitude_contrast[i]))


def write_metadata(stack: ParticleStack, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METADATA_COLUMNS)
        for i in range(stack.n):
            r = stack.gt_rotations[i] if stack.gt_rotations is not None else np.full((3, 3), np.nan)
            t = stack.gt_translations[i] if stack.gt_translations is not None else (np.nan, np.nan)
            row = ([i, repr(float(stack.defocus[i])), repr(float(stack.voltage_kv[i])),
                    repr(float(stack.cs_mm[i])), repr(float(stack.amplitude_contrast[i]))]
                   + [repr(float(v)) for v in r.reshape(-1)]
                   + [repr(float(t[0])), repr(float(t[1])),
                      repr(float(stack.sigma_noise)) if stack.sigma_noise is not None else "nan"])
            writer.writerow(row)


def read_metadata(path) -> dict[str, np.ndarray]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != METADATA_COLUMNS:
            raise DimensionMismatch("unexpected metadata column layout")
        rows = [[float(v) for v in row] for row in reader]
    table = np.asarray(rows, dtype=float)
    return {name: table[:, i] for i, name in enumerate(METADATA_COLUMNS)}


def save_stack(stack: ParticleStack, mrc_path, metadata_path) -> None:
    mrc_write(stack.images, stack.pixel_size, mrc_path, kind="stack")
    write_metadata(stack, metadata_path)


def load_stack(mrc_path, metadata_path) -> ParticleStack:
    images, pixel_size, kind = mrc_read(mrc_path)
    if kind != "stack":
        raise DimensionMismatch("expected an image stack, found a volume")
    meta = read_metadata(metadata_path)
    if len(meta["particle_id"]) != images.shape[0]:
        raise DimensionMismatch("metadata row count differs from stack length")
    rot = np.stack([meta[f"r{i}{j}"] for i in range(3) for j in range(3)], axis=1)
    rot = rot.reshape(-1, 3, 3)
    has_gt = not np.any(np.isnan(rot))
    trans = np.stack([meta["gt_tx_px"], meta["gt_ty_px"]], axis=1)
    sigma = meta["sigma_noise"][0]
    return ParticleStack(
        images=images.astype(np.float64),
        pixel_size=pixel_size,
        defocus=meta["defocus_A"],
        voltage_kv=meta["voltage_kV"],
        cs_mm=meta["cs_mm"],
        amplitude_contrast=meta["amp_contrast"],
        gt_rotations=rot if has_gt else None,
        gt_translations=trans if not np.any(np.isnan(trans)) else None,
        sigma_noise=float(sigma) if np.isfinite(sigma) else None,
    )
