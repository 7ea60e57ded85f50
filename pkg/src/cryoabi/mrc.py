"""Minimal MRC reader/writer: mode-2 volumes and image stacks, little endian."""

from __future__ import annotations

import numpy as np

from .errors import BadMagic, TruncatedPayload, UnsupportedMode

_HEADER_WORDS = 256
_MAGIC = b"MAP "
_MACHST_LE = 0x00004144


def mrc_write(data: np.ndarray, pixel_size: float, path, kind: str = "volume") -> None:
    """Write a volume (kind='volume', data L^3) or stack (kind='stack', data (N, L, L)).

    In-memory axes are (x, y, z) for volumes and (n, x, y) for stacks; the
    payload is stored x-fastest as the format requires.
    """
    data = np.asarray(data)
    if data.ndim != 3:
        raise ValueError("expected a 3D array (volume or image stack)")
    if kind not in ("volume", "stack"):
        raise ValueError("kind must be 'volume' or 'stack'")
    payload = data.astype("<f4", copy=False)
    if kind == "volume":
        nx, ny, nz = payload.shape
        ordered = payload.transpose(2, 1, 0)
        ispg = 1
    else:
        n, nx, ny = payload.shape
        nz = n
        ordered = payload.transpose(0, 2, 1)
        ispg = 0
    if nx != ny:
        raise ValueError("images must be square")

    header = np.zeros(_HEADER_WORDS, dtype="<i4")
    header_f = header.view("<f4")
    header[0:3] = (nx, ny, nz)
    header[3] = 2
    header[7:10] = (nx, ny, nz)
    header_f[10:13] = (nx * pixel_size, ny * pixel_size, nz * pixel_size)
    header_f[13:16] = (90.0, 90.0, 90.0)
    header[16:19] = (1, 2, 3)
    header_f[19] = float(payload.min()) if payload.size else 0.0
    header_f[20] = float(payload.max()) if payload.size else 0.0
    header_f[21] = float(payload.mean()) if payload.size else 0.0
    header[22] = ispg
    header[52] = int.from_bytes(_MAGIC, "little")
    header[53] = _MACHST_LE
    header_f[54] = float(payload.std()) if payload.size else 0.0

    with open(path, "wb") as fh:
        header.tofile(fh)
        np.ascontiguousarray(ordered).tofile(fh)


def mrc_read(path) -> tuple[np.ndarray, float, str]:
    """Read an MRC file; returns (data, pixel_size, kind)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 * _HEADER_WORDS:
        raise TruncatedPayload("file shorter than an MRC header")
    header = np.frombuffer(raw[: 4 * _HEADER_WORDS], dtype="<i4")
    header_f = header.view("<f4")
    if header[52].tobytes() != _MAGIC:
        raise BadMagic("missing MAP stamp")
    if header[3] != 2:
        raise UnsupportedMode(f"mode {int(header[3])} not supported (need 2)")
    nx, ny, nz = (int(v) for v in header[0:3])
    expected = 4 * _HEADER_WORDS + 4 * nx * ny * nz
    if len(raw) != expected:
        raise TruncatedPayload(f"payload length {len(raw) - 4 * _HEADER_WORDS} does not "
                               f"match header-declared {4 * nx * ny * nz}")
    mx = int(header[7]) or nx
    pixel_size = float(header_f[10]) / mx if mx else 1.0
    flat = np.frombuffer(raw[4 * _HEADER_WORDS:], dtype="<f4")
    kind = "volume" if int(header[22]) == 1 else "stack"
    if kind == "volume":
        data = flat.reshape(nz, ny, nx).transpose(2, 1, 0)
    else:
        data = flat.reshape(nz, ny, nx).transpose(0, 2, 1)
    return data.copy(), pixel_size, kind
