"""Field snapshot files.

Binary container layout (all little-endian)::

    magic    4 bytes   b"HCF1"
    d        uint32
    n_k      d * uint32
    extents  d * (float64 lo, float64 hi)
    time     float64
    alpha    float64
    data     prod(n_k) * (float32 re, float32 im), row-major (C order)

The CSV export has columns ``x_1..x_d, re, im, rho``, one row per grid point
in the same row-major order.
"""

from __future__ import annotations

import csv
import io
import struct
from pathlib import Path

import numpy as np

from .field import Grid, WaveField, build_grid

MAGIC = b"HCF1"


def encode_field(field: WaveField, alpha: float = 0.0) -> bytes:
    grid = field.grid
    d = grid.dims
    header = [MAGIC, struct.pack("<I", d), struct.pack(f"<{d}I", *grid.points)]
    for lo, hi in grid.extents:
        header.append(struct.pack("<2d", lo, hi))
    header.append(struct.pack("<2d", field.time, alpha))
    data = np.ascontiguousarray(field.psi).astype("<c8").tobytes()
    return b"".join(header) + data


def decode_field(blob: bytes, max_points: int | None = None) -> tuple[WaveField, float]:
    """Inverse of :func:`encode_field`; returns ``(field, alpha)``."""
    if blob[:4] != MAGIC:
        raise ValueError("not an HCF1 field container")
    off = 4
    (d,) = struct.unpack_from("<I", blob, off)
    off += 4
    if not 1 <= d <= 3:
        raise ValueError(f"bad dimension count {d} in header")
    points = struct.unpack_from(f"<{d}I", blob, off)
    off += 4 * d
    extents = []
    for _ in range(d):
        extents.append(struct.unpack_from("<2d", blob, off))
        off += 16
    time, alpha = struct.unpack_from("<2d", blob, off)
    off += 16
    kwargs = {} if max_points is None else {"max_points": max_points}
    grid = build_grid(extents, points, **kwargs)
    expected = grid.size * 8
    if len(blob) - off != expected:
        raise ValueError(f"payload is {len(blob) - off} bytes, expected {expected}")
    psi = np.frombuffer(blob, dtype="<c8", offset=off).reshape(grid.shape)
    return WaveField(grid, psi.astype(np.complex128), time), alpha


def write_field(path: str | Path, field: WaveField, alpha: float = 0.0) -> Path:
    path = Path(path)
    path.write_bytes(encode_field(field, alpha))
    return path


def read_field(path: str | Path) -> tuple[WaveField, float]:
    return decode_field(Path(path).read_bytes())


def field_csv(field: WaveField) -> str:
    grid: Grid = field.grid
    coords = [c.ravel() for c in grid.mesh()]
    psi = field.psi.ravel()
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"x_{k + 1}" for k in range(grid.dims)] + ["re", "im", "rho"])
    rho = np.abs(psi) ** 2
    for i in range(psi.size):
        writer.writerow([repr(float(c[i])) for c in coords]
                        + [repr(float(psi[i].real)), repr(float(psi[i].imag)), repr(float(rho[i]))])
    return buf.getvalue()


def write_field_csv(path: str | Path, field: WaveField) -> Path:
    path = Path(path)
    path.write_text(field_csv(field))
    return path
