"""Binary field snapshots (MFLD format).

Layout, little-endian throughout:

    magic   4 bytes  b"MFLD"
    version u32      (currently 1)
    n       u32      grid size
    count   u32      number of records
    records count * (k1: i32, k2: i32, re: f64, im: f64)

Only one member of each +-k pair is stored; records are sorted by (k1, k2).
"""

from __future__ import annotations

import struct
from fractions import Fraction

import numpy as np

from .spectral import SpectralField, WaveGrid, hermitianize, make_grid

MAGIC = b"MFLD"
VERSION = 1
_HEADER = struct.Struct("<4sIII")
_RECORD_DTYPE = np.dtype([("k1", "<i4"), ("k2", "<i4"), ("re", "<f8"), ("im", "<f8")])


def _representative_mask(grid: WaveGrid) -> np.ndarray:
    """One slot per +-k pair: the lexicographically smaller slot index wins."""
    n = grid.n
    i1, i2 = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    j1, j2 = (-i1) % n, (-i2) % n
    own = i1 * n + i2
    partner = j1 * n + j2
    return grid.active & (own <= partner)


def save_field(path, f: SpectralField) -> None:
    grid = f.grid
    mask = _representative_mask(grid)
    k1 = grid.k1[mask]
    k2 = grid.k2[mask]
    c = f.coeff[mask]
    order = np.lexsort((k2, k1))
    rec = np.empty(len(k1), dtype=_RECORD_DTYPE)
    rec["k1"], rec["k2"] = k1[order], k2[order]
    rec["re"], rec["im"] = c[order].real, c[order].imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, grid.n, len(rec)))
        fh.write(rec.tobytes())


def load_field(path, grid: WaveGrid | None = None, dealias_fraction=Fraction(2, 3)) -> SpectralField:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise ValueError(f"{path}: truncated MFLD header")
        magic, version, n, count = _HEADER.unpack(header)
        if magic != MAGIC:
            raise ValueError(f"{path}: not an MFLD snapshot (magic {magic!r})")
        if version != VERSION:
            raise ValueError(f"{path}: unsupported MFLD version {version}")
        rec = np.frombuffer(fh.read(count * _RECORD_DTYPE.itemsize), dtype=_RECORD_DTYPE)
    if len(rec) != count:
        raise ValueError(f"{path}: expected {count} records, found {len(rec)}")
    if grid is None:
        grid = make_grid(int(n), dealias_fraction)
    elif grid.n != n:
        raise ValueError(f"{path}: snapshot n={n} does not match grid n={grid.n}")
    c = grid.zeros()
    i1 = rec["k1"].astype(np.int64) % grid.n
    i2 = rec["k2"].astype(np.int64) % grid.n
    c[i1, i2] = rec["re"] + 1j * rec["im"]
    j1, j2 = (-i1) % grid.n, (-i2) % grid.n
    c[j1, j2] = rec["re"] - 1j * rec["im"]
    c = hermitianize(c)
    c[~grid.active] = 0.0
    return SpectralField(grid, c)
