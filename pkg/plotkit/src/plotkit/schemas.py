"""Readers for the medianflow output schemas (CSV time series and tables,
JSON summaries, MFLD binary snapshots).  Schema versions are checked
explicitly; a mismatch is a hard error."""

from __future__ import annotations

import json
import re
import struct

import numpy as np

SUPPORTED_SCHEMA_VERSION = 1

_HEADER_RE = re.compile(r"#\s*medianflow\s+(\w+)\s+schema_version=(\d+)")


class SchemaError(ValueError):
    pass


def read_csv(path, expected_kind=None):
    """Parse a medianflow CSV into {column: ndarray}; strings stay strings."""
    with open(path) as fh:
        header = fh.readline()
        m = _HEADER_RE.match(header)
        if not m:
            raise SchemaError(f"{path}: missing medianflow schema header")
        kind, version = m.group(1), int(m.group(2))
        if version != SUPPORTED_SCHEMA_VERSION:
            raise SchemaError(
                f"{path}: schema_version {version} not supported "
                f"(expected {SUPPORTED_SCHEMA_VERSION})"
            )
        if expected_kind is not None and kind != expected_kind:
            raise SchemaError(f"{path}: kind {kind!r}, expected {expected_kind!r}")
        columns = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    out = {}
    for i, col in enumerate(columns):
        vals = [r[i] for r in rows]
        try:
            out[col] = np.array([float(v) for v in vals])
        except ValueError:
            out[col] = np.array(vals)
    return out


def read_summary(path):
    with open(path) as fh:
        payload = json.load(fh)
    version = payload.get("schema_version")
    if version != SUPPORTED_SCHEMA_VERSION:
        raise SchemaError(
            f"{path}: schema_version {version} not supported "
            f"(expected {SUPPORTED_SCHEMA_VERSION})"
        )
    return payload


_MFLD_HEADER = struct.Struct("<4sIII")
_MFLD_RECORD = np.dtype([("k1", "<i4"), ("k2", "<i4"), ("re", "<f8"), ("im", "<f8")])


def read_mfld(path):
    """Read an MFLD snapshot; returns (n, k1, k2, coeff) with one +-k member."""
    with open(path, "rb") as fh:
        magic, version, n, count = _MFLD_HEADER.unpack(fh.read(_MFLD_HEADER.size))
        if magic != b"MFLD":
            raise SchemaError(f"{path}: not an MFLD snapshot")
        if version != 1:
            raise SchemaError(f"{path}: MFLD version {version} not supported")
        rec = np.frombuffer(fh.read(count * _MFLD_RECORD.itemsize), dtype=_MFLD_RECORD)
    if len(rec) != count:
        raise SchemaError(f"{path}: truncated MFLD payload")
    return int(n), rec["k1"].astype(int), rec["k2"].astype(int), rec["re"] + 1j * rec["im"]


def shell_spectrum(k1, k2, coeff, n=None):
    """Energy per integer shell from half-stored coefficients (pairs doubled).

    Pass the grid size n to weight self-paired (Nyquist) slots once.
    """
    ksq = k1 * k1 + k2 * k2
    shell = np.ceil(np.sqrt(ksq.astype(float))).astype(int)
    if n is not None:
        self_paired = ((-k1) % n == k1 % n) & ((-k2) % n == k2 % n)
        weight = np.where(self_paired, 1.0, 2.0)
    else:
        weight = np.full(len(k1), 2.0)
    energy = weight * np.abs(coeff) ** 2
    n_shell = shell.max() + 1 if len(shell) else 1
    return np.arange(n_shell), np.bincount(shell, weights=energy, minlength=n_shell)
