"""Binary persistence for trained filter banks.

Layout (little-endian throughout, after the 4-byte magic):

====================  =======================================
magic                 ``ANCB``
version               u16 (currently 1)
grid origin           f64 x 3
grid spacing          f64
grid counts           u16 x 3 (nx, ny, nz)
sample_rate           u32
taps per channel      u32
channel count         u8
coefficients          per node in row-major node order:
                      channels x taps f32
metadata              u32 byte length, then UTF-8 JSON
CRC32                 u32 over every preceding byte
====================  =======================================

Saving the same bank twice produces identical bytes, and a loaded bank's
coefficients are bitwise identical to the trained ones.
"""

from __future__ import annotations

import json
import os
import struct
import zlib

import numpy as np

from .anc import ControlFilter, FilterBank
from .scene import GridSpec

MAGIC = b"ANCB"
VERSION = 1

_HEADER = struct.Struct("<H3ddHHHIIB")  # version, origin, spacing, counts, fs, taps, channels


class BankFileError(ValueError):
    """The file is not a readable bank (magic, version, or structure)."""


class CorruptBank(BankFileError):
    """The trailing CRC32 does not match the file contents."""


def save_bank(bank: FilterBank, path: str | os.PathLike) -> int:
    """Write ``bank`` to ``path``; returns the number of bytes written.

    The bank must hold an entry for every grid node.
    """
    grid = bank.grid
    missing = [n for n in grid.indices() if n not in bank.entries]
    if missing:
        raise ValueError(f"bank is missing {len(missing)} nodes, first {missing[0]}")

    first = next(iter(bank.entries.values()))
    blob = bytearray()
    blob += MAGIC
    blob += _HEADER.pack(
        VERSION,
        *[float(v) for v in grid.origin],
        float(grid.spacing),
        grid.nx,
        grid.ny,
        grid.nz,
        first.sample_rate,
        first.n_taps,
        first.n_sources,
    )
    for node in grid.indices():
        taps = bank.entries[node].taps
        blob += np.ascontiguousarray(taps, dtype="<f4").tobytes()
    meta = json.dumps(bank.metadata, sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(meta))
    blob += meta
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def load_bank(path: str | os.PathLike) -> FilterBank:
    """Read a bank written by :func:`save_bank`, verifying the CRC."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + _HEADER.size + 8:
        raise BankFileError("file too short to be a bank")
    if blob[:4] != MAGIC:
        raise BankFileError(f"bad magic {blob[:4]!r}")
    (stored_crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise CorruptBank("CRC32 mismatch")

    fields = _HEADER.unpack_from(blob, 4)
    version, ox, oy, oz, spacing, nx, ny, nz, fs, taps, channels = fields
    if version != VERSION:
        raise BankFileError(f"unsupported version {version}")
    grid = GridSpec(origin=np.array([ox, oy, oz]), spacing=spacing, nx=nx, ny=ny, nz=nz)

    offset = 4 + _HEADER.size
    per_node = channels * taps * 4
    n_nodes = grid.num_nodes
    coeff_end = offset + per_node * n_nodes
    if coeff_end + 4 > len(blob):
        raise BankFileError("coefficient section overruns file")
    (meta_len,) = struct.unpack_from("<I", blob, coeff_end)
    meta_start = coeff_end + 4
    if meta_start + meta_len + 4 != len(blob):
        raise BankFileError("metadata length inconsistent with file size")
    try:
        metadata = json.loads(blob[meta_start : meta_start + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BankFileError(f"unreadable metadata: {exc}") from exc

    residuals = metadata.get("residual_power_db", {})
    converged = metadata.get("converged", {})
    entries = {}
    for n, node in enumerate(grid.indices()):
        raw = blob[offset + n * per_node : offset + (n + 1) * per_node]
        coeffs = np.frombuffer(raw, dtype="<f4").reshape(channels, taps).copy()
        key = str(list(node))
        entries[node] = ControlFilter(
            taps=coeffs,
            sample_rate=fs,
            trained_at=node,
            residual_power_db=float(residuals.get(key, 0.0)),
            converged=bool(converged.get(key, True)),
        )
    return FilterBank(grid=grid, entries=entries, metadata=metadata)
