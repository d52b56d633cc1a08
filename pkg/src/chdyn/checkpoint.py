"""Binary checkpoints of field pairs.

Layout (little-endian)::

    magic   8s   b"CHDYNCK1"
    version u32
    Nx, Ny  u32, u32
    npairs  u32
    flags   u32  bit 0: stationary
    Lx, t   f64, f64
    step    u64
    mu_inf  f64
    hash    32s  sha256 of the run parameters
    linkage npairs x u8, zero padded to a multiple of 8
    then for each pair: bulk (Nx*Ny, row-major) and surface (2*Nx) as f64
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np

from .errors import ParseError
from .fields import BulkSurfacePair, Linkage

MAGIC = b"CHDYNCK1"
VERSION = 1
_HEAD = struct.Struct("<8sIIIIIddQd32s")


@dataclass
class Checkpoint:
    Lx: float
    Nx: int
    Ny: int
    pairs: List[BulkSurfacePair]
    t: float = 0.0
    step: int = 0
    stationary: bool = False
    mu_inf: float = 0.0
    params_hash: bytes = field(default=bytes(32))


def params_digest(text: str) -> bytes:
    return hashlib.sha256(text.encode("utf-8")).digest()


def encode(ck: Checkpoint) -> bytes:
    if len(ck.params_hash) != 32:
        raise ValueError("params hash must be 32 bytes")
    head = _HEAD.pack(MAGIC, VERSION, ck.Nx, ck.Ny, len(ck.pairs), int(bool(ck.stationary)),
                      float(ck.Lx), float(ck.t), int(ck.step), float(ck.mu_inf), ck.params_hash)
    link = bytes(p.linkage.value for p in ck.pairs)
    link += bytes(-len(link) % 8)
    body = []
    for p in ck.pairs:
        if p.bulk.shape != (ck.Nx, ck.Ny) or p.surf.shape != (2, ck.Nx):
            raise ValueError("pair shape does not match checkpoint dimensions")
        body.append(np.ascontiguousarray(p.bulk, dtype="<f8").tobytes())
        body.append(np.ascontiguousarray(p.surf, dtype="<f8").tobytes())
    return head + link + b"".join(body)


def decode(data: bytes) -> Checkpoint:
    if len(data) < _HEAD.size or data[:8] != MAGIC:
        raise ParseError("not a checkpoint file")
    magic, version, nx, ny, npairs, flags, lx, t, step, mu_inf, digest = _HEAD.unpack_from(data)
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}")
    off = _HEAD.size
    links = data[off:off + npairs]
    off += npairs + (-npairs % 8)
    nb, ns = nx * ny, 2 * nx
    expected = off + npairs * 8 * (nb + ns)
    if len(data) != expected:
        raise ParseError(f"checkpoint size {len(data)} != expected {expected}")
    pairs = []
    for k in range(npairs):
        bulk = np.frombuffer(data, "<f8", nb, off).reshape(nx, ny).astype(float)
        off += 8 * nb
        surf = np.frombuffer(data, "<f8", ns, off).reshape(2, nx).astype(float)
        off += 8 * ns
        pairs.append(BulkSurfacePair(bulk, surf, Linkage(links[k])))
    return Checkpoint(lx, nx, ny, pairs, t, step, bool(flags & 1), mu_inf, digest)


def write_checkpoint(path, ck: Checkpoint) -> None:
    Path(path).write_bytes(encode(ck))


def read_checkpoint(path) -> Checkpoint:
    return decode(Path(path).read_bytes())
