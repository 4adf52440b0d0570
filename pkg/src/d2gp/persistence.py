"""Binary weights container.

Layout: magic "D2GPWGT1", version u32, tensor count u32, then per tensor:
name length u16, UTF-8 name, rank u8, dims (u32 each), little-endian
float64 payload. Round trips are bit-identical; trailing bytes are an error.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError, LookupErrorNamed

MAGIC = b"D2GPWGT1"
VERSION = 1


def save_weights(named_tensors, path):
    """named_tensors: iterable of (name, ndarray) or objects with .name/.data."""
    items = []
    seen = set()
    for entry in named_tensors:
        if isinstance(entry, tuple):
            name, data = entry
        else:
            name, data = entry.name, entry.data
        if name in seen:
            raise FormatError(f"duplicate tensor name {name!r}")
        seen.add(name)
        items.append((name, np.asarray(data, dtype=np.float64)))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(items)))
        for name, data in items:
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", data.ndim))
            for d in data.shape:
                fh.write(struct.pack("<I", d))
            fh.write(data.astype("<f8").tobytes(order="C"))


def load_weights(path):
    """Returns an ordered dict name -> float64 ndarray."""
    with open(path, "rb") as fh:
        blob = fh.read()
    off = 0

    def need(nbytes, what):
        nonlocal off
        if off + nbytes > len(blob):
            raise FormatError(f"truncated weights file while reading {what}", offset=off)
        chunk = blob[off:off + nbytes]
        off += nbytes
        return chunk

    if need(8, "magic") != MAGIC:
        raise FormatError("bad magic; not a weights file", offset=0)
    version, count = struct.unpack("<II", need(8, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported weights version {version}", offset=8)
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", need(2, "name length"))
        name = need(nlen, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", need(1, "rank"))
        dims = tuple(struct.unpack("<I", need(4, "dim"))[0] for _ in range(rank))
        size = int(np.prod(dims)) if dims else 1
        payload = need(8 * size, f"payload of {name}")
        out[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    if off != len(blob):
        raise FormatError(f"{len(blob) - off} trailing bytes", offset=off)
    return out


def load_into(precond, path):
    """Assign saved tensors into a preconditioner's parameters by name."""
    weights = load_weights(path)
    params = {p.name: p for p in precond.parameters()}
    missing = set(params) - set(weights)
    if missing:
        raise LookupErrorNamed(f"weights file missing tensors: {sorted(missing)}")
    extra = set(weights) - set(params)
    if extra:
        raise LookupErrorNamed(f"weights file has unknown tensors: {sorted(extra)}")
    for name, p in params.items():
        if weights[name].shape != p.data.shape:
            raise FormatError(
                f"shape mismatch for {name}: file {weights[name].shape}, model {p.data.shape}")
        p.data = weights[name]
    return precond
