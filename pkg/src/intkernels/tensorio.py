"""Versioned little-endian tensor container with named axes, coordinates and an optional mask.

Layout::

    magic   b"IKTN"
    u16     format version
    u8      dtype code (1 = f32, 2 = f64)
    u8      flags (bit 0: mask block present)
    u8      ndim
    per dim: u64 size, u16 name length, name (utf-8), u8 has_coords, f64[size] coords
    payload row-major, little-endian
    mask    u8[prod(shape)] if flagged
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"IKTN"
VERSION = 1
MAX_DIMS = 8
MAX_ELEMENTS = 1 << 40
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}


class TensorFormatError(ValueError):
    pass


class BadMagicError(TensorFormatError):
    pass


class UnsupportedVersionError(TensorFormatError):
    pass


class DimOverflowError(TensorFormatError):
    pass


class TruncatedPayloadError(TensorFormatError):
    pass


@dataclass
class Tensor:
    data: np.ndarray
    axes: list[str]
    coords: dict[str, np.ndarray] = field(default_factory=dict)
    mask: np.ndarray | None = None


def write_tensor(path, data: np.ndarray, axes: list[str], coords: dict | None = None,
                 mask: np.ndarray | None = None) -> None:
    data = np.asarray(data)
    if data.dtype not in _CODES:
        raise TensorFormatError(f"unsupported dtype {data.dtype}; use float32 or float64")
    if data.ndim > MAX_DIMS:
        raise DimOverflowError(f"{data.ndim} dims exceeds the limit of {MAX_DIMS}")
    if len(axes) != data.ndim:
        raise TensorFormatError(f"{len(axes)} axis names for a {data.ndim}-D tensor")
    coords = coords or {}
    if mask is not None and np.shape(mask) != data.shape:
        raise TensorFormatError(f"mask shape {np.shape(mask)} does not match data {data.shape}")
    parts = [MAGIC, struct.pack("<HBBB", VERSION, _CODES[data.dtype], 1 if mask is not None else 0, data.ndim)]
    for name, size in zip(axes, data.shape):
        raw = name.encode("utf-8")
        parts.append(struct.pack("<QH", size, len(raw)) + raw)
        c = coords.get(name)
        if c is None:
            parts.append(b"\x00")
        else:
            c = np.asarray(c, dtype="<f8")
            if c.shape != (size,):
                raise TensorFormatError(f"coordinates for {name} have shape {c.shape}, expected ({size},)")
            parts.append(b"\x01" + c.tobytes())
    parts.append(np.ascontiguousarray(data, dtype=data.dtype.newbyteorder("<")).tobytes())
    if mask is not None:
        parts.append(np.ascontiguousarray(mask, dtype=np.uint8).tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedPayloadError(f"truncated payload while reading {what}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_tensor(path) -> Tensor:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a tensor container (bad magic)")
    r = _Reader(buf)
    r.pos = 4
    version, code, flags, ndim = r.unpack("<HBBB", "header")
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported format version {version}")
    if code not in _DTYPES:
        raise TensorFormatError(f"{path}: unknown dtype code {code}")
    if ndim > MAX_DIMS:
        raise DimOverflowError(f"{path}: {ndim} dims exceeds the limit of {MAX_DIMS}")
    shape, axes, coords = [], [], {}
    total = 1
    for i in range(ndim):
        size, nlen = r.unpack("<QH", f"dim {i}")
        total *= max(size, 1)
        if total > MAX_ELEMENTS:
            raise DimOverflowError(f"{path}: tensor size overflows the element limit")
        name = r.take(nlen, f"dim {i} name").decode("utf-8")
        (has,) = r.unpack("<B", f"dim {i} flag")
        if has:
            coords[name] = np.frombuffer(r.take(8 * size, f"{name} coords"), dtype="<f8").copy()
        shape.append(size)
        axes.append(name)
    dtype = _DTYPES[code]
    n = int(np.prod(shape, dtype=np.int64))
    data = np.frombuffer(r.take(n * dtype.itemsize, "payload"), dtype=dtype).reshape(shape).copy()
    mask = None
    if flags & 1:
        mask = np.frombuffer(r.take(n, "mask"), dtype=np.uint8).reshape(shape).astype(bool)
    return Tensor(data, axes, coords, mask)
