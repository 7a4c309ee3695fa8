"""Binary container for TL fields, masks, and weight tensors.

Layout: 4-byte magic ``TLF1``, then any number of records, then a CRC32
footer (u32, little-endian) over every preceding byte. Each record is a
u8 kind tag (1 field, 2 mask, 3 tensor), a u32 name length plus UTF-8 name,
a u32 dimension count, the u32 dimensions, and the payload as little-endian
float32 in row-major order (range-major for fields). Every multi-byte
integer is little-endian.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

__all__ = [
    "KIND_FIELD",
    "KIND_MASK",
    "KIND_TENSOR",
    "TlfRecord",
    "read_tlf",
    "write_tlf",
]

MAGIC = b"TLF1"
KIND_FIELD = 1
KIND_MASK = 2
KIND_TENSOR = 3
_KINDS = (KIND_FIELD, KIND_MASK, KIND_TENSOR)


@dataclass
class TlfRecord:
    """One named float32 array inside a container."""

    name: str
    kind: int
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise FormatError(f"unknown record kind {self.kind}")
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)


def write_tlf(path, records) -> None:
    """Write records to ``path``; the file round-trips bit-identically."""
    buf = bytearray(MAGIC)
    for rec in records:
        if not isinstance(rec, TlfRecord):
            rec = TlfRecord(*rec)
        name_b = rec.name.encode("utf-8")
        buf += struct.pack("<BI", rec.kind, len(name_b))
        buf += name_b
        dims = rec.values.shape
        buf += struct.pack("<I", len(dims))
        buf += struct.pack(f"<{len(dims)}I", *dims)
        buf += rec.values.astype("<f4", copy=False).tobytes(order="C")
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


def read_tlf(path) -> list[TlfRecord]:
    """Read every record back; raises :class:`FormatError` on corruption."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) + 4:
        raise FormatError(f"{path}: too short to be a TLF container")
    if data[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    body, footer = data[:-4], data[-4:]
    (want_crc,) = struct.unpack("<I", footer)
    if zlib.crc32(body) & 0xFFFFFFFF != want_crc:
        raise FormatError(f"{path}: checksum mismatch")

    records: list[TlfRecord] = []
    off = len(MAGIC)
    end = len(body)

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > end:
            raise FormatError(f"{path}: truncated record at byte {off}")
        out = body[off : off + n]
        off += n
        return out

    while off < end:
        kind, name_len = struct.unpack("<BI", take(5))
        if kind not in _KINDS:
            raise FormatError(f"{path}: unknown record kind {kind}")
        try:
            name = take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{path}: undecodable record name") from exc
        (ndim,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n_vals = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        payload = take(4 * n_vals)
        values = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
        records.append(TlfRecord(name, kind, values))
    return records
