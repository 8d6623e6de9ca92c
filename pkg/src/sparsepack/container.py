"""The DRC1 envelope: one index payload, one value payload, an optional reorder map.

Byte layout (little-endian), see FORMAT.md for the full description::

    magic "DRC1" | version u8 | d u64 | r u64
    index id u8 | index len u64 | value id u8 | value len u64
    reorder flag u8 | reorder len u64
    index payload | value payload | reorder payload | crc32c u32

The checksum covers every byte before it.  Method ids are stable, so a
container describes itself.  ``volume`` splits the size into the bits that
carry information (bitmap bits, Bloom bits, coefficients, codes) and the
framing around them.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import crc32c

from .bloom import HEADER as BLOOM_HEADER
from .codecs import FRAME, QuantizedValues, rle_bits
from .curvefit import FitModel, reorder_bits

MAGIC = b"DRC1"
VERSION = 1
HEAD = struct.Struct("<4sBQQBQBQBQ")
CRC = struct.Struct("<I")

INDEX_METHODS = {
    0: "raw",
    1: "bitmap",
    2: "rle",
    3: "huffman",
    4: "bloom-naive",
    5: "bloom-p0",
    6: "bloom-p1",
    7: "bloom-p2",
    8: "bloom-pd",
}
VALUE_METHODS = {
    0: "raw",
    1: "fit-poly",
    2: "fit-dexp",
    3: "quant",
    4: "deflate",
}
INDEX_IDS = {v: k for k, v in INDEX_METHODS.items()}
VALUE_IDS = {v: k for k, v in VALUE_METHODS.items()}

HUFFMAN_HEADER = struct.Struct("<Q")  # bit length of the code stream
BLOOM_TRAILER = struct.Struct("<QB")  # selection seed, deterministic variant


class ContainerError(ValueError):
    """Base class for every decode failure."""


class ChecksumError(ContainerError):
    pass


class TruncatedError(ContainerError):
    pass


class UnknownMethodError(ContainerError):
    pass


class VersionError(ContainerError):
    pass


@dataclass(frozen=True)
class Container:
    d: int
    r: int
    index_method: int
    index_payload: bytes
    value_method: int
    value_payload: bytes
    reorder: bytes | None = None
    version: int = VERSION

    def __post_init__(self):
        if self.index_method not in INDEX_METHODS:
            raise UnknownMethodError(f"index method id {self.index_method}")
        if self.value_method not in VALUE_METHODS:
            raise UnknownMethodError(f"value method id {self.value_method}")

    @property
    def index_name(self) -> str:
        return INDEX_METHODS[self.index_method]

    @property
    def value_name(self) -> str:
        return VALUE_METHODS[self.value_method]


def pack(c: Container) -> bytes:
    reorder = c.reorder or b""
    head = HEAD.pack(
        MAGIC, c.version, c.d, c.r,
        c.index_method, len(c.index_payload),
        c.value_method, len(c.value_payload),
        int(c.reorder is not None), len(reorder),
    )
    body = head + c.index_payload + c.value_payload + reorder
    return body + CRC.pack(crc32c.crc32c(body))


def unpack(data: bytes) -> Container:
    data = bytes(data)
    if len(data) < 5:
        raise TruncatedError("shorter than magic and version")
    if data[:4] != MAGIC:
        raise ContainerError("bad magic")
    if data[4] != VERSION:
        raise VersionError(f"unsupported container version {data[4]}")
    if len(data) < HEAD.size + CRC.size:
        raise TruncatedError("truncated header")
    _, version, d, r, iid, ilen, vid, vlen, flag, rlen = HEAD.unpack_from(data)
    end = HEAD.size + ilen + vlen + rlen
    if len(data) < end + CRC.size:
        raise TruncatedError(f"payloads declare {end + CRC.size} bytes, got {len(data)}")
    if len(data) > end + CRC.size:
        raise ContainerError("trailing bytes after checksum")
    (crc,) = CRC.unpack_from(data, end)
    if crc32c.crc32c(data[:end]) != crc:
        raise ChecksumError("CRC32C mismatch")
    if iid not in INDEX_METHODS:
        raise UnknownMethodError(f"index method id {iid}")
    if vid not in VALUE_METHODS:
        raise UnknownMethodError(f"value method id {vid}")
    if flag > 1 or (flag == 0 and rlen):
        raise ContainerError("inconsistent reorder flag")
    o = HEAD.size
    index = data[o:o + ilen]
    value = data[o + ilen:o + ilen + vlen]
    reorder = data[o + ilen + vlen:end] if flag else None
    return Container(d, r, iid, index, vid, value, reorder, version)


# -- bit accounting --------------------------------------------------------

@dataclass(frozen=True)
class VolumeReport:
    index_bits: int
    value_bits: int
    reorder_bits: int
    metadata_bits: int
    d: int
    r: int

    @property
    def payload_bits(self) -> int:
        return self.index_bits + self.value_bits + self.reorder_bits

    @property
    def total_bits(self) -> int:
        return self.payload_bits + self.metadata_bits

    @property
    def dense_baseline_bits(self) -> int:
        return 32 * self.d

    @property
    def sparse_baseline_bits(self) -> int:
        return 64 * self.r

    @property
    def ratio_dense(self) -> float:
        return self.total_bits / self.dense_baseline_bits

    @property
    def ratio_sparse(self) -> float:
        return self.total_bits / self.sparse_baseline_bits if self.r else float("inf")

    def as_dict(self) -> dict:
        return {
            "bits_index": self.index_bits,
            "bits_value": self.value_bits,
            "bits_reorder": self.reorder_bits,
            "bits_metadata": self.metadata_bits,
            "bits_payload": self.payload_bits,
            "bits_total": self.total_bits,
            "ratio_dense": self.ratio_dense,
            "ratio_sparse": self.ratio_sparse,
        }


def _index_bits(c: Container) -> int:
    p = c.index_payload
    if not p:
        return 0
    name = c.index_name
    if name == "raw":
        return 8 * len(p)
    if name == "bitmap":
        return c.d
    if name == "rle":
        return rle_bits(p)
    if name == "huffman":
        return HUFFMAN_HEADER.unpack_from(p)[0]
    return BLOOM_HEADER.unpack_from(p)[0]  # m filter bits


def _value_bits(c: Container) -> int:
    p = c.value_payload
    if not p:
        return 0
    name = c.value_name
    if name == "raw":
        return 8 * len(p)
    if name.startswith("fit-"):
        return FitModel.from_bytes(p).value_bits()
    if name == "quant":
        return QuantizedValues.from_bytes(p).value_bits()
    return 8 * (len(p) - FRAME.size)


def volume(c: Container) -> VolumeReport:
    """Exact bit decomposition; metadata is whatever the payload bits leave over."""
    total = 8 * len(pack(c))
    ib, vb = _index_bits(c), _value_bits(c)
    rb = reorder_bits(c.reorder) if c.reorder else 0
    return VolumeReport(ib, vb, rb, total - ib - vb - rb, c.d, c.r)

