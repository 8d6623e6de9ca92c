"""Lossless index codecs, byte-compressor slot and the stochastic value quantizer."""

from __future__ import annotations

import bz2
import heapq
import itertools
import lzma
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .tensor import IndexBitmap, make_rng


class CodecError(ValueError):
    """A payload could not be encoded or decoded."""


# -- fixed-width bit packing ------------------------------------------------

def pack_uint(values, width: int) -> bytes:
    """Pack non-negative integers at ``width`` bits each, LSB-first."""
    v = np.asarray(values, dtype=np.uint64).reshape(-1)
    if width == 0 or v.size == 0:
        if width == 0 and v.size and v.max() != 0:
            raise CodecError("non-zero value in a zero-width field")
        return b""
    if width < 64 and v.size and int(v.max()) >> width:
        raise CodecError(f"value does not fit in {width} bits")
    shifts = np.arange(width, dtype=np.uint64)
    bits = ((v[:, None] >> shifts[None, :]) & np.uint64(1)).astype(np.uint8)
    return np.packbits(bits.ravel(), bitorder="little").tobytes()


def unpack_uint(data: bytes, count: int, width: int) -> np.ndarray:
    if width == 0:
        return np.zeros(count, dtype=np.int64)
    need = (count * width + 7) // 8
    if len(data) < need:
        raise CodecError(f"need {need} bytes for {count} x {width}-bit fields, got {len(data)}")
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8, count=need), bitorder="little")
    bits = bits[: count * width].reshape(count, width).astype(np.uint64)
    weights = np.uint64(1) << np.arange(width, dtype=np.uint64)
    return (bits * weights).sum(axis=1).astype(np.int64)


# -- varints and run-length coding -----------------------------------------

def encode_varint(n: int) -> bytes:
    if n < 0:
        raise CodecError("varints are unsigned")
    out = bytearray()
    while True:
        b = n & 0x7F
        n >>= 7
        if n:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def decode_varint(data: bytes, pos: int = 0) -> tuple[int, int]:
    value = shift = 0
    while True:
        if pos >= len(data):
            raise CodecError("truncated varint")
        b = data[pos]
        pos += 1
        value |= (b & 0x7F) << shift
        if not b & 0x80:
            return value, pos
        shift += 7
        if shift > 63:
            raise CodecError("varint longer than 64 bits")


def rle_tuples(symbols) -> list[tuple[int, object]]:
    """Generic (count, symbol) run list, e.g. "aaaabaa" -> [(4,'a'), (1,'b'), (2,'a')]."""
    return [(len(list(g)), s) for s, g in itertools.groupby(symbols)]


def bit_runs(bits) -> tuple[int, list[int]]:
    """Initial bit and run lengths of a boolean sequence."""
    b = np.asarray(bits, dtype=bool)
    if b.size == 0:
        return 0, []
    edges = np.flatnonzero(b[1:] != b[:-1]) + 1
    bounds = np.concatenate([[0], edges, [b.size]])
    return int(b[0]), np.diff(bounds).tolist()


def rle_encode(bm: IndexBitmap) -> bytes:
    """One byte holding the first bit, then every run length as a LEB128 varint."""
    first, runs = bit_runs(bm.bits)
    return bytes([first]) + b"".join(encode_varint(n) for n in runs)


def rle_decode(payload: bytes, d: int) -> IndexBitmap:
    if not payload:
        raise CodecError("empty RLE payload")
    if payload[0] > 1:
        raise CodecError("RLE initial bit must be 0 or 1")
    bit = bool(payload[0])
    runs = []
    pos, total = 1, 0
    while pos < len(payload):
        n, pos = decode_varint(payload, pos)
        if n == 0:
            raise CodecError("zero-length run")
        total += n
        if total > d:
            raise CodecError(f"runs exceed d={d}")
        runs.append(n)
    if total != d:
        raise CodecError(f"runs sum to {total}, expected d={d}")
    values = np.resize(np.array([bit, not bit]), len(runs))
    return IndexBitmap(np.repeat(values, runs))


def rle_bits(payload: bytes) -> int:
    """Logical size: 1 bit for the initial value plus every varint byte."""
    return 1 + 8 * (len(payload) - 1)


# -- Huffman ---------------------------------------------------------------

class HuffmanCodec:
    """Canonical prefix code over a fixed symbol alphabet."""

    def __init__(self, lengths: dict):
        if not lengths:
            raise CodecError("empty alphabet")
        self.lengths = dict(lengths)
        order = sorted(self.lengths, key=lambda s: (self.lengths[s], s))
        self.codes = {}
        code, prev = 0, self.lengths[order[0]]
        for i, sym in enumerate(order):
            ln = self.lengths[sym]
            if i:
                code = (code + 1) << (ln - prev)
            self.codes[sym] = code
            prev = ln
        self._symbols = order
        self._first = {}
        for i, sym in enumerate(order):
            ln = self.lengths[sym]
            if ln not in self._first:
                self._first[ln] = (self.codes[sym], i)
        self._count = {ln: sum(1 for s in order if self.lengths[s] == ln) for ln in self._first}
        self._bits = {
            s: np.array([(c >> (self.lengths[s] - 1 - j)) & 1 for j in range(self.lengths[s])], dtype=np.uint8)
            for s, c in self.codes.items()
        }

    @classmethod
    def from_frequencies(cls, freqs: dict) -> "HuffmanCodec":
        items = [(f, i, s) for i, (s, f) in enumerate(sorted(freqs.items())) if f > 0]
        if not items:
            raise CodecError("no symbol has a positive frequency")
        if len(items) == 1:
            return cls({items[0][2]: 1})
        lengths = {s: 0 for _, _, s in items}
        heap = [(f, i, [s]) for f, i, s in items]
        heapq.heapify(heap)
        tie = itertools.count(len(items))
        while len(heap) > 1:
            f1, _, a = heapq.heappop(heap)
            f2, _, b = heapq.heappop(heap)
            for s in a + b:
                lengths[s] += 1
            heapq.heappush(heap, (f1 + f2, next(tie), a + b))
        return cls(lengths)

    def code_string(self, sym) -> str:
        return format(self.codes[sym], f"0{self.lengths[sym]}b")

    def encoded_length(self, symbols) -> int:
        try:
            return sum(self.lengths[s] for s in symbols)
        except KeyError as exc:
            raise CodecError(f"symbol {exc.args[0]!r} absent from codec") from None

    def encode(self, symbols) -> tuple[bytes, int]:
        """Bitstream (MSB-first within each byte) and its exact bit length."""
        try:
            parts = [self._bits[s] for s in symbols]
        except KeyError as exc:
            raise CodecError(f"symbol {exc.args[0]!r} absent from codec") from None
        if not parts:
            return b"", 0
        bits = np.concatenate(parts)
        return np.packbits(bits).tobytes(), int(bits.size)

    def decode(self, data: bytes, nbits: int, count: int | None = None) -> list:
        if nbits > 8 * len(data):
            raise CodecError("bitstream shorter than declared")
        bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))[:nbits].tolist()
        out = []
        code = ln = 0
        maxlen = max(self._first)
        for b in bits:
            code = (code << 1) | b
            ln += 1
            first = self._first.get(ln)
            if first is not None and 0 <= code - first[0] < self._count[ln]:
                out.append(self._symbols[first[1] + code - first[0]])
                code = ln = 0
            elif ln >= maxlen:
                raise CodecError("invalid code in bitstream")
        if ln:
            raise CodecError("truncated bitstream")
        if count is not None and len(out) != count:
            raise CodecError(f"decoded {len(out)} symbols, expected {count}")
        return out


def index_byte_counts(d: int) -> np.ndarray:
    """Byte histogram of the little-endian uint32 forms of 0..d-1."""
    if not 1 <= d <= 2**32:
        raise CodecError("d must lie in [1, 2^32]")
    counts = np.zeros(256, dtype=np.int64)
    step = 1 << 22
    for start in range(0, d, step):
        chunk = np.arange(start, min(start + step, d), dtype="<u4")
        counts += np.bincount(chunk.view(np.uint8), minlength=256)
    return counts


_HUFFMAN_CACHE: dict[int, HuffmanCodec] = {}


def huffman_build(d: int) -> HuffmanCodec:
    """Codec both ends derive from d alone; no table crosses the wire."""
    codec = _HUFFMAN_CACHE.get(d)
    if codec is None:
        counts = index_byte_counts(d)
        codec = HuffmanCodec.from_frequencies({i: int(c) for i, c in enumerate(counts) if c})
        _HUFFMAN_CACHE[d] = codec
    return codec


def huffman_encode(codec: HuffmanCodec, indices) -> tuple[bytes, int]:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= 2**32):
        raise CodecError("indices must fit in uint32")
    return codec.encode(idx.astype("<u4").view(np.uint8).tolist())


def huffman_decode(codec: HuffmanCodec, data: bytes, nbits: int, n: int | None = None) -> np.ndarray:
    count = None if n is None else 4 * n
    syms = codec.decode(data, nbits, count)
    if len(syms) % 4:
        raise CodecError("bitstream does not hold whole 32-bit indices")
    return np.array(syms, dtype=np.uint8).view("<u4").astype(np.int64)


# -- general-purpose byte compressors --------------------------------------

FRAME = struct.Struct("<BQ")


def _deflate(b: bytes) -> bytes:
    c = zlib.compressobj(9, zlib.DEFLATED, -15)
    return c.compress(b) + c.flush()


def _inflate(b: bytes) -> bytes:
    return zlib.decompress(b, -15)


BYTE_CODECS = {
    0: ("store", bytes, bytes),
    1: ("deflate", _deflate, _inflate),
    2: ("bz2", bz2.compress, bz2.decompress),
    3: ("lzma", lzma.compress, lzma.decompress),
}
BYTE_CODEC_IDS = {name: cid for cid, (name, _, _) in BYTE_CODECS.items()}


def byte_compress(payload: bytes, codec_id: int | str = "deflate") -> bytes:
    if isinstance(codec_id, str):
        if codec_id not in BYTE_CODEC_IDS:
            raise CodecError(f"unknown byte codec {codec_id!r}")
        codec_id = BYTE_CODEC_IDS[codec_id]
    if codec_id not in BYTE_CODECS:
        raise CodecError(f"unknown byte codec id {codec_id}")
    payload = bytes(payload)
    body = BYTE_CODECS[codec_id][1](payload) if payload else b""
    return FRAME.pack(codec_id, len(payload)) + body


def byte_decompress(framed: bytes) -> bytes:
    if len(framed) < FRAME.size:
        raise CodecError("truncated byte-codec frame")
    codec_id, n = FRAME.unpack_from(framed)
    if codec_id not in BYTE_CODECS:
        raise CodecError(f"unknown byte codec id {codec_id}")
    body = framed[FRAME.size:]
    if n == 0:
        if body:
            raise CodecError("trailing bytes after empty frame")
        return b""
    try:
        out = BYTE_CODECS[codec_id][2](body)
    except (zlib.error, OSError, lzma.LZMAError, ValueError, EOFError) as exc:
        raise CodecError(f"corrupt {BYTE_CODECS[codec_id][0]} body: {exc}") from None
    if len(out) != n:
        raise CodecError(f"decompressed {len(out)} bytes, frame declares {n}")
    return out


# -- stochastic quantization -----------------------------------------------

QHEADER = struct.Struct("<BII")  # bits, bucket, n


@dataclass(frozen=True, eq=False)
class QuantizedValues:
    """Per-bucket max-magnitude scales plus a sign and a b-bit level per value."""

    bits: int
    bucket: int
    scales: np.ndarray
    signs: np.ndarray
    levels: np.ndarray

    @property
    def n(self) -> int:
        return int(self.levels.size)

    def to_bytes(self) -> bytes:
        codes = (self.levels.astype(np.uint64) << np.uint64(1)) | self.signs.astype(np.uint64)
        return (
            QHEADER.pack(self.bits, self.bucket, self.n)
            + np.asarray(self.scales, dtype="<f4").tobytes()
            + pack_uint(codes, self.bits + 1)
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "QuantizedValues":
        if len(data) < QHEADER.size:
            raise CodecError("truncated quantizer header")
        bits, bucket, n = QHEADER.unpack_from(data)
        if not 1 <= bits <= 16 or bucket < 1:
            raise CodecError("corrupt quantizer header")
        nb = -(-n // bucket)
        off = QHEADER.size + 4 * nb
        if len(data) < off:
            raise CodecError("truncated quantizer scales")
        scales = np.frombuffer(data, dtype="<f4", count=nb, offset=QHEADER.size).copy()
        codes = unpack_uint(data[off:], n, bits + 1)
        if len(data) != off + (n * (bits + 1) + 7) // 8:
            raise CodecError("quantizer payload length mismatch")
        return cls(bits, bucket, scales, (codes & 1).astype(bool), codes >> 1)

    def value_bits(self) -> int:
        return 32 * self.scales.size + (self.bits + 1) * self.n

    def __eq__(self, other):
        return (
            isinstance(other, QuantizedValues)
            and (self.bits, self.bucket) == (other.bits, other.bucket)
            and np.array_equal(self.scales, other.scales)
            and np.array_equal(self.signs, other.signs)
            and np.array_equal(self.levels, other.levels)
        )


def _f32_ceil(x: np.ndarray) -> np.ndarray:
    f = x.astype(np.float32)
    low = f.astype(np.float64) < x
    f[low] = np.nextafter(f[low], np.float32(np.inf))
    return f


def quantize(values, bits: int = 7, bucket: int = 512, seed=0) -> QuantizedValues:
    """Unbiased stochastic rounding of |v| / scale onto 2^bits - 1 levels per bucket."""
    if not 1 <= bits <= 16:
        raise CodecError("bits must lie in [1, 16]")
    if bucket < 1:
        raise CodecError("bucket must be positive")
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    s = (1 << bits) - 1
    nb = -(-v.size // bucket)
    pad = np.zeros(nb * bucket)
    pad[: v.size] = np.abs(v)
    scales = _f32_ceil(pad.reshape(nb, bucket).max(axis=1)) if nb else np.zeros(0, np.float32)
    per = np.repeat(scales.astype(np.float64), bucket)[: v.size]
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(per > 0, np.abs(v) / per * s, 0.0)
    near = np.rint(x)
    on_level = np.abs(x - near) <= 1e-9 * np.maximum(1.0, near)
    lo = np.floor(x)
    up = make_rng(seed).random(v.size) < (x - lo)
    levels = np.where(on_level, near, lo + up)
    levels = np.clip(levels, 0, s).astype(np.int64)
    return QuantizedValues(bits, bucket, scales, np.signbit(v) & (levels > 0), levels)


def dequantize(q: QuantizedValues) -> np.ndarray:
    s = (1 << q.bits) - 1
    per = np.repeat(np.asarray(q.scales, dtype=np.float64), q.bucket)[: q.n]
    mag = per * q.levels / s
    return np.where(q.signs, -mag, mag)
