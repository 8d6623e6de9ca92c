"""Sparse gradient <-> container, for every index method x value method pair.

The encoder knows the support S and, when available, the dense gradient it came
from.  It decides which positions T travel with values (S itself, the whole
positive set P, or an r-subset of P) and compresses the values at T.  The
decoder rebuilds T from the index payload alone, using the selection seed the
Bloom trailer carries.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import bloom
from .codecs import (
    CodecError, QuantizedValues, byte_compress, byte_decompress, dequantize,
    huffman_build, huffman_decode, huffman_encode, quantize, rle_decode, rle_encode,
)
from .container import (
    BLOOM_TRAILER, HUFFMAN_HEADER, INDEX_IDS, VALUE_IDS, Container, pack, unpack,
)
from .curvefit import FitConfig, FitModel, value_compress, value_decompress
from .tensor import IndexBitmap, SparseGradient, to_bitmap

BLOOM_POLICIES = ("bloom-naive", "bloom-p0", "bloom-p1", "bloom-p2", "bloom-pd")


@dataclass(frozen=True)
class CodecConfig:
    index: str = "raw"
    value: str = "raw"
    fpr: float = 1e-3
    degree: int = 5
    segments: int = 8
    bits: int = 7
    bucket: int = 512
    pd_variant: str = "leftmost"
    sort: bool = True  # fit values in sorted order (ships a reorder map)

    def __post_init__(self):
        if self.index not in INDEX_IDS:
            raise ValueError(f"unknown index method {self.index!r}")
        if self.value not in VALUE_IDS:
            raise ValueError(f"unknown value method {self.value!r}")
        if self.pd_variant not in bloom.PD_VARIANTS:
            raise ValueError(f"unknown deterministic variant {self.pd_variant!r}")

    def as_dict(self) -> dict:
        return asdict(self)


def derive_seeds(seed) -> tuple[int, int, int]:
    """Hash, selection and quantizer seeds from one master seed."""
    a, b, c = np.random.SeedSequence(int(seed)).generate_state(3, dtype=np.uint64)
    return int(a), int(b), int(c)


# -- index side ------------------------------------------------------------

def _bloom_positions(bf, policy, r, sel_seed, variant):
    P = bloom.positive_scan(bf)
    if policy == "bloom-p0":
        return P
    if policy == "bloom-naive":
        return P[:r]
    if policy == "bloom-p1":
        return bloom.p1_select(P, r, sel_seed)
    if policy == "bloom-p2":
        return bloom.p2_select(P, bf, r, sel_seed)
    return bloom.pd_select(P, r, variant)


def _encode_index(sg: SparseGradient, cfg: CodecConfig, seeds):
    """Index payload and the positions whose values must travel."""
    name = cfg.index
    if name == "raw":
        return sg.support.astype("<u4").tobytes(), sg.support
    if name == "bitmap":
        return to_bitmap(sg).to_bytes(), sg.support
    if name == "rle":
        return rle_encode(to_bitmap(sg)), sg.support
    if name == "huffman":
        data, nbits = huffman_encode(huffman_build(sg.dim), sg.support)
        return HUFFMAN_HEADER.pack(nbits) + data, sg.support
    bf = bloom.build_for(sg.support, sg.dim, cfg.fpr, seeds[0])
    variant = bloom.PD_VARIANTS.index(cfg.pd_variant)
    T = _bloom_positions(bf, name, sg.r, seeds[1], cfg.pd_variant)
    return bf.to_bytes() + BLOOM_TRAILER.pack(seeds[1], variant), T


def _decode_index(c: Container) -> np.ndarray:
    name, p, d, r = c.index_name, c.index_payload, c.d, c.r
    if name == "raw":
        if len(p) != 4 * r:
            raise CodecError(f"raw index holds {len(p)} bytes for {r} keys")
        return np.frombuffer(p, dtype="<u4").astype(np.int64)
    if name == "bitmap":
        return np.flatnonzero(IndexBitmap.from_bytes(p, d).bits)
    if name == "rle":
        return np.flatnonzero(rle_decode(p, d).bits)
    if name == "huffman":
        if len(p) < HUFFMAN_HEADER.size:
            raise CodecError("truncated Huffman header")
        (nbits,) = HUFFMAN_HEADER.unpack_from(p)
        return huffman_decode(huffman_build(d), p[HUFFMAN_HEADER.size:], nbits, r)
    try:
        bf, used = bloom.BloomFilter.from_bytes(p, d)
    except ValueError as exc:
        raise CodecError(str(exc)) from None
    if len(p) != used + BLOOM_TRAILER.size:
        raise CodecError("Bloom payload trailer missing or oversized")
    sel_seed, variant = BLOOM_TRAILER.unpack_from(p, used)
    if variant >= len(bloom.PD_VARIANTS):
        raise CodecError(f"unknown deterministic variant id {variant}")
    return _bloom_positions(bf, name, r, sel_seed, bloom.PD_VARIANTS[variant])


# -- value side ------------------------------------------------------------

def _encode_values(v, cfg: CodecConfig, seeds):
    name = cfg.value
    if name == "raw":
        return v.astype("<f4").tobytes(), None
    if name == "deflate":
        return byte_compress(v.astype("<f4").tobytes(), "deflate"), None
    if name == "quant":
        return quantize(v, cfg.bits, cfg.bucket, seeds[2]).to_bytes(), None
    kind = "poly" if name == "fit-poly" else "dexp"
    model, reorder = value_compress(v, FitConfig(kind, cfg.degree, cfg.segments, cfg.sort))
    return model.to_bytes(), reorder


def _f32(data: bytes, n: int) -> np.ndarray:
    if len(data) != 4 * n:
        raise CodecError(f"{len(data)} value bytes for {n} values")
    return np.frombuffer(data, dtype="<f4").astype(np.float64)


def _decode_values(c: Container, n: int) -> np.ndarray:
    name, p = c.value_name, c.value_payload
    if name == "raw":
        return _f32(p, n)
    if name == "deflate":
        return _f32(byte_decompress(p), n)
    if name == "quant":
        q = QuantizedValues.from_bytes(p)
        if q.n != n:
            raise CodecError(f"{q.n} quantized values for {n} positions")
        return dequantize(q)
    out = value_decompress(FitModel.from_bytes(p), c.reorder)
    if out.size != n:
        raise CodecError(f"fit model yields {out.size} values for {n} positions")
    return out


# -- public entry points ---------------------------------------------------

def compress(sg: SparseGradient, cfg: CodecConfig = CodecConfig(), seed=0, dense=None) -> Container:
    """Container for ``sg``.

    ``dense`` supplies true values at positions outside the support (the
    false positives of a Bloom index); without it those positions carry 0.
    """
    seeds = derive_seeds(seed)
    iid, vid = INDEX_IDS[cfg.index], VALUE_IDS[cfg.value]
    if sg.r == 0:
        return Container(sg.dim, 0, iid, b"", vid, b"")
    index, T = _encode_index(sg, cfg, seeds)
    if cfg.index == "bloom-naive":
        v = sg.values  # assigned to the first r positives at the receiver
    elif dense is not None:
        dense = np.asarray(dense, dtype=np.float64)
        if dense.size != sg.dim:
            raise ValueError(f"dense gradient has {dense.size} entries, expected {sg.dim}")
        v = dense[T]
    else:
        v = sg.to_dense()[T]
    value, reorder = _encode_values(np.asarray(v, dtype=np.float64), cfg, seeds)
    return Container(sg.dim, sg.r, iid, index, vid, value, reorder)


def decompress(c: Container) -> SparseGradient:
    if c.r == 0:
        if c.index_payload or c.value_payload:
            raise CodecError("payload bytes in an empty container")
        return SparseGradient(c.d, [], [])
    T = _decode_index(c)
    if T.size and (T.min() < 0 or T.max() >= c.d):
        raise CodecError("decoded index outside [0, d)")
    if np.any(np.diff(T) <= 0):
        raise CodecError("decoded indices are not strictly increasing")
    if c.index_name in ("raw", "bitmap", "rle", "huffman") and T.size != c.r:
        raise CodecError(f"index decodes to {T.size} positions, header says r={c.r}")
    values = _decode_values(c, T.size)
    return SparseGradient(c.d, T, values)


def roundtrip(sg: SparseGradient, cfg: CodecConfig = CodecConfig(), seed=0, dense=None):
    """compress -> pack -> unpack -> decompress; returns (decoded, packed bytes)."""
    data = pack(compress(sg, cfg, seed, dense))
    return decompress(unpack(data)), data

