"""Gradient representations, index-form conversions and the Top-r / Random-r sparsifiers."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TENSOR_MAGIC = b"DRT1"


class InconsistentIndexError(ValueError):
    """Bitmap popcount and value count disagree."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator from an explicit seed; a Generator passes through."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        raise ValueError("an explicit seed is required")
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True, eq=False)
class DenseGradient:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).reshape(-1)
        if v.size < 1:
            raise ValueError("a dense gradient needs d >= 1")
        if not np.all(np.isfinite(v)):
            raise ValueError("gradient values must be finite")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def d(self) -> int:
        return int(self.values.size)

    def __eq__(self, other):
        return isinstance(other, DenseGradient) and np.array_equal(self.values, other.values)

    def __len__(self):
        return self.d


@dataclass(frozen=True, eq=False)
class SparseGradient:
    dim: int
    support: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        dim = int(self.dim)
        s = np.array(self.support, dtype=np.int64).reshape(-1)
        v = np.array(self.values, dtype=np.float64).reshape(-1)
        if dim < 1:
            raise ValueError("dim must be positive")
        if s.size != v.size:
            raise ValueError(f"{s.size} support entries but {v.size} values")
        if s.size:
            if s[0] < 0 or s[-1] >= dim:
                raise IndexError(f"support must lie in [0, {dim})")
            if np.any(np.diff(s) <= 0):
                raise ValueError("support must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "support", _frozen(s))
        object.__setattr__(self, "values", _frozen(v))

    @property
    def r(self) -> int:
        return int(self.support.size)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.support] = self.values
        return out

    @classmethod
    def from_dense(cls, dense, support) -> "SparseGradient":
        dense = np.asarray(dense, dtype=np.float64)
        support = np.asarray(support, dtype=np.int64)
        return cls(dense.size, support, dense[support])

    def __eq__(self, other):
        return (
            isinstance(other, SparseGradient)
            and self.dim == other.dim
            and np.array_equal(self.support, other.support)
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True, eq=False)
class IndexBitmap:
    bits: np.ndarray
    popcount: int = field(init=False)

    def __post_init__(self):
        b = np.array(self.bits, dtype=bool).reshape(-1)
        object.__setattr__(self, "bits", _frozen(b))
        object.__setattr__(self, "popcount", int(np.count_nonzero(b)))

    @property
    def d(self) -> int:
        return int(self.bits.size)

    def to_bytes(self) -> bytes:
        """Pack LSB-first: bit i lives in byte i // 8 at position i % 8."""
        return np.packbits(self.bits, bitorder="little").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, d: int) -> "IndexBitmap":
        need = (d + 7) // 8
        if len(data) != need:
            raise ValueError(f"bitmap of {d} bits needs {need} bytes, got {len(data)}")
        bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
        return cls(bits[:d])

    def __str__(self):
        return "".join("1" if b else "0" for b in self.bits)

    def __eq__(self, other):
        return isinstance(other, IndexBitmap) and np.array_equal(self.bits, other.bits)


def _as_values(g) -> np.ndarray:
    if isinstance(g, DenseGradient):
        return g.values
    return DenseGradient(g).values


def _check_r(r: int, d: int) -> int:
    r = int(r)
    if not 1 <= r <= d:
        raise IndexError(f"r={r} outside [1, {d}]")
    return r


def top_r(g, r: int) -> SparseGradient:
    """Keep the r largest-magnitude entries; magnitude ties go to the lower index."""
    v = _as_values(g)
    r = _check_r(r, v.size)
    order = np.argsort(-np.abs(v), kind="stable")
    support = np.sort(order[:r])
    return SparseGradient(v.size, support, v[support])


def random_r(g, r: int, seed) -> SparseGradient:
    """Keep a uniformly random r-subset of positions (zeros included)."""
    v = _as_values(g)
    r = _check_r(r, v.size)
    support = np.sort(make_rng(seed).choice(v.size, size=r, replace=False))
    return SparseGradient(v.size, support, v[support])


def to_bitmap(sg: SparseGradient) -> IndexBitmap:
    bits = np.zeros(sg.dim, dtype=bool)
    bits[sg.support] = True
    return IndexBitmap(bits)


def from_bitmap(bm: IndexBitmap, values) -> SparseGradient:
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if bm.popcount != values.size:
        raise InconsistentIndexError(
            f"bitmap has {bm.popcount} set bits but {values.size} values were given"
        )
    return SparseGradient(bm.d, np.flatnonzero(bm.bits), values)


def squared_error(g, approx) -> float:
    """||g - approx||^2 where either side may be dense or sparse."""
    a = g.to_dense() if isinstance(g, SparseGradient) else np.asarray(_as_values(g))
    b = approx.to_dense() if isinstance(approx, SparseGradient) else np.asarray(approx, dtype=np.float64)
    return float(np.sum((a - b) ** 2))


# -- tensor file ------------------------------------------------------------

def encode_tensor(values) -> bytes:
    v = np.asarray(values, dtype="<f4").reshape(-1)
    return TENSOR_MAGIC + struct.pack("<Q", v.size) + v.tobytes()


def decode_tensor(data: bytes) -> np.ndarray:
    if len(data) < 12 or data[:4] != TENSOR_MAGIC:
        raise ValueError("not a DRT1 tensor file")
    (d,) = struct.unpack_from("<Q", data, 4)
    if len(data) != 12 + 4 * d:
        raise ValueError(f"tensor file declares {d} values but holds {(len(data) - 12) / 4:g}")
    return np.frombuffer(data, dtype="<f4", offset=12).astype(np.float64)


def write_tensor(path, values) -> None:
    Path(path).write_bytes(encode_tensor(values))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())
