"""Bloom-filter index compression and the policies that turn a filter back into indices.

A filter built over the support S of a sparse gradient answers membership for
every position in [0, d).  Scanning the whole domain yields the positive set
P = S plus false positives.  The policies differ in which members of P carry
values on the wire:

* naive: the r values of S are assigned, in scan order, to the first r hits.
  A single false positive shifts every later value.
* P0: values travel for all of P, so S is recovered exactly.
* P1: r members of P are drawn uniformly at random.
* P2: r members are drawn from conflict sets, smallest first.
* deterministic: a contiguous r-slice of P (leftmost, middle, rightmost).

The receiver rebuilds P from the filter alone; P1 and P2 additionally need the
selection seed, which travels in the payload trailer.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .tensor import DenseGradient, SparseGradient, make_rng

_LN2 = math.log(2.0)

_M1 = np.uint64(0x9E3779B97F4A7C15)
_M2 = np.uint64(0xBF58476D1CE4E5B9)
_M3 = np.uint64(0x94D049BB133111EB)
_STEP = np.uint64(0xD1B54A32D192ED03)

HEADER = struct.Struct("<QHQQ")  # m, k, seed_a, seed_b


class SelectionError(ValueError):
    """Fewer positives than the number of indices requested."""


def bloom_params(epsilon: float, r: int) -> tuple[int, int]:
    """Filter size m and hash count k for target false-positive rate ``epsilon``.

    Both are rounded up.  The ceiling on k can push the achieved rate a few
    percent above the target at large epsilon; see ``fpr_estimate``.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon={epsilon} must lie in (0, 1)")
    if r < 1:
        raise ValueError("r must be at least 1")
    ln_inv = math.log(1.0 / epsilon)
    m = math.ceil(r * ln_inv / _LN2**2)
    k = math.ceil(ln_inv / _LN2)
    return max(m, 1), max(k, 1)


def fpr_estimate(k: int, r: int, m: int) -> float:
    """(1 - exp(-k r / m))^k."""
    if m < 1:
        raise ValueError("m must be at least 1")
    return (1.0 - math.exp(-k * r / m)) ** k


def _mix64(x: np.ndarray) -> np.ndarray:
    # splitmix64 finaliser; uint64 arithmetic wraps
    z = x + _M1
    z = (z ^ (z >> np.uint64(30))) * _M2
    z = (z ^ (z >> np.uint64(27))) * _M3
    return z ^ (z >> np.uint64(31))


def hash_seeds(seed) -> tuple[int, int]:
    """Two 64-bit hash seeds drawn from ``seed``."""
    a, b = make_rng(seed).integers(0, 2**64, size=2, dtype=np.uint64, endpoint=False)
    return int(a), int(b)


@dataclass(frozen=True, eq=False)
class BloomFilter:
    """m-bit array probed at k seeded hash positions per item."""

    m: int
    k: int
    seeds: tuple[int, int]
    d: int
    bits: np.ndarray

    def __post_init__(self):
        if self.m < 1 or self.k < 1:
            raise ValueError("m and k must be at least 1")
        bits = np.array(self.bits, dtype=bool).reshape(-1)
        if bits.size != self.m:
            raise ValueError(f"bit array has {bits.size} entries, expected {self.m}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "seeds", (int(self.seeds[0]), int(self.seeds[1])))

    @classmethod
    def empty(cls, m: int, k: int, seeds, d: int) -> "BloomFilter":
        return cls(m, k, seeds, d, np.zeros(m, dtype=bool))

    def positions(self, items) -> np.ndarray:
        """Bit positions of each item, shape (len(items), k)."""
        return hash_positions(items, self.m, self.k, self.seeds)

    def contains(self, items) -> np.ndarray:
        return _members(self, items)

    def __contains__(self, item) -> bool:
        return bool(self.contains([item])[0])

    @property
    def set_bits(self) -> int:
        return int(np.count_nonzero(self.bits))

    def to_bytes(self) -> bytes:
        body = np.packbits(self.bits, bitorder="little").tobytes()
        return HEADER.pack(self.m, self.k, *self.seeds) + body

    @classmethod
    def from_bytes(cls, data: bytes, d: int) -> tuple["BloomFilter", int]:
        """Parse a filter from the front of ``data``; returns it with the bytes consumed."""
        if len(data) < HEADER.size:
            raise ValueError("truncated Bloom filter header")
        m, k, sa, sb = HEADER.unpack_from(data)
        if m < 1 or k < 1:
            raise ValueError("corrupt Bloom filter header")
        nbytes = (m + 7) // 8
        end = HEADER.size + nbytes
        if len(data) < end:
            raise ValueError("truncated Bloom filter bit array")
        raw = np.frombuffer(data, dtype=np.uint8, count=nbytes, offset=HEADER.size)
        bits = np.unpackbits(raw, bitorder="little")[:m]
        return cls(m, k, (sa, sb), d, bits), end

    def __eq__(self, other):
        return (
            isinstance(other, BloomFilter)
            and (self.m, self.k, self.seeds, self.d) == (other.m, other.k, other.seeds, other.d)
            and np.array_equal(self.bits, other.bits)
        )


def hash_positions(items, m: int, k: int, seeds) -> np.ndarray:
    x = np.asarray(items, dtype=np.uint64).reshape(-1)
    base = _mix64(x ^ np.uint64(seeds[0]))
    i = np.arange(k, dtype=np.uint64) * _STEP
    # one full mix per probe; linear probe sequences (a + i b mod m) cycle
    # when gcd(b, m) > 1 and overshoot the target rate at small m
    z = _mix64((base[:, None] + i[None, :]) ^ np.uint64(seeds[1]))
    return (z % np.uint64(m)).astype(np.int64)


def build(support, m: int, k: int, seeds, d: int) -> BloomFilter:
    """Insert every index of ``support``; bit setting is idempotent and order free."""
    s = np.asarray(support, dtype=np.int64).reshape(-1)
    if s.size and (s.min() < 0 or s.max() >= d):
        raise IndexError(f"support index outside [0, {d})")
    bits = np.zeros(m, dtype=bool)
    if s.size:
        bits[hash_positions(s, m, k, seeds).ravel()] = True
    return BloomFilter(m, k, seeds, d, bits)


def build_for(support, d: int, epsilon: float, seed) -> BloomFilter:
    """Size a filter for ``epsilon`` with bloom_params and build it."""
    r = max(len(support), 1)
    m, k = bloom_params(epsilon, r)
    return build(support, m, k, hash_seeds(seed), d)


def _members(bf: BloomFilter, items: np.ndarray) -> np.ndarray:
    """Boolean membership; probes one hash at a time and drops items at the first miss."""
    x = np.asarray(items, dtype=np.uint64).reshape(-1)
    alive = np.arange(x.size)
    base = _mix64(x ^ np.uint64(bf.seeds[0]))
    m, sb = np.uint64(bf.m), np.uint64(bf.seeds[1])
    steps = np.arange(bf.k, dtype=np.uint64) * _STEP
    for i in range(bf.k):
        z = _mix64((base + steps[i]) ^ sb)
        keep = bf.bits[(z % m).astype(np.int64)]
        alive, base = alive[keep], base[keep]
        if alive.size == 0:
            break
    out = np.zeros(x.size, dtype=bool)
    out[alive] = True
    return out


def positive_scan(bf: BloomFilter, d: int | None = None, chunk: int = 1 << 16) -> np.ndarray:
    """Every i in [0, d) the filter reports as a member, ascending."""
    d = bf.d if d is None else d
    hits = []
    for start in range(0, d, chunk):
        idx = np.arange(start, min(start + chunk, d), dtype=np.int64)
        hits.append(idx[_members(bf, idx)])
    return np.concatenate(hits) if hits else np.zeros(0, dtype=np.int64)


def _conflict_groups(P, bf: BloomFilter) -> tuple[list[int], list[list[int]]]:
    if len(P) == 0:
        return [], []
    P = np.asarray(P, dtype=np.int64)
    pos = bf.positions(P)
    pairs = np.unique(np.stack([pos.ravel(), np.repeat(P, bf.k)], axis=1), axis=0)
    bits, starts = np.unique(pairs[:, 0], return_index=True)
    members = pairs[:, 1].tolist()
    bounds = starts.tolist() + [len(members)]
    return bits.tolist(), [members[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def conflict_sets(P, bf: BloomFilter) -> dict[int, np.ndarray]:
    """Map each set bit j to the members of P hashing to j."""
    bits, groups = _conflict_groups(P, bf)
    return {j: np.array(g, dtype=np.int64) for j, g in zip(bits, groups)}


# -- reconstruction policies ------------------------------------------------

def naive_reconstruct(bf: BloomFilter, values, d: int | None = None) -> SparseGradient:
    """Assign ``values`` in order to the filter's hits; leftover hits get 0."""
    d = bf.d if d is None else d
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    P = positive_scan(bf, d)
    out = np.zeros(P.size)
    n = min(P.size, values.size)
    out[:n] = values[:n]
    return SparseGradient(d, P, out)


def p0_encode(g, bf: BloomFilter) -> np.ndarray:
    """Values for every positive.

    With a dense ``g`` the false positives carry their true gradient values;
    with a SparseGradient (inherently sparse input) they carry 0.
    """
    P = positive_scan(bf)
    if isinstance(g, SparseGradient):
        return g.to_dense()[P]
    dense = g.values if isinstance(g, DenseGradient) else np.asarray(g, dtype=np.float64)
    return dense[P]


def p0_decode(bf: BloomFilter, values, d: int | None = None) -> SparseGradient:
    d = bf.d if d is None else d
    P = positive_scan(bf, d)
    values = np.asarray(values, dtype=np.float64)
    if values.size != P.size:
        raise SelectionError(f"{P.size} positives but {values.size} values")
    return SparseGradient(d, P, values)


def _need(P, r):
    if len(P) < r:
        raise SelectionError(f"cannot select {r} indices from {len(P)} positives")


def p1_select(P, r: int, seed) -> np.ndarray:
    """Uniform random r-subset of P."""
    P = np.asarray(P, dtype=np.int64)
    _need(P, r)
    return np.sort(make_rng(seed).choice(P, size=r, replace=False))


def p2_select(P, bf: BloomFilter, r: int, seed) -> np.ndarray:
    """Conflict-set guided selection of r positives.

    Sets are visited smallest first.  A set that is a singleton from the start
    holds a certain true positive.  Other sets drop members already chosen and
    contribute one random survivor per pass; passes repeat until r are chosen.
    """
    P = np.asarray(P, dtype=np.int64)
    _need(P, r)
    rng = make_rng(seed)
    bits, groups = _conflict_groups(P, bf)
    sizes = [len(g) for g in groups]
    order = np.lexsort((bits, sizes)).tolist() if bits else []
    pending = [(groups[i], sizes[i] == 1) for i in order]
    chosen: set[int] = set()
    while len(chosen) < r and pending:
        carry = []
        for members, singleton in pending:
            if len(chosen) >= r:
                break
            if singleton:
                chosen.add(members[0])
                continue
            alive = [x for x in members if x not in chosen]
            if not alive:
                continue
            pick = alive[int(rng.integers(len(alive)))]
            chosen.add(pick)
            if len(alive) > 1:
                carry.append((alive, False))
        pending = carry
    if len(chosen) < r:
        raise SelectionError("conflict sets exhausted before r indices were chosen")
    return np.array(sorted(chosen), dtype=np.int64)


PD_VARIANTS = ("leftmost", "middle", "rightmost")


def pd_select(P, r: int, variant: str = "leftmost") -> np.ndarray:
    """Contiguous r-slice of the sorted positives."""
    P = np.sort(np.asarray(P, dtype=np.int64))
    _need(P, r)
    if variant == "leftmost":
        start = 0
    elif variant == "middle":
        start = (P.size - r) // 2
    elif variant == "rightmost":
        start = P.size - r
    else:
        raise ValueError(f"unknown deterministic variant {variant!r}")
    return P[start:start + r]
