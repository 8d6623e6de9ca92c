"""Value compression by sorting and curve fitting.

The r values of a sparse gradient are sorted in descending order.  The
non-negative head and the magnitudes of the negative tail (taken with the
largest magnitude first) are each a smooth, decaying curve.  Each curve is cut
into segments at points of maximum chord deviation and every segment is
replaced by a few regression coefficients.  A permutation packed at
ceil(log2 n) bits per entry restores the original order.

Positions inside a segment are 1-based (x = 1..n_s).  Polynomials are solved
in a Chebyshev basis on the segment mapped to [-1, 1] and shipped as monomial
coefficients of that scaled variable.
"""

from __future__ import annotations

import heapq
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .codecs import CodecError, pack_uint, unpack_uint

KIND_POLY = 0
KIND_DEXP = 1
KIND_NAMES = {KIND_POLY: "poly", KIND_DEXP: "dexp"}

REORDER_HEADER = struct.Struct("<BI")  # width, count


class FitError(ValueError):
    """A regression could not be solved; ``condition`` carries a diagnostic when known."""

    def __init__(self, msg, condition: float | None = None):
        super().__init__(msg)
        self.condition = condition


# -- sorting ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SortedView:
    values: np.ndarray
    order: np.ndarray  # sorted position -> original position
    l: int  # number of non-negative entries

    def restore(self, sorted_values=None) -> np.ndarray:
        src = self.values if sorted_values is None else np.asarray(sorted_values, dtype=np.float64)
        out = np.empty_like(src)
        out[self.order] = src
        return out

    def tails(self) -> tuple[np.ndarray, np.ndarray]:
        """Non-negative head and negative-tail magnitudes, both descending."""
        return self.values[: self.l], -self.values[self.l:][::-1]


def sort_view(values) -> SortedView:
    """Stable descending sort; equal values keep their original order."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise ValueError("values must be finite")
    order = np.argsort(-v, kind="stable")
    return SortedView(v[order], order, int(np.count_nonzero(v >= 0)))


# -- segmentation ----------------------------------------------------------

def chord_deviation(y) -> np.ndarray:
    """(chord_i - y_i)^2 for the line through the first and last points."""
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    if n < 3:
        return np.zeros(n)
    slope = (y[-1] - y[0]) / (n - 1)
    chord = y[0] + slope * np.arange(n)
    return (chord - y) ** 2


def _split_candidate(y, start, end):
    dev = chord_deviation(y[start:end])
    if dev.size == 0:
        return 0.0, start
    i = int(np.argmax(dev))
    scale = max(float(np.max(np.abs(y[start:end]))), 1e-300)
    # rounding noise on exactly linear data must not trigger a split
    if dev[i] <= (1e-12 * scale) ** 2:
        return 0.0, start
    return float(dev[i]), start + i


def segment_curves(curves, max_segments: int, degree: int) -> list[list[tuple[int, int]]]:
    """Greedy chord segmentation shared across several curves.

    Every non-empty curve starts as one segment.  The segment whose chord
    deviation peak is largest is split there (the peak closes the left piece)
    until ``max_segments`` is reached, or no split leaves both pieces with at
    least ``degree + 1`` points.
    """
    min_pts = degree + 1
    out = [[] for _ in curves]
    heap = []
    count = 0
    for ci, y in enumerate(curves):
        if len(y):
            dev, at = _split_candidate(y, 0, len(y))
            heapq.heappush(heap, (-dev, ci, 0, len(y), at))
            count += 1
    while heap:
        negdev, ci, a, b, at = heapq.heappop(heap)
        left, right = (a, at + 1), (at + 1, b)
        ok = (
            count < max_segments
            and -negdev > 0
            and left[1] - left[0] >= min_pts
            and right[1] - right[0] >= min_pts
        )
        if not ok:
            out[ci].append((a, b))
            continue
        y = curves[ci]
        for s, e in (left, right):
            dev, pos = _split_candidate(y, s, e)
            heapq.heappush(heap, (-dev, ci, s, e, pos))
        count += 1
    return [sorted(s) for s in out]


def segment(view: SortedView, max_segments: int, degree: int = 5) -> list[int]:
    """Segment end positions over both tails, in fit order (head first)."""
    head, tail = view.tails()
    segs = segment_curves([head, tail], max_segments, degree)
    return [e for _, e in segs[0]] + [view.l + e for _, e in segs[1]]


# -- error bounds and knot heuristic --------------------------------------

def curvature_variation(y, spacing: float = 1.0) -> float:
    """M = |(y1 - y2) - (y_{n-1} - y_n)| / spacing, a proxy for Var(y')."""
    y = np.asarray(y, dtype=np.float64)
    if y.size < 4:
        raise ValueError("need at least 4 points")
    return abs((y[0] - y[1]) - (y[-2] - y[-1])) / spacing


def knot_heuristic(y, kind: str = "linear", spacing: float = 1.0) -> int:
    M = curvature_variation(y, spacing)
    if kind == "linear":
        p = math.ceil(2.0 * math.sqrt(M))
    elif kind == "constant":
        p = math.ceil(M / math.sqrt(2.0) - 1.0)
    else:
        raise ValueError(f"unknown fit kind {kind!r}")
    return max(p, 1)


def linear_fit_error_bound(y, p: int, spacing: float = 1.0) -> float:
    """2M / p^2: sup-norm error reachable by a linear spline with p knots."""
    if p < 1:
        raise ValueError("p must be at least 1")
    return 2.0 * curvature_variation(y, spacing) / p**2


def constant_fit_error_bound(y, p: int, spacing: float = 1.0) -> float:
    """M / (2p + 2) for piecewise-constant splines."""
    if p < 1:
        raise ValueError("p must be at least 1")
    return curvature_variation(y, spacing) / (2 * p + 2)


# -- polynomial regression -------------------------------------------------

def _scaled_positions(n: int) -> np.ndarray:
    x = np.arange(1, n + 1, dtype=np.float64)
    if n == 1:
        return np.zeros(1)
    return (2.0 * x - (n + 1)) / (n - 1)


@dataclass(frozen=True, eq=False)
class PolyFit:
    degree: int
    n: int
    scaled: np.ndarray  # ascending monomial coefficients in t in [-1, 1]
    residual: float

    @property
    def coef(self) -> np.ndarray:
        """Coefficients in the raw position x = 1..n, highest power first."""
        if self.n == 1:
            return self.scaled[::-1].copy()
        alpha, beta = 2.0 / (self.n - 1), -(self.n + 1) / (self.n - 1)
        p = np.polynomial.Polynomial(self.scaled)(np.polynomial.Polynomial([beta, alpha]))
        c = np.zeros(self.degree + 1)
        c[: p.coef.size] = p.coef
        return c[::-1]

    def __call__(self, scaled=None) -> np.ndarray:
        c = self.scaled if scaled is None else scaled
        return np.polynomial.polynomial.polyval(_scaled_positions(self.n), c)


def fit_poly(values, degree: int = 5) -> PolyFit:
    """Least-squares polynomial over positions 1..n."""
    y = np.asarray(values, dtype=np.float64).reshape(-1)
    n = y.size
    if degree < 0:
        raise FitError("degree must be non-negative")
    if n < degree + 1:
        raise FitError(f"{n} points cannot determine a degree-{degree} polynomial")
    t = _scaled_positions(n)
    V = np.polynomial.chebyshev.chebvander(t, degree)
    sol, _, rank, sv = np.linalg.lstsq(V, y, rcond=None)
    cond = float(sv[0] / sv[-1]) if sv.size and sv[-1] > 0 else math.inf
    if rank < degree + 1:
        raise FitError(f"rank-deficient design (rank {rank} < {degree + 1})", condition=cond)
    scaled = np.zeros(degree + 1)
    conv = np.polynomial.chebyshev.cheb2poly(sol)  # may come back trimmed
    scaled[: conv.size] = conv
    fit = PolyFit(degree, n, scaled, 0.0)
    resid = float(np.sum((fit() - y) ** 2))
    return PolyFit(degree, n, scaled, resid)


# -- double exponential regression ----------------------------------------

@dataclass(frozen=True)
class DExpFit:
    a: float
    b: float
    c: float
    d: float
    residual: float
    converged: bool
    iterations: int

    @property
    def params(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c, self.d])

    def __call__(self, x) -> np.ndarray:
        return dexp_eval(self.params, x)


def dexp_eval(params, x) -> np.ndarray:
    a, b, c, d = (float(p) for p in params)
    x = np.asarray(x, dtype=np.float64)
    return a * np.exp(np.clip(b * x, -745, 700)) + c * np.exp(np.clip(d * x, -745, 700))


def _loglinear(x, y):
    """Single exponential A e^{Bx} through log|y|; returns (A, B)."""
    sign = 1.0 if np.sum(y) >= 0 else -1.0
    ly = np.log(np.maximum(np.abs(y), 1e-300))
    B, lnA = np.polyfit(x, ly, 1)
    return sign * math.exp(min(lnA, 700.0)), B


def _dexp_starts(u, y):
    n = y.size
    h = n // 2
    up_a, up_b = _loglinear(u[:h], y[:h])
    lo_c, lo_d = _loglinear(u[h:], y[h:])
    starts = [np.array([up_a, up_b, lo_c, lo_d])]
    # peel: slow component from the lower half, fast one from what is left above it
    rest = y[:h] - lo_c * np.exp(np.clip(lo_d * u[:h], -745, 700))
    if np.all(rest * np.sign(up_a) > 0):
        pa, pb = _loglinear(u[:h], rest)
        starts.insert(0, np.array([pa, pb, lo_c, lo_d]))
    starts.append(np.array([0.5 * up_a, up_b, 0.5 * up_a, 0.2 * up_b]))
    return starts


def _lm(u, y, p0, max_iter):
    """Damped Gauss-Newton; damping grows x10 on a rejected step."""
    p = p0.astype(np.float64).copy()

    def model(p):
        ea = np.exp(np.clip(p[1] * u, -745, 700))
        ec = np.exp(np.clip(p[3] * u, -745, 700))
        f = p[0] * ea + p[2] * ec
        J = np.stack([ea, p[0] * u * ea, ec, p[2] * u * ec], axis=1)
        return f, J

    f, J = model(p)
    r = y - f
    cost = float(r @ r)
    if not (np.isfinite(cost) and np.all(np.isfinite(J))):
        return p, math.inf, False, 0
    floor = 1e-30 * max(float(y @ y), 1e-300)
    lam = 1e-3
    for it in range(1, max_iter + 1):
        if cost <= floor:
            return p, cost, True, it - 1
        A = J.T @ J
        g = J.T @ r
        diag = np.maximum(np.diag(A), 1e-300)
        improved = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            pn = p + step
            fn, Jn = model(pn)
            rn = y - fn
            cn = float(rn @ rn)
            if np.isfinite(cn) and cn < cost and np.all(np.isfinite(Jn)):
                improved = True
                break
            lam *= 10.0
        if not improved:
            return p, cost, True, it
        small = np.all(np.abs(step) <= 1e-12 * (np.abs(p) + 1e-12))
        rel = (cost - cn) / max(cost, 1e-300)
        p, f, J, r, cost = pn, fn, Jn, rn, cn
        lam = max(lam / 10.0, 1e-12)
        if small or rel < 1e-12:
            return p, cost, True, it
    return p, cost, cost <= floor, max_iter


def fit_dexp(values, max_iter: int = 500) -> DExpFit:
    """Fit y = a e^{bx} + c e^{dx} over x = 1..n; the faster-decaying term comes first."""
    y = np.asarray(values, dtype=np.float64).reshape(-1)
    n = y.size
    if n < 4:
        raise FitError("double-exponential fit needs at least 4 points")
    x = np.arange(1, n + 1, dtype=np.float64)
    u = x / n  # fit on (0, 1] for conditioning, rescale exponents afterwards
    best = None
    # wild starting points overflow exp; such trials are rejected, not reported
    with np.errstate(over="ignore", invalid="ignore"):
        for p0 in _dexp_starts(u, y):
            if not np.all(np.isfinite(p0)):
                continue
            p, cost, conv, its = _lm(u, y, p0, max_iter)
            if best is None or cost < best[1]:
                best = (p, cost, conv, its)
    if best is None or not np.all(np.isfinite(best[0])):
        raise FitError("double-exponential fit diverged")
    p, cost, conv, its = best
    if not conv:
        raise FitError(f"double-exponential fit did not converge in {max_iter} iterations")
    a, b, c, d = p[0], p[1] / n, p[2], p[3] / n
    if b > d:
        a, b, c, d = c, d, a, b
    return DExpFit(float(a), float(b), float(c), float(d), float(cost), bool(conv), int(its))


# -- reorder map -----------------------------------------------------------

def reorder_width(bound: int) -> int:
    """ceil(log2 bound) bits per entry."""
    if bound < 1:
        raise ValueError("bound must be positive")
    return (bound - 1).bit_length()


def reorder_encode(order, bound: int) -> bytes:
    order = np.asarray(order, dtype=np.int64).reshape(-1)
    if order.size and (order.min() < 0 or order.max() >= bound):
        raise IndexError(f"reorder entry outside [0, {bound})")
    if np.unique(order).size != order.size:
        raise ValueError("reorder map has repeated entries")
    w = reorder_width(bound)
    return REORDER_HEADER.pack(w, order.size) + pack_uint(order, w)


def reorder_decode(payload: bytes) -> np.ndarray:
    if len(payload) < REORDER_HEADER.size:
        raise CodecError("truncated reorder header")
    w, n = REORDER_HEADER.unpack_from(payload)
    body = payload[REORDER_HEADER.size:]
    if len(body) != (n * w + 7) // 8:
        raise CodecError("reorder payload length mismatch")
    order = unpack_uint(body, n, w)
    if np.unique(order).size != n:
        raise CodecError("reorder map is not a permutation")
    return order


def reorder_bits(payload: bytes) -> int:
    w, n = REORDER_HEADER.unpack_from(payload)
    return w * n


# -- end-to-end value compression -----------------------------------------

@dataclass(frozen=True)
class FitConfig:
    kind: str = "poly"  # "poly" or "dexp"
    degree: int = 5
    segments: int = 8
    sort: bool = True


@dataclass(eq=False)
class FitModel:
    kind: int
    degree: int
    l: int
    bounds: list  # segment end positions in fit order
    coefs: list  # float32 array per segment
    max_dev: list | None = field(default=None)  # per-segment sup deviation, encoder side only

    @property
    def n(self) -> int:
        return self.bounds[-1] if self.bounds else 0

    @property
    def segments(self) -> list[tuple[int, int]]:
        starts = [0] + self.bounds[:-1]
        return list(zip(starts, self.bounds))

    def coefficient_count(self) -> int:
        return sum(c.size for c in self.coefs)

    def to_bytes(self) -> bytes:
        head = struct.pack("<BH", self.kind, len(self.bounds))
        bnd = np.asarray(self.bounds, dtype="<u4").tobytes()
        coefs = np.concatenate(self.coefs).astype("<f4").tobytes() if self.coefs else b""
        return head + bnd + struct.pack("<B", self.degree) + coefs + struct.pack("<I", self.l)

    @classmethod
    def from_bytes(cls, data: bytes) -> "FitModel":
        try:
            kind, nseg = struct.unpack_from("<BH", data, 0)
            if kind not in KIND_NAMES:
                raise CodecError(f"unknown fit kind {kind}")
            off = 3
            bounds = np.frombuffer(data, dtype="<u4", count=nseg, offset=off).astype(np.int64).tolist()
            off += 4 * nseg
            (degree,) = struct.unpack_from("<B", data, off)
            off += 1
        except struct.error:
            raise CodecError("truncated fit payload") from None
        except ValueError as exc:
            if isinstance(exc, CodecError):
                raise
            raise CodecError("truncated fit payload") from None
        if any(b <= a for a, b in zip([0] + bounds[:-1], bounds)):
            raise CodecError("fit boundaries must be increasing")
        sizes = [_coef_count(kind, degree, e - s) for s, e in zip([0] + bounds[:-1], bounds)]
        total = sum(sizes)
        if len(data) != off + 4 * total + 4:
            raise CodecError("fit payload length mismatch")
        flat = np.frombuffer(data, dtype="<f4", count=total, offset=off)
        (l,) = struct.unpack_from("<I", data, off + 4 * total)
        if bounds and l > bounds[-1]:
            raise CodecError("sign split beyond value count")
        coefs = np.split(flat.copy(), np.cumsum(sizes)[:-1]) if sizes else []
        return cls(kind, degree, l, bounds, coefs)

    def metadata_bits(self) -> int:
        return 8 * (3 + 4 * len(self.bounds) + 1 + 4)

    def value_bits(self) -> int:
        return 32 * self.coefficient_count()


def _coef_count(kind, degree, length):
    return 4 if kind == KIND_DEXP else min(degree, length - 1) + 1


def _eval_segment(kind, coefs, length):
    c = np.asarray(coefs, dtype=np.float64)
    if kind == KIND_DEXP:
        return dexp_eval(c, np.arange(1, length + 1, dtype=np.float64))
    return np.polynomial.polynomial.polyval(_scaled_positions(length), c)


def _fit_curve_segments(y, segs, kind, degree):
    coefs, devs = [], []
    for s, e in segs:
        piece = y[s:e]
        if kind == KIND_DEXP:
            f = fit_dexp(piece)
            with np.errstate(over="ignore"):
                c = f.params.astype(np.float32)
            if not np.all(np.isfinite(c)) or not np.all(np.isfinite(_eval_segment(kind, c, piece.size))):
                raise FitError("double-exponential coefficients overflow float32")
        else:
            c = fit_poly(piece, min(degree, piece.size - 1)).scaled.astype(np.float32)
        coefs.append(c)
        devs.append(float(np.max(np.abs(_eval_segment(kind, c, piece.size) - piece))))
    return coefs, devs


def value_compress(values, config: FitConfig = FitConfig()) -> tuple[FitModel, bytes | None]:
    """Fit model plus packed reorder map (None when ``config.sort`` is off).

    A double-exponential fit that fails, or a tail too short for it, falls back
    to the piecewise polynomial.
    """
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise ValueError("nothing to compress")
    if config.sort:
        view = sort_view(v)
        curves = list(view.tails())
        l = view.l
        reorder = reorder_encode(view.order, v.size)
    else:
        curves, l, reorder = [v, np.zeros(0)], v.size, None

    if config.kind == "dexp":
        try:
            if any(0 < len(c) < 5 for c in curves):
                raise FitError("tail too short for a double exponential")
            segs = [[(0, len(c))] if len(c) else [] for c in curves]
            parts = [_fit_curve_segments(c, s, KIND_DEXP, 3) for c, s in zip(curves, segs)]
            return _assemble(KIND_DEXP, 3, l, segs, parts), reorder
        except FitError:
            pass
    elif config.kind != "poly":
        raise ValueError(f"unknown fit kind {config.kind!r}")
    segs = segment_curves(curves, max(config.segments, 1), config.degree)
    parts = [_fit_curve_segments(c, s, KIND_POLY, config.degree) for c, s in zip(curves, segs)]
    return _assemble(KIND_POLY, config.degree, l, segs, parts), reorder


def _assemble(kind, degree, l, segs, parts):
    bounds, coefs, devs = [], [], []
    offset = 0
    for curve_segs, (cs, ds) in zip(segs, parts):
        bounds += [offset + e for _, e in curve_segs]
        coefs += cs
        devs += ds
        offset = l
    return FitModel(kind, degree, l, bounds, coefs, devs)


def value_decompress(model: FitModel, reorder: bytes | None = None) -> np.ndarray:
    fitted = np.empty(model.n)
    for (s, e), c in zip(model.segments, model.coefs):
        fitted[s:e] = _eval_segment(model.kind, c, e - s)
    signed = np.concatenate([fitted[: model.l], -fitted[model.l:][::-1]])
    if reorder is None:
        return signed
    order = reorder_decode(reorder)
    if order.size != signed.size:
        raise CodecError(f"reorder map has {order.size} entries for {signed.size} values")
    out = np.empty_like(signed)
    out[order] = signed
    return out
