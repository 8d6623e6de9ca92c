"""Bloom-filter indices: what the receiver sees, and what each policy does with it."""

# %% a Top-1% gradient and its filter
import numpy as np

from sparsepack import bloom
from sparsepack.tensor import make_rng, squared_error, top_r, SparseGradient

d, r, eps = 10_000, 100, 0.01
g = make_rng(0).standard_normal(d)
sg = top_r(g, r)

m, k = bloom.bloom_params(eps, r)
bf = bloom.build_for(sg.support, d, eps, seed=1)
print(f"m={m} bits, k={k} hashes, {m / r:.2f} bits per index instead of 32")

# %% the positive set holds S plus roughly eps * (d - r) strangers
P = bloom.positive_scan(bf)
fp = np.setdiff1d(P, sg.support)
print(f"|P|={P.size}  false positives={fp.size}  expected about {eps * (d - r):.0f}")

# %% conflict sets: a bit touched by a single positive certifies that positive
groups = bloom.conflict_sets(P, bf)
certain = {int(v[0]) for v in groups.values() if len(v) == 1}
print(f"{len(certain)} positives certified by a singleton bit, all genuine: {certain <= set(sg.support)}")

# %% four ways to pick r positions out of P
# score: error against the dense gradient beyond what Top-r already loses, per unit |g_S|^2
base, scale = squared_error(g, sg), float(sg.values @ sg.values)


def excess(recon):
    return (squared_error(g, recon) - base) / scale


def error(T):
    T = np.sort(np.asarray(T))
    return excess(SparseGradient(d, T, g[T]))


picks = {
    "P0 (all of P)": P,
    "P1 (uniform r-subset)": bloom.p1_select(P, r, seed=2),
    "P2 (conflict-guided)": bloom.p2_select(P, bf, r, seed=2),
    "PD leftmost": bloom.pd_select(P, r, "leftmost"),
}
for name, T in picks.items():
    print(f"{name:24s} |T|={len(T):4d}  excess error {error(T):+.3f}")

# %% the naive receiver pairs value i with the i-th positive: values slide onto strangers
shifted = SparseGradient(d, P[:r], sg.values)
print(f"{'naive':24s} |T|={r:4d}  excess error {excess(shifted):+.3f}")
