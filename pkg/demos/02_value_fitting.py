"""Curve fitting as a value codec: sort, segment, fit, and count the bits."""

# %% sorted magnitudes of a Top-1% gradient fall on a smooth curve
import numpy as np

from sparsepack import curvefit as cf
from sparsepack.tensor import make_rng, top_r

g = make_rng(3).standard_normal(36_864) * np.exp(-np.linspace(0, 4, 36_864))
v = top_r(g, 369).values
view = cf.sort_view(v)
head, tail = view.tails()
print(f"{view.l} non-negative values, {len(tail)} negative; head {head[:3].round(3)} ...")

# %% chord segmentation splits where the curve bends away from its chord
ends = cf.segment(view, max_segments=8, degree=5)
print("segment ends:", ends)

# %% the curvature proxy suggests how many knots a linear spline needs
M = cf.curvature_variation(head)
p = cf.knot_heuristic(head, "linear")
print(f"M={M:.3f}  p={p}  linear-spline bound 2M/p^2={cf.linear_fit_error_bound(head, p):.4f}")

# %% piecewise polynomial vs. double exponential
for kind in ("poly", "dexp"):
    model, reorder = cf.value_compress(v, cf.FitConfig(kind=kind))
    out = cf.value_decompress(model, reorder)
    rel = np.linalg.norm(out - v) / np.linalg.norm(v)
    bits = model.value_bits() + cf.reorder_bits(reorder)
    print(f"{kind:5s} {model.coefficient_count():3d} coefficients, {bits} bits "
          f"({bits / (32 * v.size):.0%} of raw float32), relative error {rel:.3f}")

# %% four points on a line: two coefficients replace four floats
line = 0.6 * np.arange(1, 5) + 4.0
model, _ = cf.value_compress(line, cf.FitConfig(degree=1, segments=1, sort=False))
print("line fit, value bits:", model.value_bits(), "->", cf.value_decompress(model).round(4))
