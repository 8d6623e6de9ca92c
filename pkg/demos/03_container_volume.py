"""Where the bits go: one gradient through every index x value pairing."""

# %% a gradient and its Top-1%
import numpy as np

from sparsepack.container import INDEX_METHODS, pack, unpack, volume
from sparsepack.pipeline import CodecConfig, compress, decompress
from sparsepack.tensor import make_rng, squared_error, top_r

d = 20_000
g = make_rng(5).standard_normal(d) * np.exp(-np.linspace(0, 3, d))
sg = top_r(g, 200)
base, norm = squared_error(g, sg), float(sg.values @ sg.values)


def excess(out):
    # error against the dense gradient beyond the Top-r loss, per unit |g_S|^2
    return (squared_error(g, out) - base) / norm


# %% indices with raw float32 values
print(f"{'index':12s} {'bits_index':>10s} {'bits_total':>10s} {'vs dense':>9s} {'excess':>10s}")
for index in INDEX_METHODS.values():
    cfg = CodecConfig(index=index, fpr=1e-3)
    c = compress(sg, cfg, seed=0, dense=g)
    out = decompress(unpack(pack(c)))
    v = volume(c)
    print(f"{index:12s} {v.index_bits:10d} {v.total_bits:10d} {v.ratio_dense:9.4f} "
          f"{excess(out):+10.2e}")

# %% values under a bitmap index
for value in ("raw", "deflate", "quant", "fit-poly", "fit-dexp"):
    c = compress(sg, CodecConfig(index="bitmap", value=value), seed=0)
    v = volume(c)
    out = decompress(c)
    print(f"{value:9s} value {v.value_bits:6d}  reorder {v.reorder_bits:5d}  "
          f"metadata {v.metadata_bits:4d}  excess {excess(out):+.2e}")

# %% the container names its own methods
blob = pack(compress(sg, CodecConfig("bloom-p2", "fit-poly"), seed=0, dense=g))
c = unpack(blob)
print(len(blob), "bytes:", c.index_name, "+", c.value_name, "reorder" if c.reorder else "")
