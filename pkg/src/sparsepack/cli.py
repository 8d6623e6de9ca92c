"""sparsepack command line: compress, decompress, sweep, bench, train.

Every command prints its fully resolved configuration as one JSON line on
stderr; CSV goes to ``--out`` or stdout.  Exit status is 0 on success, 1 on
I/O, format or codec errors, 2 on bad usage.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bloom
from .codecs import CodecError
from .container import ContainerError, pack, unpack, volume
from .harness import MODELS, TrainConfig, run
from .pipeline import CodecConfig, compress, decompress
from .tensor import SparseGradient, make_rng, random_r, read_tensor, squared_error, top_r, write_tensor

DEFAULT_SEED = 0
INDEX_CHOICES = ("none", "bitmap", "rle", "huffman", "bloom-p0", "bloom-p1", "bloom-p2", "bloom-pd", "bloom-naive")
VALUE_CHOICES = ("none", "fit-poly", "fit-dexp", "quant", "deflate-slot")
POLICY_CHOICES = ("p0", "p1", "p2", "pd", "naive")
_INDEX_ALIAS = {"none": "raw"}
_VALUE_ALIAS = {"none": "raw", "deflate-slot": "deflate"}


class UsageError(Exception):
    pass


def _codec_args(p: argparse.ArgumentParser):
    p.add_argument("--index", choices=INDEX_CHOICES, default="none")
    p.add_argument("--policy", choices=POLICY_CHOICES, help="shorthand for --index bloom-<policy>")
    p.add_argument("--value", choices=VALUE_CHOICES, default="none")
    p.add_argument("--fpr", type=float, default=1e-3)
    p.add_argument("--degree", type=int, default=5)
    p.add_argument("--segments", type=int, default=8)
    p.add_argument("--bits", type=int, default=7)
    p.add_argument("--bucket", type=int, default=512)
    p.add_argument("--pd-variant", choices=bloom.PD_VARIANTS, default="leftmost")
    p.add_argument("--sort", action=argparse.BooleanOptionalAction, default=True,
                   help="sort values before curve fitting (adds a reorder map)")
    p.add_argument("--unsafe-naive", action="store_true", help="allow the naive Bloom policy")


def _codec_config(a) -> CodecConfig:
    index = a.index
    if getattr(a, "policy", None):
        index = f"bloom-{a.policy}"
    if index == "bloom-naive" and not a.unsafe_naive:
        raise UsageError("--index bloom-naive shifts values onto false positives; pass --unsafe-naive to use it")
    return CodecConfig(
        index=_INDEX_ALIAS.get(index, index), value=_VALUE_ALIAS.get(a.value, a.value),
        fpr=a.fpr, degree=a.degree, segments=a.segments, bits=a.bits, bucket=a.bucket,
        pd_variant=a.pd_variant, sort=a.sort,
    )


def _echo(command: str, resolved: dict):
    print(json.dumps({"command": command, **resolved}, sort_keys=True, default=str), file=sys.stderr)


def _writer(path):
    fh = open(path, "w", newline="") if path else sys.stdout
    return fh, csv.writer(fh, lineterminator="\n")


def _close(fh):
    if fh is not sys.stdout:
        fh.close()


def _sparsify(g, topr, sparsifier, seed) -> SparseGradient:
    if topr is None:
        return SparseGradient(g.size, np.flatnonzero(g), g[g != 0])
    r = max(1, round(topr * g.size))
    return top_r(g, r) if sparsifier == "topr" else random_r(g, r, seed)


# -- commands --------------------------------------------------------------

def cmd_compress(a) -> int:
    cfg = _codec_config(a)
    _echo("compress", {"input": a.input, "output": a.output, "topr": a.topr,
                       "sparsifier": a.sparsifier, "seed": a.seed, **cfg.as_dict()})
    g = read_tensor(a.input)
    sg = _sparsify(g, a.topr, a.sparsifier, a.seed)
    c = compress(sg, cfg, a.seed, dense=g)
    data = pack(c)
    Path(a.output).write_bytes(data)
    decompress(unpack(data))  # validate before reporting success
    v = volume(c)
    print(json.dumps({"d": c.d, "r": c.r, **v.as_dict()}, sort_keys=True))
    return 0


def cmd_decompress(a) -> int:
    _echo("decompress", {"input": a.input, "output": a.output})
    sg = decompress(unpack(Path(a.input).read_bytes()))
    write_tensor(a.output, sg.to_dense())
    return 0


def cmd_sweep(a) -> int:
    grid = a.fpr_grid or [1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 2e-1]
    policies = a.policies or ["p0", "p1", "p2", "pd"]
    if "naive" in policies and not a.unsafe_naive:
        raise UsageError("the naive policy needs --unsafe-naive")
    _echo("sweep", {"d": a.d, "topr": a.topr, "fpr_grid": grid, "policies": policies,
                    "seeds": a.seeds, "seed": a.seed})
    r = max(1, round(a.topr * a.d))
    fh, w = _writer(a.out)
    w.writerow(["source", "policy", "fpr", "relative_volume", "reconstruction_error"])
    for source in ("topr", "randomr"):
        for pol in policies:
            for eps in grid:
                cfg = CodecConfig(index=f"bloom-{pol}", fpr=eps)
                vol = err = 0.0
                for s in range(a.seeds):
                    rng = make_rng(a.seed + s)
                    g = rng.standard_normal(a.d)
                    sg = top_r(g, r) if source == "topr" else random_r(g, r, rng)
                    # the sparse tensor is the input, so false positives carry 0
                    c = compress(sg, cfg, a.seed + s)
                    out = decompress(unpack(pack(c)))
                    # error of the index policy alone: compare with the float32 wire values
                    ref = SparseGradient(sg.dim, sg.support, sg.values.astype(np.float32))
                    vol += volume(c).ratio_dense
                    err += squared_error(ref, out) / max(float(ref.values @ ref.values), 1e-300)
                w.writerow([source, pol, repr(eps), repr(vol / a.seeds), repr(err / a.seeds)])
    _close(fh)
    return 0


def _median_ns(fn, reps):
    fn()  # warm-up
    ts = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        fn()
        ts.append(time.perf_counter_ns() - t0)
    return int(np.median(ts))


def _bench_row(w, label, sg, cfg, seed, reps, dense=None):
    c = compress(sg, cfg, seed, dense)
    data = pack(c)
    enc = _median_ns(lambda: pack(compress(sg, cfg, seed, dense)), reps)
    dec = _median_ns(lambda: decompress(unpack(data)), reps)
    v = volume(c)
    w.writerow([label, cfg.index, cfg.value, enc, dec, v.index_bits, v.value_bits,
                v.reorder_bits, v.total_bits])


def cmd_bench(a) -> int:
    _echo("bench", {"d": a.d, "topr": a.topr, "reps": a.reps, "fpr": a.fpr, "seed": a.seed})
    rng = make_rng(a.seed)
    g = rng.standard_normal(a.d)
    r = max(1, round(a.topr * a.d))
    sg = top_r(g, r)
    fh, w = _writer(a.out)
    w.writerow(["input", "index", "value", "encode_ns", "decode_ns", "bits_index",
                "bits_value", "bits_reorder", "bits_total"])
    # identity baseline: dense float32 copy
    raw = g.astype("<f4")
    enc = _median_ns(lambda: raw.tobytes(), a.reps)
    blob = raw.tobytes()
    dec = _median_ns(lambda: np.frombuffer(blob, dtype="<f4").astype(np.float64), a.reps)
    w.writerow(["dense", "identity", "identity", enc, dec, 0, 32 * a.d, 0, 32 * a.d])
    for index in ("raw", "bitmap", "rle", "huffman", "bloom-p0", "bloom-p1", "bloom-p2", "bloom-pd"):
        _bench_row(w, "topr", sg, CodecConfig(index=index, fpr=a.fpr), a.seed, a.reps, g)
    for value in ("fit-poly", "fit-dexp", "quant", "deflate"):
        _bench_row(w, "topr", sg, CodecConfig(value=value), a.seed, a.reps)
    # RLE sees runs: the same density as contiguous blocks
    start = rng.integers(0, a.d - r + 1)
    clustered = SparseGradient(a.d, np.arange(start, start + r), g[start:start + r])
    _bench_row(w, "clustered", clustered, CodecConfig(index="rle"), a.seed, a.reps)
    _bench_row(w, "uniform", random_r(g, r, rng), CodecConfig(index="rle"), a.seed, a.reps)
    _close(fh)
    return 0


def cmd_train(a) -> int:
    codec = _codec_config(a)
    cfg = TrainConfig(
        model=a.model, d=a.d, workers=a.workers, batch=a.batch, shard=a.shard, steps=a.steps,
        lr=a.lr, lr_decay=a.lr_decay, sparsifier=a.sparsifier, topr=a.topr, codec=codec,
        compensation=a.compensation, l2=a.l2, seed=a.seed,
    )
    if cfg.sparsifier == "none":
        cfg = replace(cfg, codec=CodecConfig())
    _echo("train", cfg.as_dict())
    report = run(cfg)
    fh, _ = _writer(a.out)
    report.to_csv(fh)
    _close(fh)
    return 0


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sparsepack", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compress", help="tensor file (.drt) -> container (.drc)")
    c.add_argument("input")
    c.add_argument("output")
    c.add_argument("--topr", type=float, default=None,
                   help="keep this fraction of entries; default keeps the non-zeros")
    c.add_argument("--sparsifier", choices=("topr", "randomr"), default="topr")
    c.add_argument("--seed", type=int, default=DEFAULT_SEED)
    _codec_args(c)
    c.set_defaults(fn=cmd_compress)

    d = sub.add_parser("decompress", help="container (.drc) -> tensor file (.drt)")
    d.add_argument("input")
    d.add_argument("output")
    d.set_defaults(fn=cmd_decompress)

    s = sub.add_parser("sweep", help="volume and error of each Bloom policy over an FPR grid")
    s.add_argument("--d", type=int, default=10_000)
    s.add_argument("--topr", type=float, default=0.01)
    s.add_argument("--fpr-grid", type=float, nargs="+")
    s.add_argument("--policies", choices=POLICY_CHOICES, nargs="+")
    s.add_argument("--seeds", type=int, default=20)
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.add_argument("--unsafe-naive", action="store_true")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_sweep)

    b = sub.add_parser("bench", help="encode/decode time and bits per method")
    b.add_argument("--d", type=int, default=36_864)
    b.add_argument("--topr", type=float, default=0.01)
    b.add_argument("--fpr", type=float, default=1e-3)
    b.add_argument("--reps", type=int, default=5)
    b.add_argument("--seed", type=int, default=DEFAULT_SEED)
    b.add_argument("--out")
    b.set_defaults(fn=cmd_bench)

    t = sub.add_parser("train", help="simulated data-parallel SGD; per-step CSV")
    t.add_argument("--model", choices=MODELS, default="logreg")
    t.add_argument("--d", type=int, default=1000)
    t.add_argument("--workers", type=int, default=4)
    t.add_argument("--batch", type=int, default=32)
    t.add_argument("--shard", type=int, default=256)
    t.add_argument("--steps", type=int, default=200)
    t.add_argument("--lr", type=float, default=0.5)
    t.add_argument("--lr-decay", type=float, default=0.0)
    t.add_argument("--l2", type=float, default=1e-3)
    t.add_argument("--sparsifier", choices=("none", "topr", "randomr"), default="topr")
    t.add_argument("--topr", type=float, default=0.01)
    t.add_argument("--compensation", action=argparse.BooleanOptionalAction, default=True)
    t.add_argument("--seed", type=int, default=DEFAULT_SEED)
    t.add_argument("--out")
    _codec_args(t)
    t.set_defaults(fn=cmd_train)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    try:
        return a.fn(a)
    except UsageError as exc:
        parser.error(str(exc))  # exits with status 2
    except (OSError, ValueError, CodecError, ContainerError, IndexError) as exc:
        print(f"sparsepack {a.command}: {exc}", file=sys.stderr)
        return 1

