"""Simulated 4-worker SGD: how much the index policy matters once training runs."""

# %% one task, several exchanges
from sparsepack.harness import TrainConfig, run
from sparsepack.pipeline import CodecConfig

common = dict(model="logreg", d=2_000, steps=300, lr=0.5, l2=1e-2, seed=0)
runs = {
    "dense baseline": TrainConfig(sparsifier="none", **common),
    "Top-1% raw keys": TrainConfig(topr=0.01, **common),
    "Top-1% no memory": TrainConfig(topr=0.01, compensation=False, **common),
    "Top-1% Bloom P0": TrainConfig(topr=0.01, codec=CodecConfig("bloom-p0", fpr=0.01), **common),
    "Top-1% Bloom P2": TrainConfig(topr=0.01, codec=CodecConfig("bloom-p2", fpr=0.01), **common),
    "Top-1% Bloom naive": TrainConfig(topr=0.01, codec=CodecConfig("bloom-naive", fpr=0.05), **common),
}

# %% final loss against bits on the wire
base_bits = None
for name, cfg in runs.items():
    rep = run(cfg)
    base_bits = base_bits or rep.total_bits
    print(f"{name:20s} loss {rep.final_loss:10.4g}   bits {rep.total_bits / base_bits:7.2%} of dense")

# %% per-step metrics as CSV, ready for plotting
rep = run(runs["Top-1% Bloom P2"])
print(rep.to_csv().splitlines()[:4])
