"""Simulated data-parallel SGD with a compressed gradient exchange.

Every worker draws a mini-batch from its own shard, adds its residual memory
(error feedback), sparsifies, packs the result into a container, and the
unpacked reconstructions are averaged into one update applied by all
workers.  Times and bit counts are recorded per step.

With ``sparsifier="none"`` nothing is compressed: the exact 64-bit gradient is
exchanged and billed at 32 bits per coordinate, the dense baseline.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .container import pack, unpack, volume
from .pipeline import CodecConfig, compress, decompress
from .tensor import make_rng, random_r, top_r

CSV_COLUMNS = (
    "step", "loss", "bits_index", "bits_value", "bits_reorder",
    "bits_total", "t_encode_ns", "t_decode_ns",
)
MODELS = ("linreg", "logreg", "mlp")
SPARSIFIERS = ("none", "topr", "randomr")


@dataclass(frozen=True)
class TrainConfig:
    model: str = "logreg"
    d: int = 1000  # feature dimension; the MLP adds its hidden layer on top
    workers: int = 4
    batch: int = 32
    shard: int = 256
    steps: int = 200
    lr: float = 0.5
    lr_decay: float = 0.0  # lr_t = lr / (1 + lr_decay * t)
    sparsifier: str = "topr"
    topr: float = 0.01
    codec: CodecConfig = field(default_factory=CodecConfig)
    compensation: bool = True
    l2: float = 1e-3
    hidden: int = 16
    informative: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}")
        if self.sparsifier not in SPARSIFIERS:
            raise ValueError(f"unknown sparsifier {self.sparsifier!r}")
        if self.workers < 1 or self.batch < 1 or self.shard < 1 or self.steps < 0:
            raise ValueError("workers, batch and shard must be positive")
        if not 0 < self.topr <= 1:
            raise ValueError("topr must lie in (0, 1]")

    @property
    def params(self) -> int:
        if self.model == "mlp":
            return self.hidden * self.d + 2 * self.hidden + 1
        return self.d

    @property
    def r(self) -> int:
        return max(1, round(self.topr * self.params))

    def as_dict(self) -> dict:
        out = asdict(self)
        out["codec"] = self.codec.as_dict()
        return out


# -- models ----------------------------------------------------------------

def _logloss(z, y):
    # mean log(1 + exp(-y z)), stable for large |z|
    return float(np.mean(np.logaddexp(0.0, -y * z)))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class LinearRegression:
    def __init__(self, d, l2=0.0):
        self.dim, self.l2 = d, l2

    def init(self):
        return np.zeros(self.dim)

    def loss(self, w, X, y):
        r = X @ w - y
        return 0.5 * float(np.mean(r * r)) + 0.5 * self.l2 * float(w @ w)

    def grad(self, w, X, y):
        return X.T @ (X @ w - y) / y.size + self.l2 * w


class LogisticRegression:
    """Labels in {-1, +1}, L2 penalty."""

    def __init__(self, d, l2=1e-3):
        self.dim, self.l2 = d, l2

    def init(self):
        return np.zeros(self.dim)

    def loss(self, w, X, y):
        return _logloss(X @ w, y) + 0.5 * self.l2 * float(w @ w)

    def grad(self, w, X, y):
        s = -y * _sigmoid(-y * (X @ w))
        return X.T @ s / y.size + self.l2 * w


class MLP:
    """One tanh hidden layer and a logistic output; parameters flattened."""

    def __init__(self, d, hidden=16, l2=1e-3, seed=0):
        self.d, self.h, self.l2, self.seed = d, hidden, l2, seed
        self.dim = hidden * d + 2 * hidden + 1

    def init(self):
        rng = make_rng(self.seed)
        w = np.zeros(self.dim)
        w[: self.h * self.d] = rng.standard_normal(self.h * self.d) / np.sqrt(self.d)
        w[self.h * self.d + self.h: self.h * self.d + 2 * self.h] = rng.standard_normal(self.h) / np.sqrt(self.h)
        return w

    def _split(self, w):
        hd = self.h * self.d
        return w[:hd].reshape(self.h, self.d), w[hd:hd + self.h], w[hd + self.h:hd + 2 * self.h], w[-1]

    def loss(self, w, X, y):
        W1, b1, w2, b2 = self._split(w)
        z = np.tanh(X @ W1.T + b1) @ w2 + b2
        return _logloss(z, y) + 0.5 * self.l2 * float(w @ w)

    def grad(self, w, X, y):
        W1, b1, w2, b2 = self._split(w)
        H = np.tanh(X @ W1.T + b1)
        z = H @ w2 + b2
        s = -y * _sigmoid(-y * z) / y.size
        dH = np.outer(s, w2) * (1.0 - H * H)
        g = np.concatenate([(dH.T @ X).ravel(), dH.sum(axis=0), H.T @ s, [s.sum()]])
        return g + self.l2 * w


# -- data ------------------------------------------------------------------

@dataclass
class Task:
    model: object
    shards: list  # per-worker (X, y)
    seeds: list  # per-worker batch-stream seeds

    def batch_streams(self):
        return [make_rng(s) for s in self.seeds]

    def loss(self, w) -> float:
        return float(np.mean([self.model.loss(w, X, y) for X, y in self.shards]))


def make_task(cfg: TrainConfig) -> Task:
    """Per-worker shards; classification uses a Gaussian mixture with a sparse mean."""
    ss = np.random.SeedSequence(cfg.seed)
    data_ss, batch_ss, init_ss = ss.spawn(3)
    root = make_rng(int(data_ss.generate_state(1, np.uint64)[0]))
    informative = min(cfg.informative, cfg.d)
    if cfg.model == "linreg":
        w_star = np.zeros(cfg.d)
        w_star[root.choice(cfg.d, informative, replace=False)] = root.standard_normal(informative)
    else:
        mu = np.zeros(cfg.d)
        mu[root.choice(cfg.d, informative, replace=False)] = 2.0 / np.sqrt(informative)
    shards = []
    for wss in data_ss.spawn(cfg.workers):
        rng = make_rng(int(wss.generate_state(1, np.uint64)[0]))
        if cfg.model == "linreg":
            X = rng.standard_normal((cfg.shard, cfg.d))
            y = X @ w_star + 0.1 * rng.standard_normal(cfg.shard)
        else:
            y = np.where(rng.random(cfg.shard) < 0.5, -1.0, 1.0)
            X = y[:, None] * mu[None, :] + rng.standard_normal((cfg.shard, cfg.d))
        shards.append((X, y))
    if cfg.model == "linreg":
        model = LinearRegression(cfg.d, cfg.l2)
    elif cfg.model == "logreg":
        model = LogisticRegression(cfg.d, cfg.l2)
    else:
        model = MLP(cfg.d, cfg.hidden, cfg.l2, int(init_ss.generate_state(1, np.uint64)[0]))
    seeds = [int(s.generate_state(1, np.uint64)[0]) for s in batch_ss.spawn(cfg.workers)]
    return Task(model, shards, seeds)


# -- training loop ---------------------------------------------------------

@dataclass
class WorkerState:
    x: np.ndarray
    e: np.ndarray
    rng: np.random.Generator


@dataclass(frozen=True)
class StepMetrics:
    step: int
    loss: float
    bits_index: int
    bits_value: int
    bits_reorder: int
    bits_total: int
    t_encode_ns: int
    t_decode_ns: int


@dataclass
class RunReport:
    config: TrainConfig
    rows: list
    trace: list | None = None  # per step, per worker (gradient, reconstruction) when requested

    @property
    def losses(self) -> np.ndarray:
        return np.array([m.loss for m in self.rows])

    @property
    def final_loss(self) -> float:
        return self.rows[-1].loss

    @property
    def total_bits(self) -> int:
        return sum(m.bits_total for m in self.rows)

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for m in self.rows:
            w.writerow([m.step, repr(m.loss), m.bits_index, m.bits_value, m.bits_reorder,
                        m.bits_total, m.t_encode_ns, m.t_decode_ns])
        return buf.getvalue() if fh is None else ""


class StepError(RuntimeError):
    """A worker's gradient failed to compress or decode."""


def _step_seed(master, worker, step):
    return int(np.random.SeedSequence([master, worker, step]).generate_state(1, np.uint64)[0])


def _exchange(a, cfg: TrainConfig, seed):
    """What the other workers receive for gradient ``a``, with bits and timings."""
    if cfg.sparsifier == "none":
        return a.copy(), (0, 32 * a.size, 0, 32 * a.size), 0, 0
    t0 = time.perf_counter_ns()
    sg = top_r(a, cfg.r) if cfg.sparsifier == "topr" else random_r(a, cfg.r, seed)
    c = compress(sg, cfg.codec, seed, dense=a)
    data = pack(c)
    t1 = time.perf_counter_ns()
    out = decompress(unpack(data)).to_dense()
    t2 = time.perf_counter_ns()
    v = volume(c)
    return out, (v.index_bits, v.value_bits, v.reorder_bits, v.total_bits), t1 - t0, t2 - t1


def step(states, task: Task, cfg: TrainConfig, t: int, trace=None):
    """One synchronized update; returns the received mean and summed metrics."""
    recon, bits = [], np.zeros(4, dtype=np.int64)
    enc = dec = 0
    lr = cfg.lr / (1.0 + cfg.lr_decay * t)
    for i, (st, (X, y)) in enumerate(zip(states, task.shards)):
        idx = st.rng.integers(0, y.size, cfg.batch)
        g = task.model.grad(st.x, X[idx], y[idx])
        a = g + st.e if cfg.compensation else g
        try:
            c_hat, b, te, td = _exchange(a, cfg, _step_seed(cfg.seed, i, t))
        except Exception as exc:
            raise StepError(f"worker {i} step {t}: {exc}") from exc
        if cfg.compensation:
            st.e = a - c_hat
        if trace is not None:
            trace.append((i, t, g, c_hat))
        recon.append(c_hat)
        bits += b
        enc += te
        dec += td
    mean = np.sum(np.stack(recon), axis=0) / len(recon)
    for st in states:
        st.x = st.x - lr * mean
    x0 = states[0].x
    if not all(np.array_equal(st.x, x0) for st in states[1:]):
        raise StepError("workers diverged")
    return mean, bits, enc, dec


def run(cfg: TrainConfig, trace: bool = False) -> RunReport:
    task = make_task(cfg)
    x0 = task.model.init()
    states = [WorkerState(x0.copy(), np.zeros_like(x0), rng) for rng in task.batch_streams()]
    rows, tr = [], ([] if trace else None)
    for t in range(cfg.steps):
        _, bits, enc, dec = step(states, task, cfg, t, tr)
        rows.append(StepMetrics(t, task.loss(states[0].x), *(int(b) for b in bits), enc, dec))
    return RunReport(cfg, rows, tr)


def reference_sgd(cfg: TrainConfig) -> np.ndarray:
    """Plain synchronous mini-batch SGD on the same task; loss after every step."""
    task = make_task(cfg)
    w = task.model.init()
    streams = task.batch_streams()
    out = []
    for t in range(cfg.steps):
        grads = []
        for rng, (X, y) in zip(streams, task.shards):
            idx = rng.integers(0, y.size, cfg.batch)
            grads.append(task.model.grad(w, X[idx], y[idx]))
        w = w - cfg.lr / (1.0 + cfg.lr_decay * t) * np.mean(grads, axis=0)
        out.append(task.loss(w))
    return np.array(out)
