import csv
import io
import math

import numpy as np
import pytest

from sparsepack import harness
from sparsepack.harness import (
    CSV_COLUMNS, MLP, StepError, TrainConfig, WorkerState, make_task, reference_sgd, run, step,
)
from sparsepack.pipeline import CodecConfig
from sparsepack.tensor import make_rng

SMALL = dict(model="logreg", d=500, workers=3, steps=40, seed=1)


def _numeric_grad(model, w, X, y, h=1e-6):
    g = np.zeros_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (model.loss(w + e, X, y) - model.loss(w - e, X, y)) / (2 * h)
    return g


@pytest.mark.parametrize("name", ["linreg", "logreg", "mlp"])
def test_gradients_match_finite_differences(name):
    cfg = TrainConfig(model=name, d=6, hidden=3, shard=20, workers=1)
    task = make_task(cfg)
    X, y = task.shards[0]
    w = task.model.init() + 0.1 * make_rng(0).standard_normal(task.model.dim)
    assert np.allclose(task.model.grad(w, X, y), _numeric_grad(task.model, w, X, y), atol=1e-7)


def test_mlp_parameter_count():
    assert MLP(10, hidden=4).dim == TrainConfig(model="mlp", d=10, hidden=4).params == 49


class TestTrajectories:
    def test_identity_equals_reference(self):
        cfg = TrainConfig(sparsifier="none", **SMALL)
        assert np.max(np.abs(run(cfg).losses - reference_sgd(cfg))) <= 1e-12

    def test_p0_at_tiny_rate_equals_top_r(self):
        common = dict(SMALL, sparsifier="topr", topr=0.02)
        raw = run(TrainConfig(codec=CodecConfig("raw", "raw"), **common))
        p0 = run(TrainConfig(codec=CodecConfig("bloom-p0", "raw", fpr=1e-9), **common))
        assert np.array_equal(raw.losses, p0.losses)

    @pytest.mark.parametrize("seed", range(3))
    def test_compensation_lowers_loss(self, seed):
        common = dict(model="logreg", d=1000, steps=150, sparsifier="topr", topr=0.01, seed=seed)
        on = run(TrainConfig(compensation=True, **common)).final_loss
        off = run(TrainConfig(compensation=False, **common)).final_loss
        assert on < off

    def test_top_r_uses_a_sliver_of_baseline_bits(self):
        common = dict(model="logreg", d=1000, steps=100, seed=2)
        base = run(TrainConfig(sparsifier="none", **common))
        top = run(TrainConfig(sparsifier="topr", topr=0.01, **common))
        assert top.total_bits < 0.05 * base.total_bits
        for rep in (base, top):
            assert rep.losses[-1] < 0.5 * rep.losses[0]

    def test_p2_index_economy(self):
        eps = 1e-3
        cfg = TrainConfig(model="logreg", d=10_000, steps=5, sparsifier="topr", topr=0.01,
                          codec=CodecConfig("bloom-p2", "raw", fpr=eps), seed=0)
        rep = run(cfg)
        raw_bits = 32 * cfg.r * cfg.workers
        factor = raw_bits / np.array([m.bits_index for m in rep.rows])
        assert factor == pytest.approx(32 * math.log(2) ** 2 / math.log(1 / eps), rel=1e-2)

    def test_randomr_and_mlp_run(self):
        rep = run(TrainConfig(model="mlp", d=50, hidden=4, steps=20, sparsifier="randomr", topr=0.2,
                              codec=CodecConfig("bloom-p1", "quant", fpr=0.01)))
        assert np.all(np.isfinite(rep.losses))


class TestResidualMemory:
    def _states(self, cfg):
        task = make_task(cfg)
        x0 = task.model.init()
        return task, [WorkerState(x0.copy(), np.zeros_like(x0), r) for r in task.batch_streams()]

    def test_residual_is_accumulated_error(self):
        cfg = TrainConfig(sparsifier="topr", topr=0.02, codec=CodecConfig("rle", "quant"), **SMALL)
        task, states = self._states(cfg)
        shadow = [np.zeros(cfg.d) for _ in states]
        for t in range(cfg.steps):
            trace = []
            step(states, task, cfg, t, trace)
            for i, _, g, c_hat in trace:
                shadow[i] += g - c_hat
        for st, sh in zip(states, shadow):
            assert np.allclose(st.e, sh, rtol=1e-12, atol=1e-12)
            assert np.any(st.e != 0)

    def test_no_residual_without_compensation(self):
        cfg = TrainConfig(sparsifier="topr", compensation=False, **SMALL)
        task, states = self._states(cfg)
        for t in range(5):
            step(states, task, cfg, t)
        assert all(np.all(st.e == 0) for st in states)

    def test_workers_agree(self):
        cfg = TrainConfig(sparsifier="randomr", topr=0.1, **SMALL)
        task, states = self._states(cfg)
        for t in range(5):
            step(states, task, cfg, t)
            assert all(np.array_equal(st.x, states[0].x) for st in states)

    def test_codec_failure_names_worker(self, monkeypatch):
        def broken(*a, **k):
            raise ValueError("boom")

        monkeypatch.setattr(harness, "compress", broken)
        cfg = TrainConfig(sparsifier="topr", **SMALL)
        task, states = self._states(cfg)
        with pytest.raises(StepError, match="worker 0 step 0"):
            step(states, task, cfg, 0)


class TestReport:
    def test_csv(self):
        rep = run(TrainConfig(sparsifier="topr", codec=CodecConfig("huffman", "fit-poly"), **SMALL))
        rows = list(csv.reader(io.StringIO(rep.to_csv())))
        assert tuple(rows[0]) == CSV_COLUMNS
        assert len(rows) == SMALL["steps"] + 1
        assert [float(r[1]) for r in rows[1:]] == rep.losses.tolist()
        for r in rows[1:]:
            bits = list(map(int, r[2:6]))
            assert bits[3] >= sum(bits[:3])

    def test_identity_bits(self):
        rep = run(TrainConfig(sparsifier="none", **SMALL))
        assert all(m.bits_total == 32 * 500 * 3 and m.bits_index == 0 for m in rep.rows)

    def test_deterministic(self):
        cfg = TrainConfig(sparsifier="topr", codec=CodecConfig("bloom-p2", "fit-poly", fpr=0.01), **SMALL)
        strip = lambda rep: [r.split(",")[:6] for r in rep.to_csv().splitlines()]
        assert strip(run(cfg)) == strip(run(cfg))
        assert strip(run(cfg)) != strip(run(TrainConfig(**{**cfg.__dict__, "seed": 2})))

    @pytest.mark.parametrize("kw", [{"model": "cnn"}, {"sparsifier": "dgc"}, {"topr": 0}, {"workers": 0}])
    def test_bad_config(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)
