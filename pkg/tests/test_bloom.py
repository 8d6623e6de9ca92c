import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsepack import bloom
from sparsepack.tensor import SparseGradient, make_rng, squared_error, top_r


class TestSizing:
    @pytest.mark.parametrize("eps, r, expected", [
        (0.5, 1, (2, 1)),
        (0.001, 1000, (14378, 10)),
        (0.01, 100, (959, 7)),
    ])
    def test_frozen_values(self, eps, r, expected):
        assert bloom.bloom_params(eps, r) == expected

    @pytest.mark.parametrize("eps", [0.0, 1.0, -0.1, 2.0])
    def test_epsilon_range(self, eps):
        with pytest.raises(ValueError):
            bloom.bloom_params(eps, 10)

    def test_m_at_least_k(self):
        for eps, r in itertools.product((0.9, 0.5, 1e-3, 1e-9), (1, 2, 50)):
            m, k = bloom.bloom_params(eps, r)
            assert m >= k >= 1

    def test_fpr_estimate(self):
        assert bloom.fpr_estimate(10, 0, 100) == 0.0
        assert bloom.fpr_estimate(10, 1000, 14378) == pytest.approx(9.98e-4, rel=2e-3)

    @given(st.integers(1, 20), st.integers(1, 5000), st.integers(1, 10**6))
    def test_fpr_monotone_in_r(self, k, r, m):
        assert bloom.fpr_estimate(k, r + 1, m) >= bloom.fpr_estimate(k, r, m)

    def test_rounding_stays_near_target(self):
        # ceil(k) moves k off the optimum for the rounded m, so the estimate can
        # overshoot slightly: by < 3% for eps <= 0.01 and < 11% up to eps = 0.5
        for eps in np.geomspace(1e-9, 0.5, 200):
            for r in (1, 3, 10, 100, 10_000):
                m, k = bloom.bloom_params(eps, r)
                limit = 1.03 if eps <= 0.01 else 1.11
                assert bloom.fpr_estimate(k, r, m) <= eps * limit


class TestFilter:
    def test_empty_support(self):
        bf = bloom.build([], 64, 3, (1, 2), 100)
        assert bf.set_bits == 0
        assert bloom.positive_scan(bf).size == 0

    @settings(max_examples=60)
    @given(st.sets(st.integers(0, 9999), max_size=300), st.integers(0, 2**32), st.floats(1e-6, 0.5))
    def test_no_false_negatives(self, support, seed, eps):
        s = sorted(support)
        bf = bloom.build_for(s, 10_000, eps, seed)
        assert bf.contains(s).all()
        assert set(s) <= set(bloom.positive_scan(bf).tolist())

    def test_index_out_of_domain(self):
        with pytest.raises(IndexError):
            bloom.build([5, 100], 64, 3, (0, 0), 100)

    def test_insert_order_irrelevant(self):
        s = make_rng(0).choice(1000, 50, replace=False)
        a = bloom.build(s, 500, 4, (3, 4), 1000)
        b = bloom.build(s[::-1], 500, 4, (3, 4), 1000)
        assert a == b

    def test_scan_matches_brute_force(self):
        S = make_rng(5).choice(3000, 40, replace=False)
        bf = bloom.build_for(S, 3000, 0.05, 5)
        brute = [i for i in range(3000) if bf.bits[bf.positions([i])[0]].all()]
        assert bloom.positive_scan(bf).tolist() == brute
        assert bloom.positive_scan(bf, chunk=7).tolist() == brute

    def test_serialized_layout(self):
        bf = bloom.build([1, 2, 3], 20, 2, (11, 22), 10)
        data = bf.to_bytes()
        assert data[:8] == (20).to_bytes(8, "little")
        assert data[8:10] == (2).to_bytes(2, "little")
        assert data[10:26] == (11).to_bytes(8, "little") + (22).to_bytes(8, "little")
        assert len(data) == 26 + 3
        body = np.unpackbits(np.frombuffer(data[26:], np.uint8), bitorder="little")[:20]
        assert np.array_equal(body.astype(bool), bf.bits)
        back, used = bloom.BloomFilter.from_bytes(data + b"tail", 10)
        assert back == bf and used == len(data)

    @pytest.mark.parametrize("cut", [0, 10, 27])
    def test_truncated_payload(self, cut):
        data = bloom.build([1], 20, 2, (1, 2), 10).to_bytes()
        with pytest.raises(ValueError):
            bloom.BloomFilter.from_bytes(data[:cut], 10)

    def test_measured_fpr_at_one_percent(self):
        ok = 0
        for seed in range(20):
            rng = make_rng(seed)
            S = rng.choice(10**5, 500, replace=False)
            bf = bloom.build_for(S, 10**5, 0.01, seed)
            q = rng.integers(10**5, 2**32, 10_000)
            ok += 0.005 <= bf.contains(q).mean() <= 0.02
        assert ok >= 19

    def test_deterministic(self):
        S = np.arange(0, 1000, 7)
        assert bloom.build_for(S, 1000, 0.01, 9) == bloom.build_for(S, 1000, 0.01, 9)
        assert bloom.build_for(S, 1000, 0.01, 9) != bloom.build_for(S, 1000, 0.01, 10)


class _TableFilter:
    """Hand-specified hash positions, for reproducing drawn examples."""

    def __init__(self, table):
        self.table = table
        self.k = len(next(iter(table.values())))

    def positions(self, items):
        return np.array([self.table[int(i)] for i in items])


class TestConflictSets:
    def test_each_member_in_k_sets(self):
        S = make_rng(1).choice(2000, 60, replace=False)
        bf = bloom.build_for(S, 2000, 0.05, 1)
        P = bloom.positive_scan(bf)
        sets = bloom.conflict_sets(P, bf)
        assert set(np.concatenate(list(sets.values())).tolist()) == set(P.tolist())
        for x in P:
            holders = [j for j, c in sets.items() if x in c]
            assert sorted(holders) == sorted(set(bf.positions([x])[0].tolist()))

    def test_four_items_three_hashes(self):
        # three true positives set all 8 bits; item 7 hits only set bits
        table = {1: [0, 1, 2], 3: [3, 4, 5], 5: [6, 7, 0], 7: [1, 4, 7]}
        tf = _TableFilter(table)
        P = np.array([1, 3, 5, 7])
        bits, groups = bloom._conflict_groups(P, tf)
        assert len(bits) == 8
        for seed in range(20):
            assert bloom.p2_select(P, tf, 3, seed).tolist() == [1, 3, 5]


class TestPolicies:
    def _case(self, seed=0, d=5000, r=50, eps=0.05):
        rng = make_rng(seed)
        g = rng.standard_normal(d)
        sg = top_r(g, r)
        return g, sg, bloom.build_for(sg.support, d, eps, seed)

    def test_naive_exact_without_false_positives(self):
        g, sg, bf = self._case(eps=1e-12)
        assert bloom.naive_reconstruct(bf, sg.values) == sg

    def test_naive_shift_after_a_false_positive(self):
        # S = {1, 2, 6, 9}; a filter that also contains 4
        S = [1, 2, 6, 9]
        seeds = bloom.hash_seeds(0)
        bits = bloom.build([1, 2, 4, 6, 9], 64, 3, seeds, 12).bits
        bf = bloom.BloomFilter(64, 3, seeds, 12, bits)
        P = bloom.positive_scan(bf)
        assert set(S) | {4} <= set(P.tolist())
        out = bloom.naive_reconstruct(bf, [10.0, 20.0, 30.0, 40.0])
        got = dict(zip(out.support.tolist(), out.values.tolist()))
        assert got[1] == 10.0 and got[2] == 20.0
        assert got[4] == 30.0 and got[6] == 40.0 and got[9] == 0.0

    def test_naive_error_grows_with_fpr(self):
        errs = []
        for eps in (1e-4, 1e-2, 0.1):
            e = [squared_error(sg, bloom.naive_reconstruct(bf, sg.values))
                 for g, sg, bf in (self._case(s, eps=eps) for s in range(20))]
            errs.append(np.mean(e))
        assert errs[0] < errs[1] < errs[2]

    def test_p0_sparse_identity(self):
        # inherently sparse g: zero error against g
        g, sg, bf = self._case()
        dense = sg.to_dense()
        assert squared_error(dense, bloom.p0_decode(bf, bloom.p0_encode(dense, bf))) == 0.0

    def test_p0_value_count_checked(self):
        g, sg, bf = self._case()
        with pytest.raises(bloom.SelectionError):
            bloom.p0_decode(bf, np.zeros(3))

    def test_p1_no_false_positives(self):
        g, sg, bf = self._case(eps=1e-12)
        P = bloom.positive_scan(bf)
        for seed in range(5):
            assert np.array_equal(bloom.p1_select(P, sg.r, seed), sg.support)

    def test_p1_three_element_enumeration(self):
        gP = np.array([1.0, 2.0, 2.0])
        errs = [np.sum(gP[[i for i in range(3) if i not in s]] ** 2)
                for s in itertools.combinations(range(3), 2)]
        assert np.mean(errs) == pytest.approx((1 - 2 / 3) * 9)

    def test_p1_monte_carlo_identity_sparsifier(self):
        # inherently sparse g supported on S; E||g - C(g)||^2 = (1 - E[k1]/r)||g||^2
        g, sg, bf = self._case(eps=0.05)
        dense = sg.to_dense()
        P = bloom.positive_scan(bf)
        errs, k1s = [], []
        for seed in range(2000):
            T = bloom.p1_select(P, sg.r, seed)
            errs.append(squared_error(dense, SparseGradient(dense.size, T, dense[T])))
            k1s.append(np.isin(T, sg.support).sum())
        # given |P|, k1 is hypergeometric; the closed form uses its mean
        expect = (1 - sg.r / P.size) * (sg.values @ sg.values)
        se = np.std(errs) / math.sqrt(len(errs))
        assert abs(np.mean(errs) - expect) <= 3 * se + 1e-12

    def test_p2_all_singletons(self):
        S = np.array([3, 40, 77])
        bf = bloom.build(S, 4096, 2, bloom.hash_seeds(1), 100)
        P = bloom.positive_scan(bf)
        if np.array_equal(P, S):
            assert all(len(c) == 1 for c in bloom.conflict_sets(P, bf).values())
            assert bloom.p2_select(P, bf, 3, 0).tolist() == S.tolist()

    def test_p2_returns_r_distinct(self):
        for seed in range(30):
            g, sg, bf = self._case(seed, eps=0.2)
            P = bloom.positive_scan(bf)
            T = bloom.p2_select(P, bf, sg.r, seed)
            assert T.size == sg.r == np.unique(T).size
            assert np.isin(T, P).all()

    def test_selection_needs_enough_positives(self):
        with pytest.raises(bloom.SelectionError):
            bloom.p1_select([1, 2], 3, 0)
        with pytest.raises(bloom.SelectionError):
            bloom.pd_select([1, 2], 3)

    def test_pd_slices(self):
        P = np.arange(10)
        assert bloom.pd_select(P, 4, "leftmost").tolist() == [0, 1, 2, 3]
        assert bloom.pd_select(P, 4, "middle").tolist() == [3, 4, 5, 6]
        assert bloom.pd_select(P, 4, "rightmost").tolist() == [6, 7, 8, 9]
        with pytest.raises(ValueError):
            bloom.pd_select(P, 4, "random")

    def test_pd_exact_when_no_false_positives(self):
        g, sg, bf = self._case(eps=1e-12)
        P = bloom.positive_scan(bf)
        for v in bloom.PD_VARIANTS:
            assert np.array_equal(bloom.pd_select(P, sg.r, v), sg.support)

    def test_pd_error_identity_sparsifier(self):
        # for inherently sparse g, a slice keeps |I1| true entries; error = ||g|| minus kept mass,
        # and averaged over random value assignments it is (1 - |I1|/r)||g||^2
        d, r = 4000, 40
        for v in bloom.PD_VARIANTS:
            ratios = []
            for seed in range(300):
                rng = make_rng(seed)
                S = np.sort(rng.choice(d, r, replace=False))
                bf = bloom.build_for(S, d, 0.05, seed)
                P = bloom.positive_scan(bf)
                T = bloom.pd_select(P, r, v)
                vals = rng.standard_normal(r)
                dense = SparseGradient(d, S, vals).to_dense()
                i1 = np.isin(T, S).sum()
                ratios.append((squared_error(dense, SparseGradient(d, T, dense[T])),
                               (1 - i1 / r) * vals @ vals))
            got, expect = np.mean(ratios, axis=0)
            assert got == pytest.approx(expect, rel=0.05)
