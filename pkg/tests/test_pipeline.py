import numpy as np
import pytest

from sparsepack import bloom
from sparsepack.codecs import CodecError
from sparsepack.container import BLOOM_TRAILER, INDEX_IDS, Container, pack, unpack
from sparsepack.pipeline import (
    BLOOM_POLICIES, CodecConfig, _encode_index, compress, decompress, derive_seeds, roundtrip,
)
from sparsepack.tensor import SparseGradient, make_rng, top_r


def _case(d=5000, r=50, seed=0):
    g = make_rng(seed).standard_normal(d)
    return g, top_r(g, r)


def test_seeds_are_distinct_and_stable():
    a = derive_seeds(3)
    assert a == derive_seeds(3)
    assert len(set(a)) == 3
    assert a != derive_seeds(4)


class TestBloomPaths:
    def test_p0_dense_source_carries_true_values(self):
        g, sg = _case()
        out, _ = roundtrip(sg, CodecConfig("bloom-p0", "raw", fpr=0.05), seed=1, dense=g)
        assert set(sg.support) <= set(out.support)
        assert out.r > sg.r  # some false positives at this rate
        assert np.array_equal(out.values, g[out.support].astype(np.float32))

    def test_p0_sparse_source_zero_fills(self):
        g, sg = _case()
        out, _ = roundtrip(sg, CodecConfig("bloom-p0", "raw", fpr=0.05), seed=1)
        extra = np.setdiff1d(out.support, sg.support)
        assert extra.size and np.all(out.to_dense()[extra] == 0)
        assert np.array_equal(out.to_dense()[sg.support], sg.values.astype(np.float32))

    @pytest.mark.parametrize("policy", BLOOM_POLICIES[2:])
    def test_receiver_rebuilds_sender_positions(self, policy):
        g, sg = _case()
        cfg = CodecConfig(policy, "raw", fpr=0.05)
        seeds = derive_seeds(5)
        _, T = _encode_index(sg, cfg, seeds)
        out = decompress(unpack(pack(compress(sg, cfg, seed=5, dense=g))))
        assert np.array_equal(out.support, np.sort(T))
        assert out.r == sg.r

    def test_naive_shifts_values(self):
        g, sg = _case()
        out, _ = roundtrip(sg, CodecConfig("bloom-naive", "raw", fpr=0.05), seed=2, dense=g)
        P = out.support
        # values ride in scan order, so they land on whatever r positives come first
        assert np.array_equal(out.values, sg.values.astype(np.float32))
        assert not np.array_equal(P, sg.support)

    def test_tiny_fpr_is_exact(self):
        g, sg = _case()
        for policy in BLOOM_POLICIES:
            out, _ = roundtrip(sg, CodecConfig(policy, "raw", fpr=1e-9), seed=0, dense=g)
            assert np.array_equal(out.support, sg.support)

    def test_bloom_payload_carries_seeds(self):
        _, sg = _case()
        c = compress(sg, CodecConfig("bloom-p1", "raw"), seed=9)
        bf, used = bloom.BloomFilter.from_bytes(c.index_payload, sg.dim)
        hash_seed, sel_seed, _ = derive_seeds(9)
        assert bf.seeds == bloom.hash_seeds(hash_seed)
        assert BLOOM_TRAILER.unpack_from(c.index_payload, used) == (sel_seed, 0)


class TestValidation:
    def test_dense_size_mismatch(self):
        _, sg = _case()
        with pytest.raises(ValueError):
            compress(sg, CodecConfig("bloom-p0"), dense=np.zeros(3))

    def test_unknown_names(self):
        with pytest.raises(ValueError):
            CodecConfig(index="zip")
        with pytest.raises(ValueError):
            CodecConfig(value="zip")
        with pytest.raises(ValueError):
            CodecConfig(pd_variant="sideways")

    def test_raw_index_count_mismatch(self):
        c = Container(10, 3, INDEX_IDS["raw"], b"\0" * 4, 0, b"\0" * 4)
        with pytest.raises(CodecError):
            decompress(c)

    def test_unsorted_raw_index(self):
        idx = np.array([5, 2], dtype="<u4").tobytes()
        with pytest.raises(CodecError):
            decompress(Container(10, 2, 0, idx, 0, b"\0" * 8))

    def test_index_out_of_range(self):
        idx = np.array([2, 50], dtype="<u4").tobytes()
        with pytest.raises(CodecError):
            decompress(Container(10, 2, 0, idx, 0, b"\0" * 8))

    def test_value_count_mismatch(self):
        idx = np.array([1, 2], dtype="<u4").tobytes()
        with pytest.raises(CodecError):
            decompress(Container(10, 2, 0, idx, 0, b"\0" * 4))

    def test_payload_in_empty_container(self):
        with pytest.raises(CodecError):
            decompress(Container(10, 0, 0, b"\0", 0, b""))

    @pytest.mark.parametrize("index", ["bitmap", "rle", "huffman", "bloom-p2"])
    def test_corrupt_index_payload_raises_cleanly(self, index):
        g, sg = _case()
        c = compress(sg, CodecConfig(index, "raw", fpr=0.01), dense=g)
        for cut in (0, 1, len(c.index_payload) // 2, len(c.index_payload) - 1):
            bad = Container(c.d, c.r, c.index_method, c.index_payload[:cut], c.value_method, c.value_payload)
            with pytest.raises(ValueError):
                decompress(bad)


@pytest.mark.parametrize("value", ["raw", "deflate", "quant", "fit-poly", "fit-dexp"])
def test_value_codecs_keep_error_small(value):
    g = make_rng(1).standard_normal(20_000) * np.exp(-np.linspace(0, 5, 20_000))
    sg = top_r(g, 200)
    out, _ = roundtrip(sg, CodecConfig("bitmap", value), seed=0)
    err = np.linalg.norm(out.values - sg.values) / np.linalg.norm(sg.values)
    assert err < {"raw": 1e-7, "deflate": 1e-7, "quant": 0.02}.get(value, 0.3)


def test_random_bloom_positions_on_sparse_input():
    sg = SparseGradient(100, [3, 50], [1.0, -1.0])
    for policy in BLOOM_POLICIES:
        out, _ = roundtrip(sg, CodecConfig(policy, "quant", fpr=0.3), seed=4)
        assert out.dim == 100
