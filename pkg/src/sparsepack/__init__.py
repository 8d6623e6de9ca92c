"""Decoupled index and value compression for sparse gradients."""

from .bloom import (
    BloomFilter, SelectionError, bloom_params, build, build_for, conflict_sets, fpr_estimate,
    naive_reconstruct, p0_decode, p0_encode, p1_select, p2_select, pd_select, positive_scan,
)
from .codecs import (
    CodecError, HuffmanCodec, QuantizedValues, byte_compress, byte_decompress, dequantize,
    huffman_build, huffman_decode, huffman_encode, quantize, rle_decode, rle_encode, rle_tuples,
)
from .container import (
    ChecksumError, Container, ContainerError, TruncatedError, UnknownMethodError, VersionError,
    VolumeReport, pack, unpack, volume,
)
from .curvefit import (
    FitConfig, FitError, FitModel, fit_dexp, fit_poly, knot_heuristic, linear_fit_error_bound,
    reorder_decode, reorder_encode, segment, sort_view, value_compress, value_decompress,
)
from .harness import RunReport, TrainConfig, reference_sgd, run
from .pipeline import CodecConfig, compress, decompress, roundtrip
from .tensor import (
    DenseGradient, IndexBitmap, InconsistentIndexError, SparseGradient, from_bitmap, make_rng,
    random_r, read_tensor, squared_error, to_bitmap, top_r, write_tensor,
)

__version__ = "0.1.0"
