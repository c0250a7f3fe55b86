import math
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mvq.accel import read_layer_table
from mvq.codec import (
    HEADER_BYTES,
    CompressedLayer,
    compression_ratio,
    decompress,
    deserialize,
    index_bits,
    layer_report,
    pack_bits,
    serialize,
    stream_bit_lengths,
    unpack_bits,
)
from mvq.errors import BadMagic, CorruptLengths, TruncatedStream
from mvq.pipeline import LayerSettings, compress_tensor
from mvq.quantization import QuantizedCodebook
from mvq.sparsity import NmPattern
from mvq.tensor import WeightTensor

from helpers import random_layer, random_model
from make_golden_loader import build_golden

DATA = Path(__file__).parent / "data"
ROOT = Path(__file__).parent.parent


def test_pack_bits_lsb_first():
    # 1 = 0b001, 2 = 0b010, written LSB first: 1,0,0, 0,1,0 -> 0b00010001
    assert pack_bits([1, 2], 3) == bytes([0x11])
    assert pack_bits([0xABC], 12) == bytes([0xBC, 0x0A])


@given(st.integers(1, 16), st.lists(st.integers(0, 2**16 - 1), min_size=0, max_size=50))
def test_pack_unpack_roundtrip(width, values):
    values = [v % (1 << width) for v in values]
    buf = pack_bits(values, width)
    assert len(buf) == math.ceil(len(values) * width / 8)
    assert unpack_bits(buf, len(values), width).tolist() == values


def test_signed_unpack():
    buf = pack_bits([-1, -128, 127, 0], 8)
    assert unpack_bits(buf, 4, 8, signed=True).tolist() == [-1, -128, 127, 0]


def test_empty_model_is_header_only():
    blob = serialize([])
    assert len(blob) == HEADER_BYTES == 9
    assert blob[:4] == b"MVQ1"
    assert deserialize(blob) == []


@given(st.integers(0, 2**32 - 1))
def test_roundtrip_bytewise(seed):
    model = random_model(seed)
    blob = serialize(model)
    back = deserialize(blob)
    assert back == model
    assert serialize(back) == blob


def test_stream_lengths_are_tight():
    layer = random_layer(np.random.default_rng(3))
    (lengths,) = stream_bit_lengths(serialize([layer]))
    assert lengths == (
        layer.k * layer.d * layer.codebook.qb,
        layer.ng * index_bits(layer.k),
        layer.ng * layer.d // layer.pattern.m_group * layer.pattern.id_bits,
    )


def test_bad_magic():
    with pytest.raises(BadMagic):
        deserialize(b"XVQ1" + bytes(5))
    with pytest.raises(BadMagic):
        deserialize(b"MV")
    blob = bytearray(serialize([]))
    blob[4] = 2
    with pytest.raises(BadMagic):
        deserialize(bytes(blob))


def test_every_truncation_is_detected():
    blob = serialize(random_model(11) or [random_layer(np.random.default_rng(0))])
    for cut in range(4, len(blob)):
        with pytest.raises(TruncatedStream):
            deserialize(blob[:cut])


def test_corrupt_length_and_trailing_bytes():
    layer = random_layer(np.random.default_rng(5))
    blob = bytearray(serialize([layer]))
    off = HEADER_BYTES + 29  # first u64 after the fixed per-layer record
    blob[off] ^= 0x01
    with pytest.raises(CorruptLengths):
        deserialize(bytes(blob))
    with pytest.raises(CorruptLengths):
        deserialize(serialize([layer]) + b"\0")


def test_golden_file_is_stable():
    golden = (DATA / "golden_toy.mvq").read_bytes()
    assert build_golden() == golden
    assert serialize(deserialize(golden)) == golden


def test_cr_reference_values():
    rep = compression_ratio(10**6, 16, 512, NmPattern(4, 16), 8)
    assert (rep.b_a, rep.b_m, rep.b_c) == (9 * 10**6, 11 * 10**6, 65536)
    assert rep.cr == pytest.approx(25.52, abs=0.01)
    assert rep.ratio == Fraction(16 * 10**6 * 32, 20 * 10**6 + 65536)
    assert rep.flops_ratio == Fraction(1, 4)


def test_cr_degenerate():
    # k=1 needs no assignment bits and N=M no mask bits: only the codebook is stored
    rep = compression_ratio(1, 1, 1, NmPattern(1, 1), 32)
    assert (rep.b_a, rep.b_m, rep.b_c) == (0, 0, 32)
    assert rep.ratio == 1
    assert compression_ratio(1, 1, 2, NmPattern(1, 1), 32).cr < 1


def test_cr_resnet18_layerwise():
    layers = [l for l in read_layer_table(ROOT / "src" / "mvq" / "data" / "resnet18.txt") if l.kh * l.kw > 1 or l.cin > 3]
    layers = [l for l in layers if l.cout % 16 == 0]
    total = None
    for l in layers:
        rep = compression_ratio(l.cout // 16 * l.cin * l.kh * l.kw, 16, 512, NmPattern(4, 16), 8)
        total = rep if total is None else total + rep
    assert 18 <= len(layers) <= 22
    assert 20 <= total.cr <= 26


def test_cr_matches_serialized_payload():
    r = np.random.default_rng(8)
    layer = random_layer(r)
    rep = layer_report(layer)
    (lengths,) = stream_bit_lengths(serialize([layer]))
    assert rep.payload_bits == sum(lengths)
    assert rep.ratio == Fraction(layer.n_weights * 32, sum(lengths))


def test_decompress_sparsity_and_sse_bound(rng):
    w = WeightTensor(rng.normal(size=(32, 8, 3, 3)))
    res = compress_tensor(w, LayerSettings(16, 32, NmPattern(4, 16), 8))
    recon = decompress(res.layer)
    mask = res.layer.mask()
    assert (~mask).sum() * 4 == mask.size * 3
    assert np.count_nonzero(recon.data) <= recon.data.size // 4
    # quantization moves each kept value by at most s/2
    s = res.layer.codebook.scale
    n_kept = int(mask.sum())
    fp = res.stats.final_sse
    assert math.sqrt(res.sse.mask_sse) <= math.sqrt(fp) + math.sqrt(n_kept) * s / 2 + 1e-9
