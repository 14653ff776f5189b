import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nnoc.entropy import (
    RangeDecoder,
    RangeEncoder,
    ac_decode,
    ac_encode,
    ac_finish,
    decode_bits,
    encode_bits,
    rle_decode,
    rle_encode,
    rle_runs,
)
from nnoc.errors import CorruptRle, InvalidDistribution, StreamExhausted
from nnoc.model import QuantizedDist


def ideal_bits(bits, c1s):
    return math.fsum(-math.log2((c if b else 16384 - c) / 16384) for b, c in zip(bits, c1s))


def test_empty_message():
    assert encode_bits([], []) == b""
    assert decode_bits(b"", []) == []


def test_one_confident_symbol():
    data = encode_bits([1], [16383])
    assert len(data) <= 5
    assert decode_bits(data, [16383]) == [1]


def test_uniform_symbols_cost_one_bit_each():
    rng = np.random.default_rng(0)
    for n in (1, 7, 100, 800, 5000):
        bits = rng.integers(0, 2, n).tolist()
        data = encode_bits(bits, [8192] * n)
        assert 8 * len(data) - n <= 40
        assert decode_bits(data, [8192] * n) == bits


@pytest.mark.parametrize("c1", [1, 2, 100, 8192, 16000, 16382, 16383])
@pytest.mark.parametrize("bit", [0, 1])
def test_single_bit_exhaustive(bit, c1):
    d = QuantizedDist(16384 - c1, c1)
    st_ = ac_encode(bit, d)
    data = ac_finish(st_)
    got, _ = ac_decode(d, RangeDecoder(data))
    assert got == bit


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(1, 16383)), max_size=400))
@settings(max_examples=150, deadline=None)
def test_roundtrip_and_codelength(pairs):
    bits = [b for b, _ in pairs]
    c1s = [c for _, c in pairs]
    data = encode_bits(bits, c1s)
    assert decode_bits(data, c1s) == bits
    assert 8 * len(data) <= ideal_bits(bits, c1s) + 64


def test_skewed_long_run_carries():
    # long runs of the likely symbol push low near 2^32 and exercise carry propagation
    rng = np.random.default_rng(5)
    bits, c1s = [], []
    for _ in range(20000):
        c = int(rng.choice([1, 2, 16382, 16383, 8192]))
        b = int(rng.random() < c / 16384)
        bits.append(b)
        c1s.append(c)
    data = encode_bits(bits, c1s)
    assert decode_bits(data, c1s) == bits
    assert 8 * len(data) <= ideal_bits(bits, c1s) + 64


def test_mismatched_dists_give_wrong_bits():
    rng = np.random.default_rng(1)
    bits = rng.integers(0, 2, 2000).tolist()
    c1s = rng.integers(1, 16384, 2000).tolist()
    data = encode_bits(bits, c1s)
    wrong = [16384 - c for c in c1s]
    dec = RangeDecoder(data)
    out = []
    try:
        for c in wrong:
            out.append(dec.decode(c))
    except StreamExhausted:
        pass
    assert out != bits


def test_reading_far_past_end_raises():
    data = encode_bits([0] * 16, [8192] * 16)
    dec = RangeDecoder(data)
    with pytest.raises(StreamExhausted):
        for _ in range(200):
            dec.decode(8192)


@pytest.mark.parametrize("c1", [0, 16384, -3])
def test_invalid_dist(c1):
    with pytest.raises(InvalidDistribution):
        RangeEncoder().encode(1, c1)
    with pytest.raises(InvalidDistribution):
        ac_encode(1, QuantizedDist(16384 - c1, c1))


def test_rle_examples():
    assert rle_runs([1, 1, 1, 0, 0, 1]) == (1, [3, 2, 1])
    assert rle_runs([0] * 8) == (0, [8])
    assert rle_encode([1, 1, 1, 0, 0, 1]) == bytes([1, 3, 2, 1])
    assert rle_decode(rle_encode([0] * 8), 8) == [0] * 8


def test_rle_long_run_uses_varint():
    mask = [0] * 300 + [1]
    data = rle_encode(mask)
    assert data == bytes([0, 0xAC, 0x02, 1])
    assert rle_decode(data, 301) == mask


@given(st.lists(st.integers(0, 1), min_size=1, max_size=512))
def test_rle_roundtrip(mask):
    assert rle_decode(rle_encode(mask), len(mask)) == mask


def test_rle_random_512():
    mask = np.random.default_rng(2).integers(0, 2, 512).tolist()
    assert rle_decode(rle_encode(mask), 512) == mask


@pytest.mark.parametrize("data,length", [(b"", 4), (b"\x02\x04", 4), (b"\x00\x03", 4), (b"\x00\x05", 4),
                                         (b"\x00\x00\x04", 4), (b"\x01\x82", 4)])
def test_rle_corrupt(data, length):
    with pytest.raises(CorruptRle):
        rle_decode(data, length)
