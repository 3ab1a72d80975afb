import math
import struct

import numpy as np
import pytest

from slashkan.codec import CodecConfig, encode, encode_batch, encode_derivative, raw_index

F64 = CodecConfig(kind="float754")
FIX16 = CodecConfig(kind="fixed", fixed_bits=16)


def test_config_validation():
    assert F64.precision == 28
    assert FIX16.precision == 16
    with pytest.raises(ValueError):
        CodecConfig(kind="float754", exponent_bits=8)
    with pytest.raises(ValueError):
        CodecConfig(kind="bogus")
    with pytest.raises(ValueError):
        CodecConfig(kind="float754", significand_bits=60)


def test_encode_known_points():
    assert encode(1.0, F64).u == 0.25
    assert encode(-1.0, F64).u == 0.75
    assert encode(0.0, F64).u == 0.0
    assert encode(-0.0, F64).u == 0.0


def test_encode_fixed():
    code = encode(0.5, FIX16)
    assert code.u == 0.5
    assert code.bits == 1 << 15
    assert code.bit_string() == "1" + "0" * 15
    assert encode(-3.0, FIX16).u == 0.0
    assert encode(7.0, FIX16).u == 1.0 - 2.0**-16
    assert encode(7.0, FIX16).bits == 2**16 - 1


def test_encode_rejects_non_finite():
    for bad in (math.nan, math.inf, -math.inf):
        with pytest.raises(ValueError, match="non-finite"):
            encode(bad, F64)
    with pytest.raises(ValueError):
        encode(math.nan, F64, allow_infinite=True)
    # overflowed intermediates in evaluation mode get the boundary code
    assert encode(math.inf, F64, allow_infinite=True).u == pytest.approx(2047 / 4096)
    assert encode(-math.inf, F64, allow_infinite=True).u == pytest.approx(0.5 + 2047 / 4096)


def test_bits_truncate_u():
    rng = np.random.default_rng(0)
    for x in rng.standard_normal(200) * 10.0 ** rng.integers(-6, 6, size=200):
        code = encode(float(x), F64)
        assert 0.0 <= code.u < 1.0
        assert code.bits == int(code.u * 2**28)
        assert code.bits / 2**28 <= code.u < (code.bits + 1) / 2**28


def test_derivative_known_points():
    # finite-difference oracle: x=1.0 sits exactly on an exponent-cell edge,
    # so probe forward into the half-open cell that contains it
    h = 2.0**-20
    fd = (encode(1.0 + h, F64).u - encode(1.0, F64).u) / h
    assert fd == pytest.approx(2.0**-12, rel=1e-9)
    assert encode_derivative(1.0, F64) == 2.0**-12
    assert encode_derivative(-1.0, F64) == -(2.0**-12)
    assert encode_derivative(0.3, FIX16) == 1.0
    assert encode_derivative(-0.3, FIX16) == 0.0
    assert encode_derivative(1.3, FIX16) == 0.0
    assert encode_derivative(0.0, F64) == 0.0


def test_derivative_matches_finite_difference():
    rng = np.random.default_rng(1)
    checked = 0
    while checked < 1000:
        x = float(rng.standard_normal() * 10.0 ** rng.integers(-8, 9))
        if x == 0.0 or abs(x) < 2**-1020:
            continue
        m, _ = math.frexp(abs(x))
        if m < 0.5 + 2**-18 or m > 1.0 - 2**-18:  # stay off exponent boundaries
            continue
        h = abs(x) * 2.0**-20
        fd = (encode(x + h, F64).u - encode(x - h, F64).u) / (2 * h)
        assert fd == pytest.approx(encode_derivative(x, F64), rel=1e-3)
        checked += 1


def test_raw_index_examples():
    assert raw_index(0.0) == 0
    assert raw_index(1.0) == struct.unpack("<Q", struct.pack("<d", 1.0))[0]
    assert raw_index(1.0) == 0x3FF0000000000000
    with pytest.raises(ValueError):
        raw_index(math.inf)


def test_raw_index_monotone_nonnegative():
    rng = np.random.default_rng(2)
    xs = np.sort(np.abs(rng.standard_normal(500) * 10.0 ** rng.integers(-300, 300, size=500)))
    idx = [raw_index(float(x)) for x in xs]
    assert all(a <= b for a, b in zip(idx, idx[1:]))


def test_order_preservation():
    rng = np.random.default_rng(3)
    raw = rng.integers(0, 2**64, size=20000, dtype=np.uint64)
    xs = raw.view(np.float64)
    xs = xs[np.isfinite(xs)]
    pos = np.sort(np.abs(xs))
    u_pos, _ = encode_batch(pos, F64)
    assert (np.diff(u_pos) >= 0).all()
    u_neg, _ = encode_batch(-pos, F64)
    assert (np.diff(u_neg) >= 0).all()  # more negative -> larger u
    assert (u_pos < 0.5).all()
    assert ((u_neg >= 0.5) | (-pos == 0.0)).all()
    assert (u_pos < 1.0).all() and (u_neg < 1.0).all()


def test_prefix_bits_track_raw_exponent():
    # the 12-bit code prefix is the raw sign+exponent field shifted by one,
    # a fixed offset inherited from the implicit leading significand bit
    rng = np.random.default_rng(4)
    count = 0
    while count < 5000:
        x = float(rng.standard_normal() * 10.0 ** rng.integers(-300, 300))
        if x == 0.0 or abs(x) < 2**-1022:
            continue
        top12 = raw_index(x) >> 52
        prefix12 = encode(x, F64).bits >> 16
        assert prefix12 == top12 + 1
        count += 1


def test_batch_matches_scalar():
    rng = np.random.default_rng(5)
    xs = rng.standard_normal(1000) * 10.0 ** rng.integers(-10, 10, size=1000)
    u, keys = encode_batch(xs, F64)
    for i in range(0, 1000, 97):
        code = encode(float(xs[i]), F64)
        assert code.u == u[i]
        assert code.bits == int(keys[i])
