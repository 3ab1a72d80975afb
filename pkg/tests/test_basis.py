import math

import numpy as np
import pytest

from slashkan.basis import (
    BasisKind,
    BasisProfile,
    BasisRegion,
    NodePath,
    amplitude,
    haar_eval,
    haar_from_slash,
    orthonormal_haar_eval,
    sign_exponent_significand_profile,
    single_region_profile,
    slash_derivative,
    slash_eval,
)

HALF = single_region_profile(24, BasisKind.SLASH, beta=0.5)


def test_amplitude_values():
    assert amplitude(0, HALF) == pytest.approx(math.sqrt(0.5), abs=1e-15)
    assert amplitude(1, HALF) == pytest.approx(0.5, abs=1e-15)
    assert amplitude(5, HALF) == pytest.approx(math.sqrt(0.5) * 0.5**2.5, abs=1e-15)


def test_amplitude_beta_one_is_unit():
    flat = BasisProfile(regions=(BasisRegion(8, BasisKind.HAAR, 1.0),))
    assert amplitude(0, flat) == 1.0
    assert amplitude(7, flat) == 1.0


def test_amplitude_unit_constant_flag():
    unit = BasisProfile(regions=(BasisRegion(8, BasisKind.SLASH, 0.5),), unit_constant=True)
    assert amplitude(0, unit) == 1.0
    assert amplitude(2, unit) == pytest.approx(0.5)


def test_amplitude_depth_overflow():
    with pytest.raises(ValueError, match="depth overflow"):
        amplitude(24, HALF)
    with pytest.raises(ValueError):
        amplitude(-1, HALF)


def test_amplitude_region_relative_discount():
    prof = sign_exponent_significand_profile()
    # the no-discount region keeps unit steps and does not attenuate the
    # ramp region, whose discount restarts at the region boundary
    assert amplitude(0, prof) == 1.0
    assert amplitude(11, prof) == 1.0
    assert amplitude(12, prof) == pytest.approx(math.sqrt(0.5), abs=1e-15)
    assert amplitude(13, prof) == pytest.approx(0.5, abs=1e-15)


def test_amplitude_ratio_follows_regions_discount():
    prof = sign_exponent_significand_profile()
    for d in range(12, prof.depth_count - 1):
        ratio = amplitude(d + 1, prof) / amplitude(d, prof)
        assert ratio == pytest.approx(math.sqrt(0.5), rel=1e-12)


def test_node_path_geometry():
    top = NodePath.from_bits("")
    assert top.support() == (0.0, 1.0)
    b = NodePath.from_bits("01")
    assert b.support() == (0.25, 0.5)
    left, right = b.child(0), b.child(1)
    assert left.support() == (0.25, 0.375)
    assert right.support() == (0.375, 0.5)
    assert left.support()[1] == right.support()[0]
    with pytest.raises(ValueError):
        NodePath(2, 4)


def test_haar_eval_examples():
    assert haar_eval(NodePath.from_bits("0"), 0.1, HALF) == pytest.approx(0.5)
    assert haar_eval(NodePath.from_bits("1"), 0.1, HALF) == 0.0
    assert haar_eval(NodePath.from_bits("0"), 0.3, HALF) == pytest.approx(-0.5)


def test_slash_eval_examples():
    top = NodePath.from_bits("")
    assert slash_eval(top, 0.0, HALF) == pytest.approx(0.70710678, abs=1e-8)
    assert slash_eval(NodePath.from_bits("1"), 0.75, HALF) == 0.0
    assert slash_eval(top, 0.25, HALF) == pytest.approx(0.35355339, abs=1e-8)


def test_slash_derivative_examples():
    top = NodePath.from_bits("")
    assert slash_derivative(top, 0.37, HALF) == pytest.approx(-1.41421356, abs=1e-8)
    assert slash_derivative(NodePath.from_bits("1"), 0.1, HALF) == 0.0
    assert slash_derivative(NodePath.from_bits("10"), 0.6, HALF) == pytest.approx(-2.82842712, abs=1e-8)


def test_haar_from_slash_examples():
    top = NodePath.from_bits("")
    assert haar_from_slash(top, 0.3, HALF) == pytest.approx(haar_eval(top, 0.3, HALF), abs=1e-12)
    assert haar_from_slash(top, 0.3, HALF) == pytest.approx(0.70710678, abs=1e-8)
    assert haar_from_slash(top, 0.7, HALF) == pytest.approx(-0.70710678, abs=1e-8)
    assert haar_from_slash(NodePath.from_bits("10"), 0.9, HALF) == 0.0


def _random_node_and_u(rng, max_depth):
    depth = int(rng.integers(0, max_depth + 1))
    index = int(rng.integers(0, 1 << depth))
    path = NodePath(depth, index)
    left, right = path.support()
    u = float(rng.uniform(left, right))
    return path, min(u, math.nextafter(right, left))


def test_reconstruction_identity_random():
    rng = np.random.default_rng(7)
    for _ in range(2000):
        path, u = _random_node_and_u(rng, 20)
        assert abs(haar_from_slash(path, u, HALF) - haar_eval(path, u, HALF)) < 1e-12


def test_reconstruction_identity_within_ramp_region():
    # within one discount region of the experiment profile the identity holds
    prof = sign_exponent_significand_profile()
    rng = np.random.default_rng(8)
    for _ in range(500):
        depth = int(rng.integers(12, prof.depth_count - 2))
        path = NodePath(depth, int(rng.integers(0, 1 << depth)))
        left, right = path.support()
        u = min(float(rng.uniform(left, right)), math.nextafter(right, left))
        assert abs(haar_from_slash(path, u, prof) - haar_eval(path, u, prof)) < 1e-12


def test_slash_derivative_matches_finite_difference():
    rng = np.random.default_rng(11)
    h = 2.0**-30
    margin = 2.0**-20
    checked = 0
    while checked < 1000:
        path, u = _random_node_and_u(rng, 18)
        left, right = path.support()
        if u - left < margin or right - u < margin:
            continue
        fd = (slash_eval(path, u + h, HALF) - slash_eval(path, u - h, HALF)) / (2 * h)
        exact = slash_derivative(path, u, HALF)
        assert fd == pytest.approx(exact, rel=1e-4)
        checked += 1


def test_support_partition():
    rng = np.random.default_rng(3)
    for _ in range(200):
        path, _ = _random_node_and_u(rng, 12)
        w = path.support()[1] - path.support()[0]
        w0 = path.child(0).support()[1] - path.child(0).support()[0]
        w1 = path.child(1).support()[1] - path.child(1).support()[0]
        assert w0 + w1 == pytest.approx(w, rel=1e-15)
    # exactly one node per depth is active at any u
    for u in rng.uniform(0, 1, size=20):
        for depth in range(8):
            active = [k for k in range(1 << depth)
                      if haar_eval(NodePath(depth, k), float(u), HALF) != 0.0]
            assert len(active) == 1


def test_orthonormal_haar_examples():
    assert orthonormal_haar_eval(0, 0, 0.25) == pytest.approx(1.0)
    assert orthonormal_haar_eval(1, 1, 0.8) == pytest.approx(-math.sqrt(2))
    assert orthonormal_haar_eval(2, 0, 0.5) == 0.0
    with pytest.raises(ValueError):
        orthonormal_haar_eval(2, 4, 0.1)
    with pytest.raises(ValueError):
        orthonormal_haar_eval(-1, 0, 0.1)


def test_orthonormal_gram_small():
    # left-endpoint grid sums are exact for step functions on aligned cells
    grid = np.arange(2**10) / 2**10
    pairs = [(j, k) for j in range(4) for k in range(1 << j)]
    vals = np.stack([orthonormal_haar_eval(j, k, grid) for j, k in pairs])
    gram = vals @ vals.T / len(grid)
    assert np.max(np.abs(gram - np.eye(len(pairs)))) < 1e-10


def test_constant_bias_kind():
    prof = BasisProfile(regions=(BasisRegion(4, BasisKind.CONSTANT_BIAS, 0.5),))
    path = NodePath.from_bits("01")
    a = amplitude(2, prof)
    assert slash_eval(path, 0.3, prof) == pytest.approx(a)
    assert haar_eval(path, 0.3, prof) == pytest.approx(a)
    assert slash_derivative(path, 0.3, prof) == 0.0
