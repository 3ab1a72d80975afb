import math

import numpy as np
import pytest

from slashkan.basis import BasisKind, sign_exponent_significand_profile, single_region_profile
from slashkan.codec import CodecConfig, UnitCode, encode
from slashkan.tree import (
    DenseTree,
    DivergentUpdateError,
    ModelFormatError,
    PatriciaTree,
    adam_step,
)

P = 16
SLASH16 = single_region_profile(P, BasisKind.SLASH, beta=0.5)
FLOATPROF = sign_exponent_significand_profile()


def make_code(u, precision=P):
    return UnitCode(u, int(u * (1 << precision)), precision)


def random_code(rng, precision=P):
    key = int(rng.integers(0, 1 << precision))
    u = (key + float(rng.uniform(0, 1))) / (1 << precision)
    return UnitCode(u, key, precision)


def test_empty_tree_predicts_zero():
    tree = PatriciaTree(3, P, SLASH16)
    out = tree.predict(make_code(0.3))
    assert np.array_equal(out.y, np.zeros(3))
    assert np.array_equal(out.dy_du, np.zeros(3))
    assert tree.node_count == 0
    assert tree.max_depth() == 0


def test_zero_delta_leaves_tree_untouched():
    tree = PatriciaTree(2, P, SLASH16)
    tree.update(make_code(0.7), [0.0, 0.0], 1.0)
    assert tree.node_count == 0


def test_single_update_matches_dense_oracle():
    code = make_code(0.375)
    dense = DenseTree(1, P, SLASH16)
    dense.update(code, [1.0], 1.0)
    tree = PatriciaTree(1, P, SLASH16)
    tree.update(code, [1.0], 1.0)
    assert tree.node_count == 1
    for probe in (0.375, 0.1, 0.9, 0.375 + 2**-17):
        got = tree.predict(make_code(probe))
        want = dense.predict(make_code(probe))
        assert got.y == pytest.approx(want.y, abs=1e-12)
        assert got.dy_du == pytest.approx(want.dy_du, abs=1e-9)


def test_updates_at_same_code_are_additive():
    code = make_code(0.625)
    twice = PatriciaTree(1, P, SLASH16)
    twice.update(code, [0.3], 1.0)
    twice.update(code, [0.5], 1.0)
    once = PatriciaTree(1, P, SLASH16)
    once.update(code, [0.8], 1.0)
    rng = np.random.default_rng(0)
    for _ in range(50):
        c = random_code(rng)
        assert twice.predict(c).y == pytest.approx(once.predict(c).y, abs=1e-12)


def test_three_distinct_keys_make_at_most_five_nodes():
    tree = PatriciaTree(1, P, SLASH16)
    for u in (0.1, 0.6, 0.8):
        tree.update(make_code(u), [1.0], 1.0)
    assert tree.leaf_count == 3
    assert tree.node_count <= 5
    tree.check_invariants()


def test_divergent_update_rejected():
    tree = PatriciaTree(1, P, SLASH16)
    with pytest.raises(DivergentUpdateError, match="divergent update"):
        tree.update(make_code(0.5), [math.nan], 1.0)
    with pytest.raises(DivergentUpdateError):
        tree.update(make_code(0.5), [math.inf], 1.0)


def test_precision_mismatch_rejected():
    tree = PatriciaTree(1, P, SLASH16)
    with pytest.raises(ValueError, match="precision mismatch"):
        tree.predict(make_code(0.5, precision=12))


@pytest.mark.parametrize("profile,precision", [(SLASH16, 16), (FLOATPROF, 28)])
def test_backend_equivalence_random_ops(profile, precision):
    rng = np.random.default_rng(42)
    out_dim = 3
    pat = PatriciaTree(out_dim, precision, profile)
    den = DenseTree(out_dim, precision, profile)
    keys = set()
    for step in range(1500):
        code = random_code(rng, precision)
        if rng.uniform() < 0.6:
            delta = rng.standard_normal(out_dim)
            pat.update(code, delta, 1.0)
            den.update(code, delta, 1.0)
            keys.add(code.bits)
        got = pat.predict(code)
        want = den.predict(code)
        assert got.y == pytest.approx(want.y, abs=1e-9)
        assert got.dy_du == pytest.approx(want.dy_du, rel=1e-9, abs=1e-6)
        assert pat.node_count <= max(2 * len(keys) - 1, 1)
        if step % 200 == 0:
            pat.check_invariants()
    pat.check_invariants()
    assert pat.leaf_count == len(keys)


def test_predicts_on_unseen_codes_match_dense():
    rng = np.random.default_rng(7)
    pat = PatriciaTree(2, P, SLASH16)
    den = DenseTree(2, P, SLASH16)
    for _ in range(300):
        code = random_code(rng)
        delta = rng.standard_normal(2)
        pat.update(code, delta, 0.5)
        den.update(code, delta, 0.5)
    for _ in range(300):
        code = random_code(rng)
        assert pat.predict(code).y == pytest.approx(den.predict(code).y, abs=1e-9)


def test_float_codec_codes_work_end_to_end():
    cfg = CodecConfig()
    rng = np.random.default_rng(3)
    pat = PatriciaTree(1, cfg.precision, FLOATPROF)
    den = DenseTree(1, cfg.precision, FLOATPROF)
    xs = rng.uniform(0.1, 0.9, size=200)
    for x in xs:
        code = encode(float(x), cfg)
        delta = rng.standard_normal(1)
        pat.update(code, delta, 1.0)
        den.update(code, delta, 1.0)
    for x in rng.uniform(0.05, 1.5, size=100):
        code = encode(float(x), cfg)
        assert pat.predict(code).y == pytest.approx(den.predict(code).y, abs=1e-9)


def test_update_locality_shared_prefix_oracle():
    # an update at c reaches c' exactly through the bias plus the bases on
    # their shared key prefix; checked against the closed-form basis values
    from slashkan.basis import BasisKind, NodePath, haar_eval, slash_eval

    rng = np.random.default_rng(5)
    tree = PatriciaTree(1, P, SLASH16)
    for _ in range(100):
        tree.update(random_code(rng), [float(rng.standard_normal())], 1.0)
    target = random_code(rng)
    alpha, delta = 1.0, 0.25
    probes = [random_code(rng) for _ in range(40)]
    before = [tree.predict(c).y[0] for c in probes]
    energy = tree.step_energy(target)
    tree.update(target, [delta], alpha)
    for probe, prev in zip(probes, before):
        got = tree.predict(probe).y[0] - prev
        shared = P if probe.bits == target.bits else \
            P - (probe.bits ^ target.bits).bit_length()
        want = 1.0  # bias
        # depths 0..shared are on both paths (keys differ at bit shared+1)
        for d in range(min(shared + 1, P)):
            path = NodePath(d, target.bits >> (P - d))
            phi = haar_eval(path, target.u, SLASH16)
            if SLASH16.kind_at(d) is BasisKind.HAAR:
                want += phi * haar_eval(path, probe.u, SLASH16)
            else:
                want += phi * slash_eval(path, probe.u, SLASH16)
        assert got == pytest.approx(alpha * delta * want / energy, abs=1e-12)


def test_memory_and_path_cost_bounds():
    rng = np.random.default_rng(11)
    tree = PatriciaTree(1, P, SLASH16)
    keys = set()
    ops = 0
    for _ in range(2000):
        code = random_code(rng)
        tree.update(code, [1.0], 0.1)
        keys.add(code.bits)
        ops += 1
    assert tree.node_count <= 2 * len(keys) - 1
    assert tree.node_count <= 2 ** (P + 1) - 1
    assert tree.max_depth() <= P + 1
    # every op walks at most one root-to-leaf path: <= 2*P stored bits
    # (update re-walks once after its structural pass)
    assert tree.touched_bits <= ops * 2 * P


def test_saturated_key_space_bounds_storage():
    p = 4
    tree = PatriciaTree(1, p, single_region_profile(p))
    den = DenseTree(1, p, single_region_profile(p))
    rng = np.random.default_rng(19)
    for _ in range(300):  # far more updates than the 16 possible keys
        code = random_code(rng, p)
        tree.update(code, [float(rng.standard_normal())], 1.0)
        den.update(code, [0.0], 1.0)
    assert tree.leaf_count == 1 << p
    assert tree.node_count == 2 ** (p + 1) - 1
    tree.check_invariants()


def test_serialize_round_trip():
    rng = np.random.default_rng(13)
    tree = PatriciaTree(2, P, SLASH16)
    for _ in range(400):
        tree.update(random_code(rng), rng.standard_normal(2), 1.0)
    blob = tree.serialize()
    back = PatriciaTree.deserialize(blob)
    assert back.node_count == tree.node_count
    assert back.leaf_count == tree.leaf_count
    back.check_invariants()
    for _ in range(1000):
        code = random_code(rng)
        a = tree.predict(code)
        b = back.predict(code)
        assert np.array_equal(a.y, b.y)
        assert np.array_equal(a.dy_du, b.dy_du)
    assert back.serialize() == blob


def test_serialize_empty_tree():
    tree = PatriciaTree(4, P, SLASH16)
    back = PatriciaTree.deserialize(tree.serialize())
    assert back.node_count == 0
    assert np.array_equal(back.predict(make_code(0.2)).y, np.zeros(4))


def test_deserialize_rejects_garbage():
    tree = PatriciaTree(1, P, SLASH16)
    tree.update(make_code(0.3), [1.0], 1.0)
    blob = tree.serialize()
    with pytest.raises(ModelFormatError, match="bad magic"):
        PatriciaTree.deserialize(b"XXXX" + blob[4:])
    with pytest.raises(ModelFormatError, match="truncated"):
        PatriciaTree.deserialize(blob[:-5])
    with pytest.raises(ModelFormatError, match="version"):
        PatriciaTree.deserialize(blob[:4] + b"\x63\x00" + blob[6:])
    with pytest.raises(ModelFormatError, match="trailing"):
        PatriciaTree.deserialize(blob + b"\x00")


def test_linear_cell_brackets_an_affine_piece():
    rng = np.random.default_rng(17)
    tree = PatriciaTree(1, P, SLASH16)
    for _ in range(100):
        tree.update(random_code(rng), [float(rng.standard_normal())], 1.0)
    for _ in range(50):
        code = random_code(rng)
        lo, hi = tree.linear_cell(code)
        assert lo <= code.u < hi
        u0, u1, u2 = lo + (hi - lo) * 0.25, lo + (hi - lo) * 0.5, lo + (hi - lo) * 0.75
        y0, y1, y2 = (tree.predict(make_code(u)).y[0] for u in (u0, u1, u2))
        assert y1 == pytest.approx((y0 + y2) / 2, rel=1e-9, abs=1e-12)


def test_adam_zero_gradient_is_identity():
    den = DenseTree(1, 8, single_region_profile(8))
    for t in range(1, 5):
        adam_step(den, make_code(0.3, 8), [0.0], (0.1, 0.9, 0.999, 1e-8), t)
    assert den.node_count() == 0
    assert np.array_equal(den.bias, np.zeros(1))


def test_adam_step_magnitude_approaches_alpha():
    den = DenseTree(1, 4, single_region_profile(4))
    code = make_code(0.3, 4)
    alpha = 0.05
    prev = 0.0
    step = None
    for t in range(1, 400):
        adam_step(den, code, [1.0], (alpha, 0.9, 0.999, 1e-8), t)
        step = den.bias[0] - prev
        prev = den.bias[0]
    assert abs(step) == pytest.approx(alpha, rel=1e-3)


def test_adam_without_momentum_is_sign_step():
    den = DenseTree(1, 4, single_region_profile(4))
    code = make_code(0.3, 4)
    alpha, eps = 0.1, 1e-8
    adam_step(den, code, [0.5], (alpha, 0.0, 0.0, eps), 1)
    # bias gradient is -delta: parameter moves +alpha*g/(|g|+eps)
    assert den.bias[0] == pytest.approx(alpha * 0.5 / (0.5 + eps), rel=1e-9)


def test_adam_requires_dense_backend():
    with pytest.raises(TypeError):
        adam_step(PatriciaTree(1, P, SLASH16), make_code(0.5), [1.0])
