"""Learned approximators over one input: PATRICIA and dense tree backends.

Both backends hold one coefficient vector per visited dyadic basis plus a
constant bias, predict with ramp/step basis values and update with the
step-sign rule: every basis on a sample's path moves by
``alpha * delta * step_value(basis, u)``, the bias by ``alpha * delta``.

The raw step-sign increment is divided by the path's total step energy

    E(u) = 1 + sum_d step_value(d, u) * forward_value(d, u)

(the 1 is the bias term; E is a property of the code alone, >= 1 always).
This makes one update at learning rate 1 move the prediction at its own
code exactly onto the target, a projection-style hill climb that stays
stable at any amplitude schedule, layer width or input distribution; it is
what lets a single fixed learning rate serve every experiment.

The dense backend stores raw per-basis vectors keyed by (depth, prefix) and
is the uncompressed reference.  The PATRICIA backend compresses single-child
chains into edges.  Because a step-sign update moves every basis of a chain
by the same amount once amplitude and sign are factored out, each edge can
hold a single *normalized* vector e with the convention

    actual_weight(depth d) = amplitude(d) * chain_sign(d) * e

where chain_sign(d) is +1 when the edge's next bit is 0.  A full-chain
update is then one depth-independent increment ``e += alpha * delta / E``,
and branch nodes (whose next bit varies per sample) keep their own
normalized vector.  Keys that diverge inside an edge split it first; the
basis at the split point inherits ``chain_sign * e`` as its own vector,
which reproduces the uncompressed semantics exactly.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from io import BytesIO

import numpy as np

from .basis import (
    BasisKind,
    BasisProfile,
    BasisRegion,
    NodePath,
    haar_eval,
    slash_derivative,
    slash_eval,
)
from .codec import UnitCode

_MAGIC = b"SKT1"
_VERSION = 1
_KIND_CODE = {BasisKind.HAAR: 0, BasisKind.SLASH: 1, BasisKind.CONSTANT_BIAS: 2}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


class DivergentUpdateError(ValueError):
    """Raised when an update is fed a non-finite error vector."""


class ModelFormatError(ValueError):
    """Raised on malformed serialized models."""


@dataclass
class PredictResult:
    y: np.ndarray
    dy_du: np.ndarray


class _Node:
    __slots__ = ("edge_bits", "edge_len", "fold", "coeff", "child0", "child1",
                 "key_depth")

    def __init__(self, edge_bits, edge_len, fold, coeff, key_depth):
        self.edge_bits = edge_bits
        self.edge_len = edge_len
        self.fold = fold
        self.coeff = coeff
        self.child0 = None
        self.child1 = None
        self.key_depth = key_depth


def _check_tree_profile(profile: BasisProfile, precision: int) -> None:
    if profile.depth_count < precision:
        raise ValueError("profile does not cover the key precision")
    if any(r.kind is BasisKind.CONSTANT_BIAS for r in profile.regions):
        # the constant term is the tree's built-in bias vector
        raise ValueError("tree backends take haar/slash regions only")


def _as_delta(delta, out_dim) -> list[float]:
    if isinstance(delta, np.ndarray):
        values = delta.reshape(-1).tolist()
    elif isinstance(delta, (int, float)):
        values = [float(delta)]
    else:
        values = [float(v) for v in delta]
    if len(values) != out_dim:
        raise ValueError(f"delta must have shape ({out_dim},)")
    for v in values:
        if not (-math.inf < v < math.inf) or v != v:
            raise DivergentUpdateError("divergent update: non-finite delta")
    return values


class PatriciaTree:
    """Compressed tree of visited bases; see module docstring for layout.

    ``predict`` reads tree structure only and is safe to call concurrently
    on a fixed tree; ``update`` requires exclusive access.  ``touched_bits``
    counts stored edge bits visited by predicts/updates (verifies that
    per-sample work stays O(precision)); as a plain stats counter it may
    undercount if predicts race, without affecting predictions.
    """

    def __init__(self, out_dim: int, precision: int, profile: BasisProfile):
        _check_tree_profile(profile, precision)
        self.out_dim = out_dim
        self.precision = precision
        self.profile = profile
        # coefficient vectors are plain float lists: the output dimension is
        # small (<= a few dozen), where list arithmetic beats array overhead
        self.bias = [0.0] * out_dim
        self.top: _Node | None = None
        self.node_count = 0
        self.leaf_count = 0
        self.touched_bits = 0
        amps = profile.amplitude_table()[:precision]
        self._amp2 = [a * a for a in amps]
        self._dcoef = [a * a * float(1 << (d + 1)) for d, a in enumerate(amps)]
        # per-depth shape code: 0 step, 1 ramp (dead depths keep amp2 == 0)
        self._ramp = [1 if profile.kind_at(d) is BasisKind.SLASH else 0
                      for d in range(precision)]
        self._haar_energy = sum(a2 for a2, r in zip(self._amp2, self._ramp)
                                if not r)
        # contiguous ramp runs as (scale to reach the run's first depth,
        # [amplitudes^2 of the run]) for the energy loop
        self._ramp_runs = []
        d = 0
        while d < precision:
            if self._ramp[d] and self._amp2[d] != 0.0:
                start = d
                while d < precision and self._ramp[d] and self._amp2[d] != 0.0:
                    d += 1
                self._ramp_runs.append((float(1 << start), self._amp2[start:d]))
            else:
                d += 1

    def step_energy(self, code: UnitCode) -> float:
        """E(u) = 1 + sum of step*forward basis values along the code's path.

        Step (haar) depths contribute their squared amplitude regardless of
        u; ramp depths contribute a2 * |1 - 2t|.  Used to normalize updates.
        """
        self._check_code(code)
        e = 1.0 + self._haar_energy
        u = code.u
        for scale, amps in self._ramp_runs:
            scaled = u * scale
            t = scaled - math.floor(scaled)
            for a2 in amps:
                v = 1.0 - 2.0 * t
                e += a2 * v if v >= 0.0 else -a2 * v
                t = t + t
                if t >= 1.0:
                    t -= 1.0
        return e

    # ---- forward ---------------------------------------------------------

    def _check_code(self, code: UnitCode):
        if code.precision != self.precision:
            raise ValueError(
                f"precision mismatch: code has {code.precision}, tree wants {self.precision}")

    def _edge_scalars(self, lo: int, hi: int, flip_last: bool, t: float):
        """Accumulate fold multipliers for basis depths lo..hi.

        Returns (y multiplier, dy/du multiplier, t after depth hi).
        ``t`` enters as the relative position at depth lo and is advanced by
        the exact recurrence t' = 2t - bit.
        """
        s = 0.0
        sd = 0.0
        amp2 = self._amp2
        ramp = self._ramp
        dcoef = self._dcoef
        for d in range(lo, hi + 1):
            a2 = amp2[d]
            if a2 != 0.0:
                if ramp[d]:
                    sign_k = 1.0 if t < 0.5 else -1.0
                    chain = -sign_k if (flip_last and d == hi) else sign_k
                    s += a2 * chain * (1.0 - 2.0 * t)
                    sd -= dcoef[d] * chain
                else:
                    s += -a2 if (flip_last and d == hi) else a2
            t = 2.0 * t - (1.0 if t >= 0.5 else 0.0)
        return s, sd, t

    def predict(self, code: UnitCode) -> PredictResult:
        """Weighted sum of the bases on the code's path, plus its u-derivative."""
        if self.out_dim == 1:
            return self._predict_scalar(code)
        self._check_code(code)
        k_range = range(self.out_dim)
        y = list(self.bias)
        dy = [0.0] * self.out_dim
        node = self.top
        if node is None:
            return PredictResult(np.array(y), np.array(dy))
        p = self.precision
        key = code.bits
        t = code.u  # relative position at depth `consumed`
        amp2 = self._amp2
        ramp = self._ramp
        dcoef = self._dcoef
        consumed = 0
        is_top = True
        bits_seen = 0
        while True:
            elen = node.edge_len
            bits_seen += elen
            fold_lo = consumed if is_top else consumed + 1
            if elen:
                sample = (key >> (p - consumed - elen)) & ((1 << elen) - 1)
                diff = sample ^ node.edge_bits
                if diff:
                    j = elen - diff.bit_length() + 1  # first mismatching edge bit
                    hi = consumed + j - 1
                    if fold_lo <= hi:
                        s, sd, _ = self._edge_scalars(fold_lo, hi, True, t)
                        fold = node.fold
                        if s != 0.0:
                            for k in k_range:
                                y[k] += s * fold[k]
                        if sd != 0.0:
                            for k in k_range:
                                dy[k] += sd * fold[k]
                    break
                hi = node.key_depth - 1
                if fold_lo <= hi:
                    s, sd, t = self._edge_scalars(fold_lo, hi, False, t)
                    fold = node.fold
                    if s != 0.0:
                        for k in k_range:
                            y[k] += s * fold[k]
                    if sd != 0.0:
                        for k in k_range:
                            dy[k] += sd * fold[k]
            consumed = node.key_depth
            if node.child0 is None:
                break
            d = consumed
            a2 = amp2[d]
            if a2 != 0.0:
                coeff = node.coeff
                if ramp[d]:
                    s = a2 * (1.0 - 2.0 * t)
                    dc = dcoef[d]
                    for k in k_range:
                        y[k] += s * coeff[k]
                        dy[k] -= dc * coeff[k]
                else:
                    s = a2 if t < 0.5 else -a2
                    for k in k_range:
                        y[k] += s * coeff[k]
            bit = 1 if t >= 0.5 else 0
            t = 2.0 * t - bit
            node = node.child1 if bit else node.child0
            is_top = False
        self.touched_bits += bits_seen
        return PredictResult(np.array(y), np.array(dy))

    def _predict_scalar(self, code: UnitCode) -> PredictResult:
        # out_dim == 1 clone of predict on plain floats (hot path)
        self._check_code(code)
        y = self.bias[0]
        dy = 0.0
        node = self.top
        if node is None:
            return PredictResult(np.array([y]), np.array([dy]))
        p = self.precision
        key = code.bits
        t = code.u
        amp2 = self._amp2
        ramp = self._ramp
        dcoef = self._dcoef
        consumed = 0
        is_top = True
        bits_seen = 0
        while True:
            elen = node.edge_len
            bits_seen += elen
            fold_lo = consumed if is_top else consumed + 1
            if elen:
                sample = (key >> (p - consumed - elen)) & ((1 << elen) - 1)
                diff = sample ^ node.edge_bits
                if diff:
                    j = elen - diff.bit_length() + 1
                    hi = consumed + j - 1
                    if fold_lo <= hi:
                        s, sd, _ = self._edge_scalars(fold_lo, hi, True, t)
                        y += s * node.fold[0]
                        dy += sd * node.fold[0]
                    break
                hi = node.key_depth - 1
                if fold_lo <= hi:
                    s, sd, t = self._edge_scalars(fold_lo, hi, False, t)
                    y += s * node.fold[0]
                    dy += sd * node.fold[0]
            consumed = node.key_depth
            if node.child0 is None:
                break
            a2 = amp2[consumed]
            if a2 != 0.0:
                c0 = node.coeff[0]
                if ramp[consumed]:
                    y += a2 * (1.0 - 2.0 * t) * c0
                    dy -= dcoef[consumed] * c0
                else:
                    y += a2 * c0 if t < 0.5 else -a2 * c0
            if t >= 0.5:
                t = 2.0 * t - 1.0
                node = node.child1
            else:
                t = 2.0 * t
                node = node.child0
            is_top = False
        self.touched_bits += bits_seen
        return PredictResult(np.array([y]), np.array([dy]))

    # ---- update ----------------------------------------------------------

    def update(self, code: UnitCode, delta, alpha: float) -> None:
        """Energy-normalized step-sign rule on the code's path.

        Every visited basis moves by ``alpha * delta * step_value / E(u)``
        and the bias by ``alpha * delta / E(u)``, so at alpha = 1 the
        prediction at this code lands exactly on ``prediction + delta``.
        Splits edges as needed and grows the tree by at most two nodes.  A
        zero error vector leaves the tree untouched (no structure is
        allocated either).
        """
        self._check_code(code)
        if self.out_dim == 1:
            return self._update_scalar(code, delta, alpha)
        scale = alpha / self.step_energy(code)
        inc = [v * scale for v in _as_delta(delta, self.out_dim)]
        if not any(inc):
            return
        key = code.bits
        p = self.precision
        k_range = range(self.out_dim)
        bias = self.bias
        for k in k_range:
            bias[k] += inc[k]
        if self.top is None:
            self.top = _Node(key, p, list(inc), None, p)
            self.node_count = 1
            self.leaf_count = 1
            self.touched_bits += p
            return
        node = self.top
        parent = None
        parent_bit = 0
        consumed = 0
        is_top = True
        while True:
            elen = node.edge_len
            self.touched_bits += elen
            if elen:
                sample = (key >> (p - consumed - elen)) & ((1 << elen) - 1)
                diff = sample ^ node.edge_bits
                if diff:
                    j = elen - diff.bit_length() + 1
                    branch = self._split(node, parent, parent_bit, consumed, j, key)
                    if branch.key_depth - consumed - (0 if is_top else 1) > 0:
                        fold = branch.fold
                        for k in k_range:
                            fold[k] += inc[k]
                    bit = (key >> (p - branch.key_depth - 1)) & 1
                    coeff = branch.coeff
                    if bit:
                        for k in k_range:
                            coeff[k] -= inc[k]
                        leaf = branch.child1
                    else:
                        for k in k_range:
                            coeff[k] += inc[k]
                        leaf = branch.child0
                    self.touched_bits += leaf.edge_len
                    if leaf.edge_len > 1:
                        fold = leaf.fold
                        for k in k_range:
                            fold[k] += inc[k]
                    return
            if node.key_depth - consumed - (0 if is_top else 1) > 0:
                fold = node.fold
                for k in k_range:
                    fold[k] += inc[k]
            consumed = node.key_depth
            if node.child0 is None:
                return
            parent = node
            parent_bit = (key >> (p - consumed - 1)) & 1
            coeff = node.coeff
            if parent_bit:
                for k in k_range:
                    coeff[k] -= inc[k]
                node = node.child1
            else:
                for k in k_range:
                    coeff[k] += inc[k]
                node = node.child0
            is_top = False

    def _update_scalar(self, code: UnitCode, delta, alpha: float) -> None:
        # out_dim == 1 clone of update on plain floats (hot path)
        inc = _as_delta(delta, 1)[0] * (alpha / self.step_energy(code))
        if inc == 0.0:
            return
        key = code.bits
        p = self.precision
        self.bias[0] += inc
        if self.top is None:
            self.top = _Node(key, p, [inc], None, p)
            self.node_count = 1
            self.leaf_count = 1
            self.touched_bits += p
            return
        node = self.top
        parent = None
        parent_bit = 0
        consumed = 0
        is_top = True
        while True:
            elen = node.edge_len
            self.touched_bits += elen
            if elen:
                sample = (key >> (p - consumed - elen)) & ((1 << elen) - 1)
                diff = sample ^ node.edge_bits
                if diff:
                    j = elen - diff.bit_length() + 1
                    branch = self._split(node, parent, parent_bit, consumed, j, key)
                    if branch.key_depth - consumed - (0 if is_top else 1) > 0:
                        branch.fold[0] += inc
                    bit = (key >> (p - branch.key_depth - 1)) & 1
                    if bit:
                        branch.coeff[0] -= inc
                        leaf = branch.child1
                    else:
                        branch.coeff[0] += inc
                        leaf = branch.child0
                    self.touched_bits += leaf.edge_len
                    if leaf.edge_len > 1:
                        leaf.fold[0] += inc
                    return
            if node.key_depth - consumed - (0 if is_top else 1) > 0:
                node.fold[0] += inc
            consumed = node.key_depth
            if node.child0 is None:
                return
            parent = node
            parent_bit = (key >> (p - consumed - 1)) & 1
            if parent_bit:
                node.coeff[0] -= inc
                node = node.child1
            else:
                node.coeff[0] += inc
                node = node.child0
            is_top = False

    def _split(self, node: _Node, parent, parent_bit: int, consumed: int,
               j: int, key: int) -> _Node:
        p = self.precision
        elen = node.edge_len
        split_depth = consumed + j - 1  # depth of the new branch's own basis
        old_bit = (node.edge_bits >> (elen - j)) & 1
        branch = _Node(
            edge_bits=node.edge_bits >> (elen - (j - 1)),
            edge_len=j - 1,
            fold=list(node.fold),
            coeff=(list(node.fold) if old_bit == 0 else [-v for v in node.fold]),
            key_depth=split_depth,
        )
        # the old node keeps the lower part of the edge and everything below
        node.edge_bits &= (1 << (elen - j + 1)) - 1
        node.edge_len = elen - j + 1
        leaf_len = p - split_depth
        leaf = _Node(
            edge_bits=key & ((1 << leaf_len) - 1),
            edge_len=leaf_len,
            fold=[0.0] * self.out_dim,
            coeff=None,
            key_depth=p,
        )
        if old_bit:
            branch.child0, branch.child1 = leaf, node
        else:
            branch.child0, branch.child1 = node, leaf
        if parent is None:
            self.top = branch
        elif parent_bit:
            parent.child1 = branch
        else:
            parent.child0 = branch
        self.node_count += 2
        self.leaf_count += 1
        return branch

    # ---- inspection ------------------------------------------------------

    def nodes(self):
        """Pre-order (node, structural_depth, is_top) traversal."""
        if self.top is None:
            return
        stack = [(self.top, 0, True)]
        while stack:
            node, depth, is_top = stack.pop()
            yield node, depth, is_top
            if node.child0 is not None:
                stack.append((node.child1, depth + 1, False))
                stack.append((node.child0, depth + 1, False))

    def max_depth(self) -> int:
        """Longest root-to-leaf chain of stored node records."""
        best = 0
        for _, depth, _ in self.nodes():
            best = max(best, depth + 1)
        return best

    def check_invariants(self) -> None:
        count = 0
        leaves = 0
        for node, _, is_top in self.nodes():
            count += 1
            children = (node.child0 is not None) + (node.child1 is not None)
            if children == 1:
                raise AssertionError("single-child node found")
            if children == 0:
                leaves += 1
                if node.key_depth != self.precision:
                    raise AssertionError("leaf not at full key depth")
                if node.coeff is not None:
                    raise AssertionError("leaf carries a basis vector")
            else:
                if node.coeff is None:
                    raise AssertionError("branch without a basis vector")
            if not is_top and node.edge_len < 1:
                raise AssertionError("empty edge below the top")
            if node.edge_len and node.edge_bits >> node.edge_len:
                raise AssertionError("edge bits exceed edge length")
        if count != self.node_count or leaves != self.leaf_count:
            raise AssertionError("node accounting mismatch")

    def linear_cell(self, code: UnitCode) -> tuple[float, float]:
        """Bounds of the model's linear piece containing the code.

        The prediction is affine in u between consecutive half-supports of
        the deepest stored basis on the code's path.
        """
        self._check_code(code)
        if self.top is None:
            return 0.0, 1.0
        p = self.precision
        key = code.bits
        node = self.top
        consumed = 0
        deepest = 0
        while True:
            elen = node.edge_len
            if elen:
                sample = (key >> (p - consumed - elen)) & ((1 << elen) - 1)
                diff = sample ^ node.edge_bits
                if diff:
                    deepest = consumed + (elen - diff.bit_length() + 1) - 1
                    break
            consumed = node.key_depth
            if node.child0 is None:
                deepest = min(consumed, p - 1)
                break
            node = node.child1 if ((key >> (p - consumed - 1)) & 1) else node.child0
        width = 2.0 ** -(deepest + 1)
        left = math.floor(code.u / width) * width
        return left, left + width

    # ---- serialization ---------------------------------------------------

    def serialize(self) -> bytes:
        out = BytesIO()
        out.write(_MAGIC)
        out.write(struct.pack("<HBB", _VERSION, int(self.profile.unit_constant),
                              len(self.profile.regions)))
        for region in self.profile.regions:
            out.write(struct.pack("<HBd", region.depths, _KIND_CODE[region.kind],
                                  region.beta))
        out.write(struct.pack("<HIQ", self.precision, self.out_dim, self.node_count))
        vec = struct.Struct(f"<{self.out_dim}d")
        out.write(vec.pack(*self.bias))
        for node, _, _ in self.nodes():
            nbytes = (node.edge_len + 7) // 8
            flags = (1 if node.child0 is not None else 0) | (2 if node.coeff is not None else 0)
            out.write(struct.pack("<HB", node.edge_len, flags))
            out.write(node.edge_bits.to_bytes(nbytes, "big"))
            out.write(vec.pack(*node.fold))
            if node.coeff is not None:
                out.write(vec.pack(*node.coeff))
        return out.getvalue()

    @classmethod
    def deserialize(cls, blob: bytes) -> "PatriciaTree":
        buf = BytesIO(blob)

        def take(n, what):
            data = buf.read(n)
            if len(data) != n:
                raise ModelFormatError(f"truncated model file ({what})")
            return data

        if take(4, "magic") != _MAGIC:
            raise ModelFormatError("bad magic: not a tree model file")
        version, unit_constant, n_regions = struct.unpack("<HBB", take(4, "header"))
        if version != _VERSION:
            raise ModelFormatError(f"unsupported model version {version}")
        regions = []
        for _ in range(n_regions):
            depths, kind_code, beta = struct.unpack("<HBd", take(11, "region"))
            if kind_code not in _CODE_KIND:
                raise ModelFormatError("unknown basis kind")
            regions.append(BasisRegion(depths, _CODE_KIND[kind_code], beta))
        profile = BasisProfile(regions=tuple(regions), unit_constant=bool(unit_constant))
        precision, out_dim, node_count = struct.unpack("<HIQ", take(14, "header"))
        tree = cls(out_dim, precision, profile)
        vec = struct.Struct(f"<{out_dim}d")
        tree.bias = list(vec.unpack(take(8 * out_dim, "bias")))

        def read_node(consumed, is_top):
            edge_len, flags = struct.unpack("<HB", take(3, "node"))
            nbytes = (edge_len + 7) // 8
            edge_bits = int.from_bytes(take(nbytes, "edge bits"), "big")
            if edge_len and edge_bits >> edge_len:
                raise ModelFormatError("corrupt edge bits")
            if not is_top and edge_len < 1:
                raise ModelFormatError("corrupt structure: empty edge")
            fold = list(vec.unpack(take(8 * out_dim, "fold")))
            coeff = None
            if flags & 2:
                coeff = list(vec.unpack(take(8 * out_dim, "coeff")))
            node = _Node(edge_bits, edge_len, fold, coeff, consumed + edge_len)
            if flags & 1:
                if coeff is None:
                    raise ModelFormatError("corrupt structure: branch without vector")
                node.child0 = read_node(node.key_depth, False)
                node.child1 = read_node(node.key_depth, False)
                tree.node_count += 2
            else:
                if node.key_depth != precision:
                    raise ModelFormatError("corrupt structure: leaf depth")
                tree.leaf_count += 1
            return node

        if node_count:
            tree.top = read_node(0, True)
            tree.node_count += 1
        if tree.node_count != node_count:
            raise ModelFormatError("node count mismatch")
        if buf.read(1):
            raise ModelFormatError("trailing data after model")
        return tree


class DenseTree:
    """Uncompressed reference backend: one raw vector per visited basis.

    Predict/update go through the closed-form basis evaluators, making this
    the independent oracle for the PATRICIA backend.  Coefficients live in
    per-depth maps keyed by the path prefix; absent entries are the zero
    initial value.
    """

    def __init__(self, out_dim: int, precision: int, profile: BasisProfile):
        _check_tree_profile(profile, precision)
        self.out_dim = out_dim
        self.precision = precision
        self.profile = profile
        self.bias = np.zeros(out_dim)
        self.levels: list[dict[int, np.ndarray]] = [dict() for _ in range(precision)]
        # Adam moment estimates, allocated lazily alongside the weights
        self._m: list[dict[int, np.ndarray]] = [dict() for _ in range(precision)]
        self._v: list[dict[int, np.ndarray]] = [dict() for _ in range(precision)]
        self._m_bias = np.zeros(out_dim)
        self._v_bias = np.zeros(out_dim)

    def _check_code(self, code: UnitCode):
        if code.precision != self.precision:
            raise ValueError(
                f"precision mismatch: code has {code.precision}, tree wants {self.precision}")

    def _path(self, code: UnitCode):
        for depth in range(self.precision):
            yield depth, NodePath(depth, code.bits >> (self.precision - depth))

    def predict(self, code: UnitCode) -> PredictResult:
        self._check_code(code)
        y = self.bias.copy()
        dy = np.zeros(self.out_dim)
        u = code.u
        for depth, path in self._path(code):
            w = self.levels[depth].get(path.index)
            if w is None:
                continue
            if self.profile.kind_at(depth) is BasisKind.HAAR:
                y += haar_eval(path, u, self.profile) * w
            else:
                y += slash_eval(path, u, self.profile) * w
                dy += slash_derivative(path, u, self.profile) * w
        return PredictResult(y, dy)

    def step_energy(self, code: UnitCode) -> float:
        e = 1.0
        for depth, path in self._path(code):
            phi = haar_eval(path, code.u, self.profile)
            if self.profile.kind_at(depth) is BasisKind.HAAR:
                e += phi * phi
            else:
                e += phi * slash_eval(path, code.u, self.profile)
        return e

    def update(self, code: UnitCode, delta, alpha: float) -> None:
        self._check_code(code)
        inc = np.array(_as_delta(delta, self.out_dim)) * (alpha / self.step_energy(code))
        if not inc.any():
            return
        self.bias += inc
        for depth, path in self._path(code):
            w = self.levels[depth].get(path.index)
            if w is None:
                w = self.levels[depth].setdefault(path.index, np.zeros(self.out_dim))
            w += haar_eval(path, code.u, self.profile) * inc

    def node_count(self) -> int:
        return sum(len(level) for level in self.levels)

    def adam_step(self, code: UnitCode, delta, hyper=(0.001, 0.9, 0.999, 1e-8),
                  t: int = 1) -> None:
        """One Adam update with the step-sign gradient surrogate.

        Moment decay touches every materialized parameter (never-touched
        parameters stay exactly zero, so only allocated entries matter),
        which is what confines this optimizer to the dense backend.
        """
        alpha, beta1, beta2, eps = hyper
        if t < 1:
            raise ValueError("step index must be >= 1")
        inc = np.array(_as_delta(delta, self.out_dim))
        grads: dict[tuple[int, int], np.ndarray] = {}
        if inc.any():
            for depth, path in self._path(code):
                phi = haar_eval(path, code.u, self.profile)
                if phi != 0.0:
                    grads[(depth, path.index)] = -inc * phi
                    if path.index not in self.levels[depth]:
                        self.levels[depth][path.index] = np.zeros(self.out_dim)
                        self._m[depth][path.index] = np.zeros(self.out_dim)
                        self._v[depth][path.index] = np.zeros(self.out_dim)
        c1 = 1.0 - beta1**t
        c2 = 1.0 - beta2**t

        def apply(theta, m, v, g):
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            theta -= alpha * (m / c1) / (np.sqrt(v / c2) + eps)

        apply(self.bias, self._m_bias, self._v_bias, -inc)
        zero = np.zeros(self.out_dim)
        for depth in range(self.precision):
            for index, w in self.levels[depth].items():
                g = grads.get((depth, index), zero)
                if index not in self._m[depth]:
                    self._m[depth][index] = np.zeros(self.out_dim)
                    self._v[depth][index] = np.zeros(self.out_dim)
                apply(w, self._m[depth][index], self._v[depth][index], g)


def adam_step(dense: DenseTree, code: UnitCode, delta, hyper=(0.001, 0.9, 0.999, 1e-8),
              t: int = 1) -> None:
    if not isinstance(dense, DenseTree):
        raise TypeError("adam_step runs on the dense backend only")
    dense.adam_step(code, delta, hyper, t)
