"""Hierarchical dyadic basis systems on [0, 1).

Three basis families share the same dyadic tree layout:

* step bases ("haar"): +A on the first half of a node's support, -A on the
  second half;
* ramp bases ("slash"): a straight line from +A at the left edge of the
  support down to -A at the right edge, giving a nonzero first derivative;
* the classical orthonormal step wavelets, kept as a test reference.

A node of the tree is addressed by its bit path; the node at depth d has
support of width 2**-d and its two children split that support in half.
Amplitudes decay geometrically with depth, controlled per depth region by a
discount factor beta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum


class BasisKind(Enum):
    HAAR = "haar"
    SLASH = "slash"
    CONSTANT_BIAS = "bias"


@dataclass(frozen=True)
class BasisRegion:
    """A contiguous run of depths sharing one basis kind and discount."""

    depths: int
    kind: BasisKind
    beta: float

    def __post_init__(self):
        if self.depths < 1:
            raise ValueError("region must cover at least one depth")
        if not (0.0 < self.beta <= 1.0):
            raise ValueError("beta must be in (0, 1]")


@dataclass(frozen=True)
class BasisProfile:
    """Per-depth basis kind and amplitude schedule.

    ``regions`` are contiguous, start at depth 0 and do not overlap.  The
    amplitude at depth d is ``c * beta**(d'/2)`` with d' counted from the
    start of d's region, so a leading no-discount region does not attenuate
    deeper regions; ``constant_for`` defines c per region.
    """

    regions: tuple[BasisRegion, ...]
    unit_constant: bool = False

    def __post_init__(self):
        if not self.regions:
            raise ValueError("profile needs at least one region")
        object.__setattr__(self, "regions", tuple(self.regions))

    def constant_for(self, region: BasisRegion) -> float:
        """Leading amplitude factor c of a region.

        sqrt(1 - beta) for discounted regions; 1 for beta == 1 regions,
        where the discounted constant would degenerate to zero (no-discount
        regions simply keep unit steps).  ``unit_constant`` switches every
        region to c = 1.
        """
        if self.unit_constant or region.beta == 1.0:
            return 1.0
        return math.sqrt(1.0 - region.beta)

    @property
    def depth_count(self) -> int:
        return sum(r.depths for r in self.regions)

    def region_at(self, depth: int) -> tuple[BasisRegion, int]:
        """Region covering ``depth`` and the depth offset within it."""
        if depth < 0:
            raise ValueError("depth must be >= 0")
        start = 0
        for region in self.regions:
            if depth < start + region.depths:
                return region, depth - start
            start += region.depths
        raise ValueError(f"depth overflow: {depth} >= {self.depth_count}")

    def kind_at(self, depth: int) -> BasisKind:
        return self.region_at(depth)[0].kind

    def beta_at(self, depth: int) -> float:
        return self.region_at(depth)[0].beta

    def amplitude_table(self) -> list[float]:
        return [amplitude(d, self) for d in range(self.depth_count)]


def single_region_profile(depths: int, kind: BasisKind = BasisKind.SLASH,
                          beta: float = 0.5) -> BasisProfile:
    return BasisProfile(regions=(BasisRegion(depths, kind, beta),))


def sign_exponent_significand_profile(exponent_bits: int = 11,
                                      significand_bits: int = 16,
                                      significand_beta: float = 0.5) -> BasisProfile:
    """Unit step bases over the sign+exponent depths, discounted ramps below."""
    return BasisProfile(regions=(
        BasisRegion(1 + exponent_bits, BasisKind.HAAR, 1.0),
        BasisRegion(significand_bits, BasisKind.SLASH, significand_beta),
    ))


@dataclass(frozen=True)
class NodePath:
    """Bit-string address of one dyadic node: depth bits, empty = top.

    support = [index * 2**-depth, (index + 1) * 2**-depth); the children
    append one bit and halve the support.
    """

    depth: int
    index: int

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if not (0 <= self.index < (1 << self.depth)):
            raise ValueError("index out of range for depth")

    @classmethod
    def from_bits(cls, bits: str) -> "NodePath":
        if bits and set(bits) - {"0", "1"}:
            raise ValueError("bits must contain only 0 and 1")
        return cls(len(bits), int(bits, 2) if bits else 0)

    def bits(self) -> str:
        return format(self.index, f"0{self.depth}b") if self.depth else ""

    def child(self, bit: int) -> "NodePath":
        return NodePath(self.depth + 1, (self.index << 1) | bit)

    def support(self) -> tuple[float, float]:
        width = 2.0 ** -self.depth
        return self.index * width, (self.index + 1) * width

    def contains(self, u: float) -> bool:
        left, right = self.support()
        return left <= u < right

    def __str__(self) -> str:
        return self.bits() or "(top)"


def amplitude(depth: int, profile: BasisProfile) -> float:
    """Amplitude A(depth) = c * beta**(d'/2), d' relative to the region start.

    Raises ValueError("depth overflow ...") past the profile's coverage.
    """
    region, rel = profile.region_at(depth)
    return profile.constant_for(region) * region.beta ** (rel / 2.0)


def _relative_position(path: NodePath, u: float) -> float:
    # exact: 2**depth * u is a power-of-two scaling, index subtraction exact
    return u * (1 << path.depth) - path.index


def haar_eval(path: NodePath, u: float, profile: BasisProfile) -> float:
    """Step basis: +A on the first half of the support, -A on the second."""
    if not 0.0 <= u < 1.0:
        raise ValueError("u must be in [0, 1)")
    if not path.contains(u):
        return 0.0
    a = amplitude(path.depth, profile)
    if profile.kind_at(path.depth) is BasisKind.CONSTANT_BIAS:
        return a
    t = _relative_position(path, u)
    return a if t < 0.5 else -a


def slash_eval(path: NodePath, u: float, profile: BasisProfile) -> float:
    """Ramp basis: A * (1 - 2t) across the support, 0 outside."""
    if not 0.0 <= u < 1.0:
        raise ValueError("u must be in [0, 1)")
    if not path.contains(u):
        return 0.0
    a = amplitude(path.depth, profile)
    if profile.kind_at(path.depth) is BasisKind.CONSTANT_BIAS:
        return a
    t = _relative_position(path, u)
    return a * (1.0 - 2.0 * t)


def slash_derivative(path: NodePath, u: float, profile: BasisProfile) -> float:
    """d/du of the ramp: -A * 2**(depth+1) on the support interior, else 0.

    Supports are half-open, so a u sitting exactly on a boundary belongs to
    the node whose support contains it.
    """
    if not 0.0 <= u < 1.0:
        raise ValueError("u must be in [0, 1)")
    if not path.contains(u):
        return 0.0
    if profile.kind_at(path.depth) is BasisKind.CONSTANT_BIAS:
        return 0.0
    a = amplitude(path.depth, profile)
    return -a * float(1 << (path.depth + 1))


def haar_from_slash(path: NodePath, u: float, profile: BasisProfile) -> float:
    """Reconstruct the step basis from three ramps; test-only identity.

    step(b) == 2*ramp(b) - (ramp(b0) + ramp(b1)) / sqrt(beta of depth+1),
    exact under the canonical halving convention whenever the amplitude
    ratio A(d+1)/A(d) equals sqrt(beta of d+1).
    """
    beta_child = profile.beta_at(path.depth + 1)
    top = 2.0 * slash_eval(path, u, profile)
    kids = slash_eval(path.child(0), u, profile) + slash_eval(path.child(1), u, profile)
    return top - kids / math.sqrt(beta_child)


def orthonormal_haar_eval(j: int, k: int, x):
    """Classical orthonormal step wavelet, +/-2**(j/2) over dyadic halves.

    Scalar or numpy-array ``x``; test reference for orthonormality checks.
    """
    if j < 0 or not 0 <= k < (1 << j):
        raise ValueError(f"orthonormal index out of range: (j={j}, k={k})")
    import numpy as np

    scale = 2.0 ** (j / 2.0)
    left = k * 2.0 ** -j
    mid = (k + 0.5) * 2.0 ** -j
    right = (k + 1) * 2.0 ** -j
    xa = np.asarray(x)
    out = np.where((xa >= left) & (xa < mid), scale,
                   np.where((xa >= mid) & (xa < right), -scale, 0.0))
    return float(out) if np.isscalar(x) or xa.ndim == 0 else out
