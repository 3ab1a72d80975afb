"""Input codecs: map reals to unit-interval search keys, differentiably.

The float754 codec reads the IEEE754 double layout of the input directly:
sign bit, 11 exponent bits and the leading significand bits become the first
bits of a point u in [0, 1).  Positive inputs land in [0, 1/2), negatives are
mirrored into [1/2, 1), so the whole real line is covered and the map stays
monotone on each sign (order-reversed for negatives).  Away from exponent
boundaries the map is linear in x, which gives the simple closed-form
derivative needed for back-propagation.

The fixed codec is the identity on [0, 1) with clamping, for inputs with
known bounds.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

_EXPONENT_BITS = 11
_MIN_NORMAL = 2.0**-1022
# code of +inf under the raw-bit reading: exponent field all ones, u = 2047/4096
_POS_INF_U = 2047.0 / 4096.0


@dataclass(frozen=True)
class CodecConfig:
    """Codec choice and bit budget.

    float754: precision = 1 sign bit + 11 exponent bits + ``significand_bits``.
    fixed: precision = ``fixed_bits``.
    """

    kind: str = "float754"
    significand_bits: int = 16
    fixed_bits: int = 16
    exponent_bits: int = _EXPONENT_BITS

    def __post_init__(self):
        if self.kind not in ("float754", "fixed"):
            raise ValueError(f"unknown codec kind: {self.kind!r}")
        if self.kind == "float754":
            if self.exponent_bits != _EXPONENT_BITS:
                raise ValueError("float754 codec requires the IEEE754 double "
                                 "layout (11 exponent bits)")
            if not 1 <= self.significand_bits <= 52:
                raise ValueError("significand_bits must be in [1, 52]")
        else:
            if not 1 <= self.fixed_bits <= 64:
                raise ValueError("fixed_bits must be in [1, 64]")

    @property
    def precision(self) -> int:
        if self.kind == "float754":
            return 1 + self.exponent_bits + self.significand_bits
        return self.fixed_bits


class UnitCode(NamedTuple):
    """A point of [0, 1) plus its leading ``precision`` bits (truncated)."""

    u: float
    bits: int
    precision: int

    def bit_string(self) -> str:
        return format(self.bits, f"0{self.precision}b")


def _positive_unit(x: float) -> float:
    # x >= 0 finite; subnormals fill [0, 2**-11) linearly, meeting the first
    # normal code exactly (slope 2**1011, the same one the derivative uses)
    if x < _MIN_NORMAL:
        return math.ldexp(x, 1011)
    m, e = math.frexp(x)
    return math.ldexp(e + 1022 + 2.0 * m, -12)


def encode(x: float, cfg: CodecConfig, *, allow_infinite: bool = False) -> UnitCode:
    """Map a real input to its unit-interval code.

    Non-finite inputs raise ValueError("non-finite input"); callers that
    evaluate through overflowed intermediates may pass ``allow_infinite`` to
    get the raw-bit boundary code for +-inf instead (NaN always raises).
    """
    x = float(x)
    if not math.isfinite(x):
        if math.isnan(x) or not allow_infinite:
            raise ValueError(f"non-finite input: {x!r}")
        u = _POS_INF_U if x > 0 else 0.5 + _POS_INF_U
        return UnitCode(u, int(u * (1 << cfg.precision)), cfg.precision)
    if cfg.kind == "float754":
        u = _positive_unit(x) if x >= 0 else 0.5 + _positive_unit(-x)
    else:
        u = min(max(x, 0.0), 1.0 - math.ldexp(1.0, -cfg.fixed_bits))
    return UnitCode(u, int(u * (1 << cfg.precision)), cfg.precision)


def encode_derivative(x: float, cfg: CodecConfig) -> float:
    """du/dx of the codec map.

    float754: +-2**(-fexp(x)-11) with fexp from the x = m * 2**fexp,
    |m| in [1/2, 1) normalization; this is the exact slope of ``encode`` away
    from exponent boundaries (checked against central differences).  At
    x == 0 the two-sided derivative does not exist and the subnormal slope
    2**1012 would only blow up back-propagation, so 0.0 is returned.
    fixed: 1 inside [0, 1), 0 in the clamped region.
    """
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"non-finite input: {x!r}")
    if cfg.kind == "fixed":
        return 1.0 if 0.0 <= x < 1.0 else 0.0
    if x == 0.0:
        return 0.0
    if abs(x) < _MIN_NORMAL:
        d = math.ldexp(1.0, 1011)
    else:
        d = math.ldexp(1.0, -math.frexp(x)[1] - 11)
    return d if x > 0 else -d


def raw_index(x: float) -> int:
    """IEEE754 bit pattern of x as an unsigned 64-bit integer.

    Monotone non-decreasing in x for x >= 0; negatives carry the sign bit.
    Fast-path ordering oracle for ``encode``.
    """
    if not math.isfinite(x):
        raise ValueError(f"non-finite input: {x!r}")
    return struct.unpack("<Q", struct.pack("<d", x))[0]


def encode_batch(xs: np.ndarray, cfg: CodecConfig) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``encode`` over finite inputs: (u values, key integers)."""
    xs = np.asarray(xs, dtype=np.float64)
    if not np.isfinite(xs).all():
        raise ValueError("non-finite input")
    if cfg.kind == "fixed":
        u = np.clip(xs, 0.0, 1.0 - math.ldexp(1.0, -cfg.fixed_bits))
    else:
        mag = np.abs(xs)
        m, e = np.frexp(mag)
        normal = np.ldexp(e + 1022 + 2.0 * m, -12)
        small = mag < _MIN_NORMAL
        sub = np.ldexp(np.where(small, mag, 0.0), 1011)
        pos = np.where(small, sub, normal)
        u = np.where(xs < 0, 0.5 + pos, pos)
    keys = (u * float(1 << cfg.precision)).astype(np.uint64)
    return u, keys
