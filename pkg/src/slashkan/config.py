"""Dict <-> object converters for the JSON-facing configuration surface."""

from __future__ import annotations

from .basis import BasisKind, BasisProfile, BasisRegion
from .codec import CodecConfig


def codec_to_dict(cfg: CodecConfig) -> dict:
    if cfg.kind == "float754":
        return {"kind": "float754", "significand_bits": cfg.significand_bits}
    return {"kind": "fixed", "bits": cfg.fixed_bits}


def codec_from_dict(raw: dict) -> CodecConfig:
    kind = raw.get("kind", "float754")
    if kind == "float754":
        return CodecConfig(kind="float754",
                           significand_bits=int(raw.get("significand_bits", 16)))
    return CodecConfig(kind="fixed", fixed_bits=int(raw.get("bits", 16)))


def profile_to_dict(profile: BasisProfile) -> dict:
    return {
        "regions": [{"depths": r.depths, "kind": r.kind.value, "beta": r.beta}
                    for r in profile.regions],
        "unit_constant": profile.unit_constant,
    }


def profile_from_dict(raw: dict) -> BasisProfile:
    regions = tuple(
        BasisRegion(int(r["depths"]), BasisKind(r["kind"]), float(r["beta"]))
        for r in raw["regions"])
    return BasisProfile(regions=regions, unit_constant=bool(raw.get("unit_constant", False)))
