"""slashkan: online function approximation on dyadic ramp/step bases.

Learned unary functions live in PATRICIA trees keyed by the bit pattern of
the input; multi-layer networks compose them KAN-style.  See README for the
CLI surface.
"""

from .basis import (
    BasisKind,
    BasisProfile,
    BasisRegion,
    NodePath,
    amplitude,
    haar_eval,
    haar_from_slash,
    orthonormal_haar_eval,
    single_region_profile,
    sign_exponent_significand_profile,
    slash_derivative,
    slash_eval,
)
from .codec import CodecConfig, UnitCode, encode, encode_derivative, raw_index
from .kan import (
    Network,
    NetworkSpec,
    Seeds,
    TrainConfig,
    TrainingReport,
    evaluate,
    train,
    train_classifier,
)
from .tree import DenseTree, PatriciaTree, PredictResult, adam_step

__version__ = "0.1.0"

__all__ = [
    "BasisKind",
    "BasisProfile",
    "BasisRegion",
    "CodecConfig",
    "DenseTree",
    "Network",
    "NetworkSpec",
    "NodePath",
    "PatriciaTree",
    "PredictResult",
    "Seeds",
    "TrainConfig",
    "TrainingReport",
    "UnitCode",
    "adam_step",
    "amplitude",
    "encode",
    "encode_derivative",
    "evaluate",
    "haar_eval",
    "haar_from_slash",
    "orthonormal_haar_eval",
    "raw_index",
    "single_region_profile",
    "sign_exponent_significand_profile",
    "slash_derivative",
    "slash_eval",
    "train",
    "train_classifier",
    "__version__",
]
