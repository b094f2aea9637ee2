"""Exact simulation of diffusion and jump-diffusion bridges by layered skeletons."""

__version__ = "0.1.0"

from .cauea import simulate_cauea
from .cuea import acceptance_probability_estimate, simulate_cuea
from .errors import (
    ConditionViolation,
    ContractError,
    ExactBridgeError,
    InvalidModelError,
    InvariantViolation,
    NumericFailure,
)
from .jumps import simulate_caujea, simulate_cujea
from .model import (
    DiffusionModel,
    UnitVolatilityModel,
    lamperti_transform,
    logistic,
    model_from_config,
    ornstein_uhlenbeck,
    sine_drift,
    validate_model,
    with_jumps,
    zero_drift,
)
from .restore import restore, restore_original_scale
from .skeleton import BridgeSkeleton, DiagnosticCounters
from .streams import RandomStream, stream_for

__all__ = [
    "__version__",
    "BridgeSkeleton",
    "ConditionViolation",
    "ContractError",
    "DiagnosticCounters",
    "DiffusionModel",
    "ExactBridgeError",
    "InvalidModelError",
    "InvariantViolation",
    "NumericFailure",
    "RandomStream",
    "UnitVolatilityModel",
    "acceptance_probability_estimate",
    "lamperti_transform",
    "logistic",
    "model_from_config",
    "ornstein_uhlenbeck",
    "restore",
    "restore_original_scale",
    "simulate_cauea",
    "simulate_caujea",
    "simulate_cuea",
    "simulate_cujea",
    "sine_drift",
    "stream_for",
    "validate_model",
    "with_jumps",
    "zero_drift",
]
