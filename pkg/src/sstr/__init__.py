"""Successful symbol transmission rate of grant-free massive access with
massive MIMO: closed-form analysis, Monte-Carlo validation and optimisation
of the access probability and pilot length."""

__version__ = "0.1.0"

from .analytic import Beamformer, SstrPoint, sstr_exact, sstr_mean_approx
from .errors import (
    DegenerateDistribution,
    InsufficientTrials,
    NoConvergence,
    OutOfRange,
    ParseError,
    ShapeMismatch,
    ZfUnavailable,
)
from .model import SystemConfig, validate_config
from .optimizer import OptResult

__all__ = [
    "Beamformer",
    "DegenerateDistribution",
    "InsufficientTrials",
    "NoConvergence",
    "OptResult",
    "OutOfRange",
    "ParseError",
    "ShapeMismatch",
    "SstrPoint",
    "SystemConfig",
    "ZfUnavailable",
    "sstr_exact",
    "sstr_mean_approx",
    "validate_config",
]
