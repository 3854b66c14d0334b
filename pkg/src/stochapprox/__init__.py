"""Stochastic approximation toolkit: Dvoretzky-form processes, finite-horizon
hypothesis certificates, series constructions and exact finite probability."""

from .errors import (
    ConfigError,
    LengthMismatch,
    MeasurabilityError,
    MonotonicityError,
    PreconditionError,
    RefinementError,
    SignViolation,
    SizeGuardError,
    StochApproxError,
)
from .series import RealSeq, builtin, family

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "LengthMismatch",
    "MeasurabilityError",
    "MonotonicityError",
    "PreconditionError",
    "RealSeq",
    "RefinementError",
    "SignViolation",
    "SizeGuardError",
    "StochApproxError",
    "builtin",
    "family",
]
