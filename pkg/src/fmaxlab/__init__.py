"""Divergence-minimisation imitation learning on exact tabular and point-mass problems."""

from .errors import (
    AbsoluteContinuityViolation,
    ConfigError,
    DivergedParameters,
    DomainViolation,
    EmptyDemos,
    FmaxLabError,
    MissingRun,
    NonConvergence,
    ShapeMismatch,
    SingularSystem,
)
from .fdiv import FORWARD_KL, JENSEN_SHANNON, REVERSE_KL, FDivergence, eval_divergence, get_divergence

__version__ = "0.1.0"

__all__ = [
    "AbsoluteContinuityViolation",
    "ConfigError",
    "DivergedParameters",
    "DomainViolation",
    "EmptyDemos",
    "FDivergence",
    "FORWARD_KL",
    "FmaxLabError",
    "JENSEN_SHANNON",
    "MissingRun",
    "NonConvergence",
    "REVERSE_KL",
    "ShapeMismatch",
    "SingularSystem",
    "eval_divergence",
    "get_divergence",
]
