"""Viability and exponential stability for continuity inclusions on empirical measures."""

from .errors import (
    BaseMismatchError,
    DimensionError,
    DomainError,
    NotInConstraint,
    NumericalError,
    ScenarioError,
    WviabError,
)
from .measures import EmpiricalMeasure, TangentVector, TransportPlan, pushforward, w2, wasserstein2

__version__ = "0.1.0"

__all__ = [
    "BaseMismatchError",
    "DimensionError",
    "DomainError",
    "EmpiricalMeasure",
    "NotInConstraint",
    "NumericalError",
    "ScenarioError",
    "TangentVector",
    "TransportPlan",
    "WviabError",
    "__version__",
    "pushforward",
    "w2",
    "wasserstein2",
]
