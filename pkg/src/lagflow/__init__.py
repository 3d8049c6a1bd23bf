"""Special Lagrangian operators F_tau and the parabolic flow for the second boundary value problem."""

from .errors import (
    BoundaryNewtonError,
    ConeViolationError,
    ConfigError,
    ConvexityLossError,
    DomainError,
    LagflowError,
    RangeError,
    RegionError,
)
from .geometry import Disk, Ellipse, LevelSet
from .operator import Branch, OperatorTau, make_operator
from .solver import FlowConfig, FlowReport, FlowState, GridSpec, InitialData, run_flow

__version__ = "0.1.0"

__all__ = [
    "BoundaryNewtonError",
    "ConeViolationError",
    "ConfigError",
    "ConvexityLossError",
    "DomainError",
    "LagflowError",
    "RangeError",
    "RegionError",
    "Disk",
    "Ellipse",
    "LevelSet",
    "Branch",
    "OperatorTau",
    "make_operator",
    "FlowConfig",
    "FlowReport",
    "FlowState",
    "GridSpec",
    "InitialData",
    "run_flow",
]
