"""Simulation and analysis of single-spin OSCAR magnetic resonance force microscopy."""

__version__ = "0.1.0"

from .params import ExperimentalParams, SimParams, UnitSystem, to_dimensionless, to_lab
from .hilbert import DensityState, SpinorState, TruncationError
from .record import TrajectoryRecord

__all__ = [
    "__version__",
    "ExperimentalParams",
    "SimParams",
    "UnitSystem",
    "to_dimensionless",
    "to_lab",
    "SpinorState",
    "DensityState",
    "TruncationError",
    "TrajectoryRecord",
]
