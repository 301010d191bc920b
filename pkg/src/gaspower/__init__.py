"""Transient simulation of coupled gas and electricity networks."""

from .gas import CouplingKind, GasConstants
from .network import Network, build_layout, build_network
from .solver import SimulationResult, SolverConfig, SolverError, run_simulation

__version__ = "0.1.0"

__all__ = [
    "CouplingKind",
    "GasConstants",
    "Network",
    "SimulationResult",
    "SolverConfig",
    "SolverError",
    "build_layout",
    "build_network",
    "run_simulation",
]
