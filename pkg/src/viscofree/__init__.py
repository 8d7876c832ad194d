"""Lagrangian simulator and verification harness for a free-boundary
compressible neo-Hookean viscoelastic fluid on the periodic strip T x (0, 1)."""

from .constitutive import MaterialParams
from .dynamics import FlowState, RunAborted, RunConfig, Trajectory, simulate, well_prepared_initial
from .grid_ops import Grid

__version__ = "0.1.0"

__all__ = [
    "FlowState",
    "Grid",
    "MaterialParams",
    "RunAborted",
    "RunConfig",
    "Trajectory",
    "simulate",
    "well_prepared_initial",
    "__version__",
]
