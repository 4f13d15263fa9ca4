"""Pseudo-spectral magnetic relaxation toolkit on the flat torus."""

__version__ = "0.1.0"

from .spectral import Grid, SpectralScalar, SpectralVector  # noqa: F401
from .solver import InitialData, SimConfig, SolverState, run_simulation  # noqa: F401
