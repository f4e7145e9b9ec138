"""Quantum Arnold transformation toolkit.

Maps Schroedinger equations for ẍ + ḟẋ + ω²x = Λ onto the free particle and
back, builds exact propagators, invariant operators and their spectra.
"""
from .classical import ClassicalBasis, LsodeSpec, preset, solve_basis
from .errors import QatError
from .propagators import EvolutionOperator, Mode, evolve_crank_nicolson, evolve_qat_exact
from .qat import QatContext, map_time, qat_forward, qat_inverse, schrodinger_residual
from .wavegrid import Frame, Grid, WaveFunction, gaussian

__version__ = "0.1.0"

__all__ = [
    "ClassicalBasis", "EvolutionOperator", "Frame", "Grid", "LsodeSpec", "Mode", "QatContext", "QatError",
    "WaveFunction", "evolve_crank_nicolson", "evolve_qat_exact", "gaussian", "map_time", "preset",
    "qat_forward", "qat_inverse", "schrodinger_residual", "solve_basis",
]
