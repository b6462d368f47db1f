"""Numerical laboratory for Neumann Ginzburg-Landau critical points."""

from __future__ import annotations

from .field import ComplexField, energy, energy_density
from .grid import Chart, ChartError, build_chart
from .hodge import DiscreteOneForm, HodgeSplit, hodge_decompose
from .solver import SolverConfig, SolveReport, gl_residual, gradient_flow, newton_polish

__all__ = [
    "Chart",
    "ChartError",
    "ComplexField",
    "DiscreteOneForm",
    "HodgeSplit",
    "SolveReport",
    "SolverConfig",
    "build_chart",
    "energy",
    "energy_density",
    "gl_residual",
    "gradient_flow",
    "hodge_decompose",
    "newton_polish",
]

__version__ = "0.1.0"
