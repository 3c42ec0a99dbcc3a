"""Numerical toolkit for weighted maximal sections of lattice-valued maps."""

from __future__ import annotations

from .functional import DegenerateSectionError, DomainGrid, FluxClass, Section
from .lattice import BilinearSpace, space_from_spec
from .solver import SolveOptions, SolveReport, solve_dirichlet

__all__ = [
    "BilinearSpace",
    "DegenerateSectionError",
    "DomainGrid",
    "FluxClass",
    "Section",
    "SolveOptions",
    "SolveReport",
    "solve_dirichlet",
    "space_from_spec",
]

__version__ = "0.1.0"
