"""Cut-cell finite-volume Grad-Shafranov equilibrium solver."""

__version__ = "0.1.0"

from .coils import ShapeTarget, solve_currents
from .driver import (EquilibriumResult, NonConvergence, SolverConfig, aitken_step,
                     solve_fixed_boundary, solve_free_boundary)
from .elliptic import EllipticOperator, FluxField
from .geometry import BoundaryPolygon, CutCellMesh, GeometryError, build_cut_cell_mesh
from .green import CoilSet, greens_function, iter_like_coils
from .grid import CartesianGrid
from .physics import InvalidSolution, Normalization, ProfileTable

__all__ = [
    "BoundaryPolygon", "CartesianGrid", "CoilSet", "CutCellMesh", "EllipticOperator",
    "EquilibriumResult", "FluxField", "GeometryError", "InvalidSolution", "NonConvergence",
    "Normalization", "ProfileTable", "ShapeTarget", "SolverConfig", "aitken_step",
    "build_cut_cell_mesh", "greens_function", "iter_like_coils", "solve_currents",
    "solve_fixed_boundary", "solve_free_boundary",
]
