"""Desk-scale laboratory for boundary and internal control of a stochastic wave equation.

The Brownian motion is replaced by an exhaustive binary tree, space by a
finite-difference grid on an interval, and every solver, duality identity
and controllability certificate is checked exactly on that product.
"""

from .errors import CFLViolation, NumericalFailure, PreconditionError
from .spatial import BoundarySpec, CoefficientSet, Grid
from .tree import AdaptedField, BinaryTree

__all__ = [
    "AdaptedField", "BinaryTree", "BoundarySpec", "CFLViolation", "CoefficientSet", "Grid",
    "NumericalFailure", "PreconditionError",
]

__version__ = "0.1.0"
