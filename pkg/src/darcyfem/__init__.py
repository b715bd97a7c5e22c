"""Adaptive mixed finite elements for nonlinear Darcy-type porous media flow.

Piecewise-constant velocity / continuous piecewise-linear zero-mean pressure
on conforming triangulations, solved by a relaxed fixed-point iteration with
residual error indicators, indicator-balanced stopping and newest-vertex
bisection refinement.
"""

__version__ = "0.1.0"

from .mesh import (
    Mesh,
    generate_lshape,
    generate_structured,
    load_mesh,
    refine,
    save_mesh,
)

__all__ = [
    "Mesh",
    "__version__",
    "generate_lshape",
    "generate_structured",
    "load_mesh",
    "refine",
    "save_mesh",
]
