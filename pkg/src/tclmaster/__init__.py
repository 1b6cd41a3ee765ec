"""TCL perturbation series, exact TCL generators and weak-coupling limits for GKSL models."""

from . import asymptotics, dynamics, kernels, superops, tcl
from .asymptotics import bvh_prepare, bvh_solution, check_relaxation, renormalization_map
from .dynamics import extract_exact_tcl, propagate_exact, propagate_tcl
from .errors import (
    ConsistencyError,
    ConvergenceError,
    DimensionError,
    NoLimit,
    NonDiagonalizable,
    SingularWindow,
    StiffnessError,
    TclError,
    ValidationError,
)
from .kernels import h_k
from .tcl import ModelSpec, TclSeries

__version__ = "0.1.0"

__all__ = [
    "asymptotics", "dynamics", "kernels", "superops", "tcl",
    "bvh_prepare", "bvh_solution", "check_relaxation", "renormalization_map",
    "extract_exact_tcl", "propagate_exact", "propagate_tcl",
    "ConsistencyError", "ConvergenceError", "DimensionError", "NoLimit", "NonDiagonalizable",
    "SingularWindow", "StiffnessError", "TclError", "ValidationError",
    "h_k", "ModelSpec", "TclSeries",
]
