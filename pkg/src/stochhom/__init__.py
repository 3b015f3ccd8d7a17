"""Numerical witnesses for quantitative stochastic homogenization on Z^d.

Random conductance fields, the massive divergence-form operator and its Green
function, annealed moment estimates, sensitivity and spectral-gap checks,
fluctuation scaling, large-scale regularity, and an experiment runner.
"""

__version__ = "0.1.0"

from .ensemble import CoefficientField, EnsembleKind, EnsembleSpec, sample  # noqa: E402
from .lattice import Boundary, Lattice, build_lattice  # noqa: E402
from .solver import LinearOperator, NonConvergence, ProblemSpec, solve  # noqa: E402

__all__ = ["Boundary", "CoefficientField", "EnsembleKind", "EnsembleSpec", "Lattice",
           "LinearOperator", "NonConvergence", "ProblemSpec", "build_lattice", "sample", "solve",
           "__version__"]
