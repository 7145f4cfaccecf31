"""Scalable Gaussian process regression with gradient observations.

Structured kernel interpolation with derivatives (``dski``), its
product-kernel variant for higher dimensions (``dskip``), iterative
solvers with pivoted-Cholesky preconditioning (``linalg``), and the
applications built on them: terrain reconstruction, active subspaces and
Bayesian optimization.
"""
from .gp import FitError, FitResult, GPModel, ObservationSet, SolverError, fit
from .kernels import KernelSpec

__version__ = "0.1.0"

__all__ = ["GPModel", "ObservationSet", "KernelSpec", "fit", "FitResult", "FitError",
           "SolverError", "__version__"]
