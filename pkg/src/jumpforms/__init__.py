"""Square functions, pseudo-gradients and jump-process checks on finite spaces."""
from .exceptions import InvalidParameter, NumericalFailure, PreconditionViolation
from .space import Space, build_space, dirichlet_form, lp_norm
from .semigroup import SpectralDecomposition, decompose, heat, poisson

__version__ = "0.1.0"

__all__ = [
    "InvalidParameter",
    "NumericalFailure",
    "PreconditionViolation",
    "Space",
    "SpectralDecomposition",
    "build_space",
    "decompose",
    "dirichlet_form",
    "heat",
    "lp_norm",
    "poisson",
]
