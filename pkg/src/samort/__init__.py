"""Smooth age-space-time mortality surfaces for small areas.

The model is a Poisson P-spline with three additive components: a smooth
age-time schedule common to all areas, smooth age-space-time deviations
built on a box-product spatial basis, and ridge-penalized area levels.
Products with the Kronecker-structured model matrix are evaluated with
array arithmetic so the full design is never formed.
"""

__version__ = "0.1.0"

from .errors import (
    ConvergenceError,
    DataError,
    NumericalError,
    SamortError,
    SingularSystemError,
)

__all__ = [
    "__version__",
    "ConvergenceError",
    "DataError",
    "NumericalError",
    "SamortError",
    "SingularSystemError",
]
