"""Time-ordered exponentials through the product algebra of two-time distributions.

The package builds the algebra (kernels times Theta plus Dirac delta series),
closed-form inverses for polynomial and separable kernels, the
non-Hermitian Lanczos iteration over that algebra, the path-sum evaluation of
the resulting tridiagonal resolvent, and Green operators.
"""

from .core import DeltaSeries, Grid, Kernel, StarObject, apply_to_test, star_product
from .discrete import DiscreteStar, to_discrete
from .errors import (
    AnnihilatorError,
    DeltaOrderOverflow,
    ExcludedNodesError,
    ExprDomainError,
    ExprSyntaxError,
    GridMismatchError,
    NumericalError,
    ProblemError,
    SingularError,
    StarError,
    UnknownIdentifierError,
)
from .evolution import EvolutionResult, ordered_exponential, pathsum_resolvent, rk4_reference
from .expr import differentiate, evaluate, parse, to_text
from .green import GreenOperator, apply_green_operator, green_operator_from_kernel
from .inverse import (
    Annihilator,
    build_annihilator,
    invert_kernel,
    invert_left_variable,
    invert_numeric,
    invert_polynomial,
    invert_right_variable,
    invert_separable,
    resolvent,
)
from .lanczos import StarMatrix, TridiagonalStar, run_lanczos, star_moment, verify_moments

__all__ = [
    "Annihilator",
    "AnnihilatorError",
    "DeltaOrderOverflow",
    "DeltaSeries",
    "DiscreteStar",
    "EvolutionResult",
    "ExcludedNodesError",
    "ExprDomainError",
    "ExprSyntaxError",
    "GreenOperator",
    "Grid",
    "GridMismatchError",
    "Kernel",
    "NumericalError",
    "ProblemError",
    "SingularError",
    "StarError",
    "StarMatrix",
    "StarObject",
    "TridiagonalStar",
    "UnknownIdentifierError",
    "apply_green_operator",
    "apply_to_test",
    "build_annihilator",
    "differentiate",
    "evaluate",
    "green_operator_from_kernel",
    "invert_kernel",
    "invert_left_variable",
    "invert_numeric",
    "invert_polynomial",
    "invert_right_variable",
    "invert_separable",
    "ordered_exponential",
    "parse",
    "pathsum_resolvent",
    "resolvent",
    "rk4_reference",
    "run_lanczos",
    "star_moment",
    "star_product",
    "to_discrete",
    "to_text",
    "verify_moments",
]
