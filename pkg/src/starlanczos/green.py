"""Green's function inverse problem: from G build D_G with D_G(G) = delta.

D_G is the inverse of G in the product algebra,

    D_G f = int r_{-1}(t', s) f(s, t) ds + sum_m r_m(t') d^m f / dt'^m,

so that D_G(G * phi) = phi for smooth phi.
"""

from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .core import DeltaSeries, Kernel, StarObject, apply_to_test
from .inverse import ANNIHILATION_TOL, invert_kernel
from .serialize import coeff_to_json, grid_to_dict, kernel_to_csv


@dataclass
class GreenOperator:
    """Integral part r_minus1 (may be None) and derivative coefficients r_0..r_k."""

    grid: object
    r_minus1: Kernel
    r: DeltaSeries

    @property
    def order(self):
        return self.r.order if self.r is not None else -1

    def as_star(self):
        return StarObject(self.grid, kernel=self.r_minus1, deltas=self.r)

    def to_json(self):
        """Coefficients as expression text or samples; r_minus1 as triangular CSV text."""
        return {
            "grid": grid_to_dict(self.grid),
            "order": self.order,
            "r": [coeff_to_json(c) for c in (self.r or [])],
            "r_minus1_csv": kernel_to_csv(self.r_minus1) if self.r_minus1 is not None else None,
        }


def green_operator_from_kernel(G_tilde, basis, grid, allow_excluded=False, tol=ANNIHILATION_TOL):
    """D_G for the separable kernel G(t',t) = G~(t',t) Theta with the given t'-basis."""
    inv = invert_kernel(G_tilde, basis, grid, allow_excluded=allow_excluded, tol=tol)
    return green_operator_from_star(inv)


def green_operator_from_star(inv):
    if inv.discrete is not None:
        raise ValueError("a Green operator needs a closed-form inverse")
    kernel = inv.kernel
    if kernel is not None and not np.any(np.nan_to_num(kernel.samples, nan=1.0)):
        kernel = None
    return GreenOperator(inv.grid, kernel, inv.deltas)


def apply_green_operator(D, f):
    """D_G f on the grid; ``f`` is a Kernel or an expression (t'-only means the left time)."""
    if isinstance(f, (str, ex.TimeExpr)):
        e = ex.as_expr(f)
        if len(e.free_vars) < 2:
            e = ex.as_left_variable(e)
        f = Kernel.from_expr(D.grid, e)
    return apply_to_test(D.as_star(), f)
