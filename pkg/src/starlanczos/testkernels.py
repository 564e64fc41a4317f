"""Smooth test kernels and action-based residuals.

Distributions are compared through their action on smooth kernels: p acts as
the identity when p * phi = phi for every phi in the suite.
"""

import numpy as np

from . import expr as ex
from .core import Kernel, StarObject, apply_to_test, star_product

POLYNOMIAL_KERNELS = (
    "1",
    "tp - t",
    "tp^2 + t",
    "tp * t - 2 * t^2",
    "(tp - t)^3 + tp",
)

TEST_KERNELS = POLYNOMIAL_KERNELS + (
    "sin(tp - t)",
    "exp(tp) * cos(t)",
    "cos(2 * tp) - t^2",
    "exp(-(tp - t)) * (1 + t)",
    "sin(tp) * sin(t) + 1",
)


def make_test_kernels(grid, names=TEST_KERNELS):
    return [Kernel.from_expr(grid, ex.parse(s)) for s in names]


def interior_mask(grid, excluded=(), margin=3):
    """Lower-triangle mask without node pairs within ``margin`` nodes of an excluded node."""
    N = grid.n_points
    mask = np.tril(np.ones((N, N), dtype=bool))
    for s in excluded:
        lo, hi = max(0, s - margin), min(N, s + margin + 1)
        mask[lo:hi, :] = False
        mask[:, lo:hi] = False
    return mask


def action_residual(p, phi, excluded=(), margin=3):
    """max |p * phi - phi| over the lower triangle (kernel parts)."""
    out = apply_to_test(p, phi).samples
    mask = interior_mask(p.grid, excluded, margin) & np.isfinite(out)
    diff = np.abs(out - phi.samples)[mask]
    return float(diff.max()) if diff.size else 0.0


def inverse_residuals(f, f_inv, phis, excluded=()):
    """Left and right residuals of f_inv * (f * phi) - phi and f * (f_inv * phi) - phi.

    Products are nested (f_inv applied to the kernel f * phi) so the delta
    terms of f_inv act on a kernel that vanishes on the diagonal.
    """
    grid = f.grid
    left = right = 0.0
    for phi in phis:
        fp = star_product(f, StarObject(grid, kernel=phi))
        left = max(left, _nested(f_inv, fp, phi, excluded))
        ip = star_product(f_inv, StarObject(grid, kernel=phi))
        right = max(right, _nested(f, ip, phi, excluded))
    return left, right


def _nested(outer, inner, phi, excluded):
    r = star_product(outer, inner)
    if r.discrete is not None:
        out = r.discrete.readout().samples
    else:
        out = r.kernel.samples if r.kernel is not None else np.zeros_like(phi.samples)
    mask = interior_mask(phi.grid, excluded) & np.isfinite(out)
    diff = np.abs(out - phi.samples)[mask]
    return float(diff.max()) if diff.size else 0.0
