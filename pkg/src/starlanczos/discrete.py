"""Matrix representation of the product algebra on a grid.

A kernel f becomes the lower-triangular matrix M = h * tril(F) * weights and
delta becomes the identity, so that the product of two objects is the plain
matrix product. Two weightings are available:

``trapezoid``
    diagonal weight 1/2. Off-diagonal entries of a product equal h times the
    trapezoid value of the integral, so second-kind Volterra solves and the
    Lanczos/path-sum pipeline are O(h^2) accurate. Inverses of first-kind
    kernels are exact in the algebra but oscillate node to node when read
    back as kernels.
``rectangle``
    diagonal weight 1 (left-endpoint rule). Only O(h), but the inverse of a
    discretized kernel reads back as a smooth backward-difference operator;
    the identity reads back as the kernel 1/h on the diagonal.

The matrix algebra is exactly associative. Columns can be marked invalid:
a lower-triangular inverse column j depends only on the block [j:, j:], so a
vanishing pivot at node k spoils columns 0..k and nothing else.
"""

import logging

import numpy as np
from scipy.linalg import solve_triangular

from .errors import SingularError

logger = logging.getLogger(__name__)

RULES = ("trapezoid", "rectangle")
CONDITION_CAP = 1e12
PIVOT_TOL = 1e-14


def _diag_weight(rule):
    if rule == "trapezoid":
        return 0.5
    if rule == "rectangle":
        return 1.0
    raise ValueError(f"unknown rule {rule!r}; expected one of {RULES}")


class DiscreteStar:
    """Lower-triangular matrix standing for an object of the algebra.

    ``valid_from`` is the first column that carries meaningful values.
    """

    __slots__ = ("grid", "matrix", "rule", "valid_from")

    def __init__(self, grid, matrix, rule="trapezoid", valid_from=0):
        _diag_weight(rule)
        self.grid = grid
        self.matrix = np.asarray(matrix, dtype=float)
        self.rule = rule
        self.valid_from = int(valid_from)

    def _compatible(self, other):
        if not isinstance(other, DiscreteStar):
            raise TypeError("expected a DiscreteStar")
        if other.grid != self.grid or other.rule != self.rule:
            raise ValueError("discrete objects differ in grid or rule")

    def __matmul__(self, other):
        self._compatible(other)
        return DiscreteStar(
            self.grid, self.matrix @ other.matrix, self.rule, max(self.valid_from, other.valid_from)
        )

    def __add__(self, other):
        self._compatible(other)
        return DiscreteStar(
            self.grid, self.matrix + other.matrix, self.rule, max(self.valid_from, other.valid_from)
        )

    def __sub__(self, other):
        self._compatible(other)
        return DiscreteStar(
            self.grid, self.matrix - other.matrix, self.rule, max(self.valid_from, other.valid_from)
        )

    def __neg__(self):
        return DiscreteStar(self.grid, -self.matrix, self.rule, self.valid_from)

    def __mul__(self, c):
        return DiscreteStar(self.grid, float(c) * self.matrix, self.rule, self.valid_from)

    __rmul__ = __mul__

    def identity(self):
        return identity(self.grid, self.rule)

    def max_abs(self):
        block = self.matrix[:, self.valid_from:]
        return float(np.abs(block).max()) if block.size else 0.0

    def readout(self):
        """Kernel samples of the object, assuming no delta part.

        Invalid columns are NaN.
        """
        from .core import Kernel

        s = self.matrix / self.grid.h
        s[np.diag_indices_from(s)] /= _diag_weight(self.rule)
        s[:, : self.valid_from] = np.nan
        return Kernel(self.grid, s)

    def kernel_part(self):
        """Kernel samples of an object of the form c * delta + kernel with c = 1."""
        return DiscreteStar(
            self.grid, self.matrix - np.eye(len(self.matrix)), self.rule, self.valid_from
        ).readout()

    def value_at(self, i, j):
        """Kernel value at node pair (i, j), i > j; NaN if column j is invalid."""
        if j < self.valid_from:
            return float("nan")
        w = _diag_weight(self.rule) if i == j else 1.0
        return float(self.matrix[i, j] / (self.grid.h * w))

    def integrate_column(self, j):
        """int_{t_j}^{t'} R(s, t_j) ds for R = delta + kernel, trapezoid rule."""
        N = self.grid.n_points
        out = np.full(N, np.nan)
        if j < self.valid_from:
            return out
        col = self.kernel_part().samples[j:, j]
        total = np.ones(N - j)
        total[1:] += np.cumsum(0.5 * self.grid.h * (col[1:] + col[:-1]))
        out[j:] = total
        return out

    def inverse(self, cond_cap=CONDITION_CAP, mask_tol=PIVOT_TOL):
        """Inverse in the algebra by a triangular solve.

        Vanishing pivots (relative size below ``mask_tol``) invalidate the
        columns up to and including them instead of failing. The 1-norm
        condition number of the remaining block is logged and checked
        against ``cond_cap``.
        """
        M = self.matrix
        N = len(M)
        A, valid = self._masked_system(mask_tol)
        X = solve_triangular(A, np.eye(N), lower=True)
        X[:, :valid] = 0.0
        block = slice(valid, N)
        cond = np.abs(M[block, block]).sum(axis=0).max() * np.abs(X[block, block]).sum(axis=0).max()
        logger.debug("triangular inverse: condition %.3e, valid from column %d", cond, valid)
        if not np.isfinite(cond) or cond > cond_cap:
            raise SingularError(f"condition estimate {cond:.3e} exceeds the cap {cond_cap:.1e}")
        return DiscreteStar(self.grid, X, self.rule, valid)

    def _masked_system(self, mask_tol):
        M = self.matrix
        N = len(M)
        d = np.diag(M).copy()
        scale = np.abs(d).max()
        if scale == 0.0 or not np.all(np.isfinite(M[self.valid_from:, self.valid_from:])):
            raise SingularError("discrete matrix is singular")
        bad = np.abs(d) <= mask_tol * scale
        bad[: self.valid_from] = True
        last_bad = int(np.nonzero(bad)[0].max()) if bad.any() else -1
        if last_bad >= N - 1:
            raise SingularError("every column of the discrete matrix is excluded")
        A = np.where(np.isfinite(M), M, 0.0)
        A[np.diag_indices(N)] = np.where(bad, 1.0, d)
        if last_bad >= 0:
            A[:, : last_bad + 1] = np.eye(N)[:, : last_bad + 1]
            A[: last_bad + 1, :] = np.eye(N)[: last_bad + 1, :]
        return A, last_bad + 1

    def solve_right(self, other, cond_cap=np.inf, mask_tol=PIVOT_TOL):
        """other * self^(-1) by a triangular solve, without forming the inverse.

        Backward stable, hence markedly more accurate than multiplying by
        ``inverse()`` when self is ill-conditioned. Masking as in ``inverse``.
        """
        self._compatible(other)
        A, valid = self._masked_system(mask_tol)
        if np.isfinite(cond_cap):
            cond = self.condition()
            if cond > cond_cap:
                raise SingularError(f"condition estimate {cond:.3e} exceeds the cap {cond_cap:.1e}")
        B = np.where(np.isfinite(other.matrix), other.matrix, 0.0)
        X = solve_triangular(A.T, B.T, lower=False).T
        X[:, :valid] = 0.0
        return DiscreteStar(self.grid, X, self.rule, max(valid, other.valid_from))

    def condition(self):
        X = self.inverse(cond_cap=np.inf)
        block = slice(X.valid_from, len(self.matrix))
        M = self.matrix[block, block]
        return float(np.abs(M).sum(axis=0).max() * np.abs(X.matrix[block, block]).sum(axis=0).max())

    def resolvent(self):
        """(1_* - self)^(-1), a second-kind solve."""
        return (self.identity() - self).inverse()

    def __repr__(self):
        return f"DiscreteStar(n={self.grid.n_points}, rule={self.rule}, valid_from={self.valid_from})"


def identity(grid, rule="trapezoid"):
    return DiscreteStar(grid, np.eye(grid.n_points), rule)


def kernel_matrix(samples, h, rule="trapezoid"):
    M = h * np.tril(samples)
    M[np.diag_indices_from(M)] *= _diag_weight(rule)
    return M


def to_discrete(obj, rule="trapezoid"):
    """Matrix form of a StarObject (or a DiscreteStar, returned as is)."""
    if isinstance(obj, DiscreteStar):
        if obj.rule != rule:
            raise ValueError("discrete objects use different rules")
        return obj
    if obj.discrete is not None:
        return to_discrete(obj.discrete, rule)
    grid = obj.grid
    N = grid.n_points
    M = np.zeros((N, N))
    if obj.kernel is not None:
        M += kernel_matrix(obj.kernel.samples, grid.h, rule)
    if obj.deltas is not None:
        # delta^(m) is the m-th power of the inverse of discretized Theta
        theta_inv = solve_triangular(kernel_matrix(np.ones((N, N)), grid.h, rule), np.eye(N), lower=True)
        power = np.eye(N)
        for m, c in enumerate(obj.deltas):
            if m:
                power = theta_inv @ power
            if not c.is_zero():
                M += c.values[:, None] * power
    return DiscreteStar(grid, M, rule)
