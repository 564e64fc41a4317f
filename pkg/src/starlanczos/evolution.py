"""Time-ordered exponentials from T_n: path-sum resolvent and row integration.

w^H U(t', a) v = int_a^t' R(tau, a) dtau with R = R_*(T_n)_{11}, the (1,1)
entry of the resolvent of T_n. It is evaluated bottom-up as the continued
fraction

    G_n = (1_* - alpha_{n-1})^-1,
    G_k = (1_* - alpha_{k-1} - G_{k+1} * beta_k)^-1,

each level one triangular solve in the discrete algebra, where the delta
parts of alpha and beta are already part of the matrices.
"""

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .core import StarObject
from .discrete import identity, to_discrete

RULE = "trapezoid"
EXTRAPOLATION_COLUMNS = 4


def pathsum_resolvent(T):
    """R_*(T_n)_{11} as a discrete StarObject.

    Raises
    ------
    SingularError
        When one level of the continued fraction cannot be solved.
    """
    if T.n == 0:
        raise ValueError("empty tridiagonal matrix")
    grid = T.grid
    I = identity(grid, RULE)
    G = None
    for k in range(T.n - 1, -1, -1):
        X = I - to_discrete(T.alphas[k], RULE)
        if G is not None:
            X = X - G @ to_discrete(T.betas[k], RULE)
        G = X.inverse()
    return StarObject(grid, discrete=G)


@dataclass
class EvolutionResult:
    """u_samples[i] = w^H U(t_i, a) v; ``reference`` optionally from ``rk4_reference``."""

    nodes: np.ndarray
    u_samples: np.ndarray
    reference: np.ndarray = None
    extrapolated: bool = False

    @property
    def errors(self):
        if self.reference is None:
            return None
        return np.abs(self.u_samples - self.reference)

    def max_error(self):
        e = self.errors
        return None if e is None else float(np.max(e))

    def to_csv(self):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["t", "u", "u_ref", "abs_err"])
        err = self.errors
        for i, x in enumerate(self.nodes):
            ref = "" if self.reference is None else repr(float(self.reference[i]))
            e = "" if err is None else repr(float(err[i]))
            wr.writerow([repr(float(x)), repr(float(self.u_samples[i])), ref, e])
        return buf.getvalue()


def ordered_exponential(T, a=None):
    """w^H U(t', a) v at every node from the path-sum resolvent of T_n.

    ``a`` must be the left end of the grid. When the first columns of the
    resolvent are invalid (a beta with a vanishing pivot at the start of the
    interval), U(t', a) is extrapolated in the second time from the first
    valid columns.
    """
    grid = T.grid
    if a is not None and abs(a - grid.a) > 1e-12 * max(1.0, abs(grid.a)):
        raise ValueError("the ordered exponential starts at the left end of the grid")
    R = pathsum_resolvent(T).discrete
    return _integrate(R, grid)


def _integrate(R, grid):
    N = grid.n_points
    x = grid.nodes
    if R.valid_from == 0:
        u = R.integrate_column(0)
        u[0] = 1.0
        return EvolutionResult(x, u)
    cols = list(range(R.valid_from, min(N, R.valid_from + EXTRAPOLATION_COLUMNS)))
    U = {j: R.integrate_column(j) for j in cols}
    u = np.empty(N)
    u[0] = 1.0
    for i in range(1, N):
        js = [j for j in cols if j <= i]
        if not js:
            # rows inside the masked block: interpolate between t = a and the first valid row
            u[i] = np.nan
            continue
        ts = x[js]
        vals = np.array([U[j][i] for j in js])
        p = np.polyfit(ts, vals, len(js) - 1)
        u[i] = np.polyval(p, x[0])
    masked = np.isnan(u)
    if masked.any():
        u[masked] = np.interp(x[masked], x[~masked], u[~masked])
    return EvolutionResult(x, u, extrapolated=True)


def rk4_reference(A_exprs, w, v, grid, substeps=10):
    """w^H U(t_i, a) v from U' = A(t')U, U(a) = Id, by classical RK4 at step h/substeps.

    Only the column U v is integrated, which suffices for the bilinear form.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    exprs = [[ex.as_left_variable(ex.as_expr(e)) for e in row] for row in A_exprs]
    dim = len(exprs)
    w = np.asarray(w, dtype=float)
    y = np.asarray(v, dtype=float).copy()
    if any(len(row) != dim for row in exprs) or w.shape != (dim,) or y.shape != (dim,):
        raise ValueError(f"A must be {dim} x {dim} and w, v of length {dim}")

    def A_at(s):
        return np.array(
            [[float(np.broadcast_to(ex.evaluate(e, s, 0.0), ())) for e in row] for row in exprs]
        )

    x = grid.nodes
    dt = grid.h / substeps
    out = np.empty(grid.n_points)
    out[0] = w @ y
    s = x[0]
    for i in range(1, grid.n_points):
        for _ in range(substeps):
            A0, Am, A1 = A_at(s), A_at(s + dt / 2), A_at(s + dt)
            k1 = A0 @ y
            k2 = Am @ (y + dt / 2 * k1)
            k3 = Am @ (y + dt / 2 * k2)
            k4 = A1 @ (y + dt * k3)
            y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            s += dt
        s = x[i]
        out[i] = w @ y
    return out
