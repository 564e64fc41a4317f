"""Inverses in the product algebra.

Closed forms cover kernels of one variable, kernels polynomial in t' and
separable kernels sum_i y_i(t') b_i(t). The last two reduce to a linear ODE
in the right time t, integrated backward from t = t' for every node t' with
classical RK4; its solution x(t', t) is combined with delta derivatives to
give the inverse. A numeric fallback inverts the discretized kernel matrix,
and ``resolvent`` solves the second-kind equation R = delta + f * R.

Sign convention. The auxiliary function x is normalized as in the classical
construction, x^(0,k-1)(t',t') = (-1)^k / p(t',t') for polynomial kernels and
1 / h_k(t') for separable ones. With f * delta' = -f^(0,1) Theta + f(t',t')
delta (a direct consequence of the definition of the product) the inverse is
then -(x Theta) * delta^(k+1), respectively -(x Theta) * L.
"""

from dataclasses import dataclass, field
from itertools import permutations
from math import comb

import numpy as np

from . import expr as ex
from .core import Coeff, DeltaSeries, Kernel, StarObject, evaluate_lower
from .discrete import CONDITION_CAP, DiscreteStar, to_discrete
from .errors import AnnihilatorError, ExcludedNodesError, NumericalError, StarError

ANNIHILATION_TOL = 1e-8
MAX_POLY_DEGREE = 16


def _zero_on_grid(values, scale=None):
    values = np.asarray(values, dtype=float)
    if scale is None:
        scale = 1.0
    return bool(np.all(np.abs(values) <= 1e-13 * scale))


def _check_nonzero(e, grid, what):
    v = ex.evaluate(e, grid.nodes, grid.nodes, strict=False)
    v = np.broadcast_to(v, (grid.n_points,))
    if np.all(v == 0.0):
        raise NumericalError(f"{what} vanishes identically on the grid")
    bad = np.nonzero(~np.isfinite(v) | (v == 0.0))[0]
    if len(bad):
        raise ExcludedNodesError(f"{what} vanishes at grid nodes", bad)


# --------------------------------------------------------------- one variable

def invert_left_variable(a_tilde, grid):
    """Inverse of a(t')Theta: (1/a)'(t') delta + (1/a)(t') delta'."""
    a = ex.as_expr(a_tilde)
    if "t" in a.free_vars:
        raise ValueError("expected a function of the left time tp")
    _check_nonzero(a, grid, "a(t')")
    inv = ex.div(1, a)
    return StarObject(grid, deltas=DeltaSeries(grid, [ex.differentiate(inv, "tp"), inv]))


def invert_right_variable(b_tilde, grid):
    """Inverse of b(t)Theta: (1/b)(t') delta'.

    Indeed (1/b(t')) delta' * b(t)Theta = (1/b(t')) b(t) delta = delta.
    In right-normalized form this is (1/b(t)) delta' - (1/b)'(t) delta.
    """
    b = ex.as_expr(b_tilde)
    if "tp" in b.free_vars:
        raise ValueError("expected a function of the right time t")
    b = ex.substitute(b, {"t": ex.TP})
    _check_nonzero(b, grid, "b(t)")
    return StarObject(grid, deltas=DeltaSeries(grid, [0.0, ex.div(1, b)]))


# ------------------------------------------------------------ backward ODE

@dataclass
class ReducedODE:
    """sum_m coeffs[m](t) x^(m)(t) = 0 on t <= t', with x^(m)(t') = 0 for
    m < k - 1 and x^(k-1)(t') = boundary(t').

    Coefficients and boundary are one-variable expressions written in ``tp``.
    """

    coeffs: list
    boundary: object

    @property
    def order(self):
        return len(self.coeffs) - 1

    def diagonal_derivatives(self):
        """Expressions for x^(q)(t', t'), q = 0..k."""
        k = self.order
        out = [ex.Const(0.0)] * (k - 1) + [self.boundary]
        out.append(ex.neg(ex.div(ex.mul(self.coeffs[k - 1], self.boundary), self.coeffs[k])))
        return out


@dataclass
class ODESolution:
    """Samples of x^(d)(t', t) for d = 0..k+1 on the lower triangle."""

    derivs: list
    excluded: list = field(default_factory=list)

    @property
    def x(self):
        return self.derivs[0]


def solve_backward(ode, grid, allow_excluded=False):
    """Integrate the reduced ODE from t = t' down to a for every node t' (RK4, step h).

    Nodes where the leading coefficient vanishes are excluded: every entry
    (t', t) with t <= s <= t' for such a node s is set to NaN, or an
    ExcludedNodesError is raised unless ``allow_excluded``.
    """
    k = ode.order
    if k < 1:
        raise ValueError("the reduced ODE must have order >= 1")
    N = grid.n_points
    h = grid.h
    x = grid.nodes
    mid = x[:-1] + h / 2

    def ev(e, pts):
        v = ex.evaluate(e, pts, 0.0, strict=False)
        return np.broadcast_to(v, pts.shape).astype(float)

    a_nodes = np.array([ev(c, x) for c in ode.coeffs])
    a_mid = np.array([ev(c, mid) for c in ode.coeffs])
    lead_nodes = a_nodes[k]
    scale = np.nanmax(np.abs(lead_nodes)) if np.any(np.isfinite(lead_nodes)) else 0.0
    if scale == 0.0:
        raise NumericalError("leading ODE coefficient vanishes identically")
    bad_nodes = ~np.isfinite(a_nodes).all(axis=0) | (np.abs(lead_nodes) <= 1e-14 * scale)
    bad_mid = ~np.isfinite(a_mid).all(axis=0) | (a_mid[k] == 0.0)
    excluded = sorted(set(np.nonzero(bad_nodes)[0].tolist()))
    if excluded and not allow_excluded:
        raise ExcludedNodesError("leading ODE coefficient vanishes", excluded)
    with np.errstate(all="ignore"):
        ratio_nodes = -a_nodes[:k] / np.where(bad_nodes, np.nan, lead_nodes)
        ratio_mid = -a_mid[:k] / np.where(bad_mid, np.nan, a_mid[k])
    boundary = ev(ode.boundary, x)

    derivs = [np.zeros((N, N)) for _ in range(k)]
    S = np.zeros((k, N))
    S[k - 1] = boundary
    for d in range(k):
        derivs[d][np.arange(N), np.arange(N)] = S[d]

    def rhs(ratio, S):
        out = np.empty_like(S)
        out[:-1] = S[1:]
        out[-1] = np.sum(ratio * S, axis=0)
        return out

    for s in range(N - 1):
        active = np.arange(s + 1, N)
        node = active - s
        Sa = S[:, active]
        r0 = ratio_nodes[:, node]
        rm = ratio_mid[:, node - 1]
        r1 = ratio_nodes[:, node - 1]
        k1 = rhs(r0, Sa)
        k2 = rhs(rm, Sa - 0.5 * h * k1)
        k3 = rhs(rm, Sa - 0.5 * h * k2)
        k4 = rhs(r1, Sa - h * k3)
        with np.errstate(all="ignore"):
            Sa = Sa - h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        S[:, active] = Sa
        for d in range(k):
            derivs[d][active, node - 1] = Sa[d]

    # higher derivatives from the equation itself
    with np.errstate(all="ignore"):
        xk = sum(ratio_nodes[m][None, :] * derivs[m] for m in range(k))
        derivs.append(np.tril(xk))
        da = np.array([ev(ex.differentiate(c, "tp"), x) for c in ode.coeffs])
        num = sum(da[m][None, :] * derivs[m] + a_nodes[m][None, :] * derivs[m + 1] for m in range(k))
        num = num + da[k][None, :] * derivs[k]
        derivs.append(np.tril(-num / lead_nodes[None, :]))

    if excluded:
        rows = np.arange(N)[:, None]
        cols = np.arange(N)[None, :]
        mask = np.zeros((N, N), dtype=bool)
        for s_ in excluded:
            mask |= (cols <= s_) & (rows >= s_)
        for D in derivs:
            D[mask] = np.nan
    return ODESolution([np.tril(D) for D in derivs], excluded)


# ----------------------------------------------------------- polynomial in t'

def polynomial_degree(p, var="tp", cap=MAX_POLY_DEGREE):
    """Degree of ``p`` as a polynomial in ``var``; None when the derivatives do not terminate."""
    e = ex.as_expr(p)
    for k in range(cap + 2):
        if var not in e.free_vars:
            return k
        e = ex.differentiate(e, var)
    return None


def _diagonal_derivative(f, q):
    """s -> f^(q,0)(s, s) as an expression in tp."""
    return ex.diagonal(ex.differentiate(f, "tp", q))


def _assemble_kernel(grid, samples):
    return Kernel(grid, np.where(np.isfinite(samples), samples, np.nan))


def invert_polynomial(p_tilde, grid, allow_excluded=False, return_details=False):
    """Inverse of p(t',t)Theta for p polynomial of degree k >= 1 in t'.

    The auxiliary x solves sum_j (-1)^j p^(k-j,0)(t,t) x^(0,j) = 0 with
    x^(0,k-1)(t',t') = (-1)^k / p(t',t'); the inverse is -(x Theta) * delta^(k+1).
    When p vanishes on the diagonal the kernel is first multiplied on the left
    by delta', which differentiates it in t', and the result is multiplied by
    delta' on the right.
    """
    p = ex.as_expr(p_tilde)
    k = polynomial_degree(p)
    if k is None:
        raise NumericalError(f"'{p}' is not recognized as a polynomial in tp")
    stages = 0
    while True:
        diag = ex.diagonal(p)
        dv = np.broadcast_to(ex.evaluate(diag, grid.nodes, 0.0, strict=False), (grid.n_points,))
        if not _zero_on_grid(dv, max(1.0, _kernel_scale(p, grid))):
            break
        if k == 0:
            raise NumericalError("kernel vanishes identically")
        p = ex.differentiate(p, "tp")
        k -= 1
        stages += 1
    if k == 0:
        if "t" in p.free_vars:
            inv = invert_right_variable(p, grid)
        else:
            inv = invert_left_variable(p, grid)
        details = None
    else:
        inv, details = _invert_polynomial_regular(p, k, grid, allow_excluded)
    if stages:
        inv = inv @ StarObject(grid, deltas=DeltaSeries(grid, [0.0] * stages + [1.0]))
    if return_details:
        return inv, details
    return inv


def _kernel_scale(p, grid):
    v = ex.evaluate(p, grid.nodes[:, None], grid.nodes[None, :], strict=False)
    v = np.broadcast_to(v, (grid.n_points, grid.n_points))
    return float(np.nanmax(np.abs(np.tril(v))))


def _invert_polynomial_regular(p, k, grid, allow_excluded):
    P = [_diagonal_derivative(p, q) for q in range(k + 1)]
    coeffs = [ex.mul((-1) ** j, P[k - j]) for j in range(k + 1)]
    boundary = ex.div((-1) ** k, P[0])
    ode = ReducedODE(coeffs, boundary)
    sol = solve_backward(ode, grid, allow_excluded)
    diag = ode.diagonal_derivatives()
    kernel = _assemble_kernel(grid, (-1) ** k * sol.derivs[k + 1])
    # -(x Theta) * delta^(k+1): coefficient of delta^(k-q) is -(-1)^q x^(0,q)(t',t')
    coeffs_out = [ex.Const(0.0)] * (k + 1)
    for q in range(k + 1):
        coeffs_out[k - q] = ex.mul(-((-1) ** q), diag[q])
    inv = StarObject(grid, kernel=kernel, deltas=DeltaSeries(grid, coeffs_out))
    return inv, SeparableDetails(ode=ode, solution=sol, excluded=sol.excluded)


# ----------------------------------------------------------------- separable

@dataclass
class Annihilator:
    """L = sum_j g[j](t') delta^(j), with L * f = 0 for the kernel it was built for."""

    g: list

    def __post_init__(self):
        self.g = [ex.as_left_variable(ex.as_expr(c)) for c in self.g]
        if len(self.g) < 2:
            raise ValueError("an annihilator needs at least two coefficients")
        if ex.is_zero(self.g[-1]):
            raise ValueError("leading annihilator coefficient is zero")

    @property
    def order(self):
        return len(self.g) - 1

    def as_star(self, grid):
        return StarObject(grid, deltas=DeltaSeries(grid, self.g))

    def residual(self, f_tilde, grid, stride=None):
        """max |sum_j g_j(t') f^(j,0)(t',t)| on a subsample of node pairs, and the scale of its terms."""
        f = ex.as_expr(f_tilde)
        stride = stride or max(1, grid.n_points // 40)
        x = grid.nodes[::stride]
        tp, t = x[:, None], x[None, :]
        mask = np.tril(np.ones((len(x), len(x)), dtype=bool))
        total = np.zeros((len(x), len(x)))
        scale = 0.0
        for j, gj in enumerate(self.g):
            term = ex.evaluate(ex.mul(gj, ex.differentiate(f, "tp", j)), tp, t, strict=False)
            term = np.broadcast_to(term, total.shape)
            total = total + term
            finite = term[mask & np.isfinite(term)]
            if finite.size:
                scale = max(scale, float(np.abs(finite).max()))
        vals = np.abs(total[mask])
        vals = vals[np.isfinite(vals)]
        return (float(vals.max()) if vals.size else 0.0), scale


def _det(M):
    n = len(M)
    if n == 1:
        return M[0][0]
    total = ex.Const(0.0)
    for perm in permutations(range(n)):
        sign = 1
        for i in range(n):
            for j in range(i + 1, n):
                if perm[i] > perm[j]:
                    sign = -sign
        term = ex.Const(float(sign))
        for i in range(n):
            term = ex.mul(term, M[i][perm[i]])
        total = ex.add(total, term)
    return total


def build_annihilator(basis, grid, tol=ANNIHILATION_TOL):
    """Annihilator of span{y_1..y_{k+1}} with leading coefficient 1.

    Solves, by Cramer's rule on expressions, the Wronskian system
    sum_m g_m y_i^(m) = -y_i^(k+1), i = 1..k+1.
    """
    ys = [ex.as_left_variable(ex.as_expr(y)) for y in basis]
    n = len(ys)
    if n == 0:
        raise ValueError("empty basis")
    Y = [[ex.differentiate(y, "tp", m) for m in range(n)] for y in ys]
    rhs = [ex.neg(ex.differentiate(y, "tp", n)) for y in ys]
    W = _det(Y)
    wv = np.broadcast_to(ex.evaluate(W, grid.nodes, 0.0, strict=False), (grid.n_points,))
    row_scale = np.prod([
        max(float(np.nanmax(np.abs(np.broadcast_to(
            ex.evaluate(Y[i][m], grid.nodes, 0.0, strict=False), (grid.n_points,))))), 1e-300)
        for i in range(n) for m in range(n)
    ]) ** (1.0 / n)
    finite = np.isfinite(wv)
    if not finite.any() or np.all(np.abs(wv[finite]) <= 1e-12 * row_scale):
        raise AnnihilatorError("Wronskian is numerically singular at every node")
    g = []
    for m in range(n):
        Ym = [[rhs[i] if c == m else Y[i][c] for c in range(n)] for i in range(n)]
        g.append(ex.div(_det(Ym), W))
    g.append(ex.Const(1.0))
    L = Annihilator(g)
    for y in ys:
        res, scale = L.residual(y, grid)
        if res > tol * max(scale, 1.0):
            raise AnnihilatorError(f"annihilation residual {res:.3e} exceeds tolerance")
    return L


@dataclass
class SeparableDetails:
    ode: ReducedODE = None
    solution: ODESolution = None
    excluded: list = field(default_factory=list)


class DegenerateDiagonalError(StarError):
    """The kernel vanishes on the diagonal; multiply by delta' first."""


def reduced_ode(f_tilde, L):
    """Coefficients h_0..h_k of the ODE satisfied by x, and its boundary value."""
    f = ex.as_expr(f_tilde)
    k = L.order - 1
    F = [_diagonal_derivative(f, q) for q in range(k + 2)]
    h = []
    for m in range(k + 1):
        total = ex.Const(0.0)
        for j in range(m + 1, k + 2):
            for l in range(m, j):
                term = ex.mul(comb(l, m) * (-1) ** l, ex.mul(F[j - l - 1], ex.differentiate(L.g[j], "tp", l - m)))
                total = ex.add(total, term)
        h.append(total)
    return ReducedODE(h, ex.div(1, h[k]))


def invert_separable(f_tilde, L, grid, allow_excluded=False, return_details=False, tol=ANNIHILATION_TOL):
    """Inverse of f(t',t)Theta given an annihilator L with L * f = 0.

    For k = 0 (L of order 1) the inverse is L / (g_1(t') f(t',t')). Otherwise
    x solves sum_m h_m(t) x^(0,m) = 0 with x^(0,k-1)(t',t') = 1/h_k(t'); with
    y_j = x g_j(t) the inverse is

        -sum_j (-1)^j y_j^(0,j) Theta - sum_m sum_{j>m} (-1)^(j+m+1) y_j^(0,j-1-m)(t',t') delta^(m).
    """
    f = ex.as_expr(f_tilde)
    if not isinstance(L, Annihilator):
        L = Annihilator(list(L))
    res, scale = L.residual(f, grid)
    if res > tol * max(scale, 1.0):
        raise AnnihilatorError(f"L does not annihilate the kernel (residual {res:.3e})")
    fd = ex.diagonal(f)
    dv = np.broadcast_to(ex.evaluate(fd, grid.nodes, 0.0, strict=False), (grid.n_points,))
    if _zero_on_grid(dv, max(1.0, _kernel_scale(f, grid))):
        raise DegenerateDiagonalError("kernel vanishes on the diagonal; pre-multiply by delta'")
    k = L.order - 1
    if k == 0:
        _check_nonzero(ex.mul(L.g[1], fd), grid, "g_1(t') f(t',t')")
        den = ex.mul(L.g[1], fd)
        inv = StarObject(grid, deltas=DeltaSeries(grid, [ex.div(L.g[0], den), ex.div(L.g[1], den)]))
        details = SeparableDetails()
    else:
        ode = reduced_ode(f, L)
        sol = solve_backward(ode, grid, allow_excluded)
        inv = _assemble_separable(grid, L, ode, sol)
        details = SeparableDetails(ode=ode, solution=sol, excluded=sol.excluded)
    if return_details:
        return inv, details
    return inv


def _assemble_separable(grid, L, ode, sol):
    k = L.order - 1
    x = grid.nodes
    N = grid.n_points
    gvals = [[np.broadcast_to(ex.evaluate(ex.differentiate(gj, "tp", d), x, 0.0, strict=False), (N,))
              for d in range(k + 2)] for gj in L.g]
    kernel = np.zeros((N, N))
    for j in range(k + 2):
        # y_j^(0,j) = sum_i binom(j,i) x^(0,i) g_j^(j-i)(t)
        yj = sum(comb(j, i) * sol.derivs[i] * gvals[j][j - i][None, :] for i in range(j + 1))
        kernel -= (-1) ** j * yj
    diag = ode.diagonal_derivatives()
    coeffs = []
    for m in range(k + 1):
        total = ex.Const(0.0)
        for j in range(m + 1, k + 2):
            q = j - 1 - m
            yq = ex.Const(0.0)
            for i in range(q + 1):
                yq = ex.add(yq, ex.mul(comb(q, i), ex.mul(diag[i], ex.differentiate(L.g[j], "tp", q - i))))
            total = ex.add(total, ex.mul((-1) ** (j + m), yq))
        coeffs.append(total)
    return StarObject(grid, kernel=_assemble_kernel(grid, np.tril(kernel)), deltas=DeltaSeries(grid, coeffs))


def invert_kernel(f_tilde, basis, grid, allow_excluded=False, tol=ANNIHILATION_TOL):
    """Inverse of a separable kernel from its t'-basis, handling a vanishing diagonal.

    If f(t,t) = 0, then delta' * f = f^(1,0) Theta is inverted instead (its
    basis is the derivatives of the original one) and the result multiplied
    by delta' on the right.
    """
    f = ex.as_expr(f_tilde)
    basis = [ex.as_left_variable(ex.as_expr(y)) for y in basis]
    stages = 0
    while True:
        fd = ex.diagonal(f)
        dv = np.broadcast_to(ex.evaluate(fd, grid.nodes, 0.0, strict=False), (grid.n_points,))
        if not _zero_on_grid(dv, max(1.0, _kernel_scale(f, grid))):
            break
        if stages >= len(basis) + 1:
            raise NumericalError("kernel vanishes on the diagonal after repeated differentiation")
        f = ex.differentiate(f, "tp")
        basis = [b for b in (ex.differentiate(y, "tp") for y in basis) if not ex.is_zero(b)]
        stages += 1
    if "tp" not in f.free_vars:
        inv = invert_right_variable(f, grid)
    elif "t" not in f.free_vars:
        inv = invert_left_variable(f, grid)
    else:
        L = build_annihilator(basis, grid, tol)
        inv = invert_separable(f, L, grid, allow_excluded, tol=tol)
    if stages:
        inv = inv @ StarObject(grid, deltas=DeltaSeries(grid, [0.0] * stages + [1.0]))
    return inv


# ------------------------------------------------------------------- numeric

def invert_numeric(f, rule="rectangle", cond_cap=CONDITION_CAP):
    """Inverse of the discretized object by a triangular solve.

    ``f`` is a Kernel, StarObject or DiscreteStar. The result is an opaque
    discrete StarObject, usable in products and ``apply_to_test``.

    A kernel-only f whose diagonal vanishes gives a singular matrix. As in
    the closed-form path, delta' * f = f^(1,0) Theta is inverted instead
    (repeatedly if needed) and the result multiplied by delta' on the right.

    Raises
    ------
    SingularError
        Singular matrix or condition estimate above ``cond_cap``.
    """
    if isinstance(f, Kernel):
        f = StarObject(f.grid, kernel=f)
    if isinstance(f, DiscreteStar):
        return StarObject(f.grid, discrete=f.inverse(cond_cap=cond_cap))
    stages = 0
    while f.deltas is None and f.kernel is not None and stages < MAX_POLY_DEGREE:
        k = f.kernel
        if np.abs(np.diag(k.samples)).max() > 1e-12 * max(k.max_abs(), 1e-300):
            break
        f = StarObject(f.grid, kernel=k.derivative(1, 0))
        stages += 1
    inv = to_discrete(f, rule).inverse(cond_cap=cond_cap)
    if stages:
        inv = inv @ to_discrete(StarObject(f.grid, deltas=DeltaSeries(f.grid, [0.0] * stages + [1.0])), rule)
    return StarObject(f.grid, discrete=inv)


def resolvent(f):
    """R = (1_* - f)^(-1) = delta + R~ Theta for a kernel-only f.

    R~ solves R~ = f~ + f * R~ with the trapezoid rule on the triangle,
    one row at a time. Discrete objects are handled in their own algebra.
    """
    if f.discrete is not None:
        return StarObject(f.grid, discrete=f.discrete.resolvent())
    if f.deltas is not None:
        raise ValueError("resolvent needs a kernel-only object")
    grid = f.grid
    if f.kernel is None:
        return StarObject(grid, deltas=DeltaSeries(grid, [1.0]))
    F = f.kernel.samples
    h = grid.h
    N = grid.n_points
    R = np.zeros((N, N))
    d = np.diag(F)
    R[0, 0] = F[0, 0]
    for i in range(1, N):
        # sum_{j<=k<=i} w_k F[i,k] R[k,j] with end weights 1/2, for all j < i
        inner = F[i, :i] @ R[:i, :i]
        inner -= 0.5 * F[i, :i] * d[:i]
        denom = 1.0 - 0.5 * h * F[i, i]
        if denom == 0.0:
            raise NumericalError("second-kind system is singular")
        R[i, :i] = (F[i, :i] + h * inner) / denom
        R[i, i] = F[i, i]
    return StarObject(grid, kernel=Kernel(grid, R), deltas=DeltaSeries(grid, [1.0]))
