"""The *-Lanczos recurrence and the matching-moment check.

The recurrence runs in the discrete (trapezoid) algebra: every entry of the
Lanczos vectors is a lower-triangular matrix, so products with beta inverses,
which carry delta terms, need no special treatment. The beta inverse is taken
either directly (``numeric``) or as minus the resolvent of
gamma_j = (w_j + w_{j-2}) * A * v_{j-1}, since beta_j = gamma_j - 1_*
(``resolvent``).

Moments w^H A^j v are computed with the continuous product of
``core.star_product``, independently of the discrete pipeline that produces
T_n, so that the moment report measures a real discrepancy.
"""

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .core import Kernel, StarObject, star_identity
from .discrete import identity, to_discrete
from .errors import NumericalError

logger = logging.getLogger(__name__)

BREAKDOWN_TOL = 1e-10
BETA_MODES = ("numeric", "resolvent")
RULE = "trapezoid"


class StarMatrix:
    """A rows x cols array of StarObjects on one grid."""

    def __init__(self, entries):
        entries = [list(row) for row in entries]
        if not entries or not entries[0]:
            raise ValueError("empty matrix")
        cols = len(entries[0])
        if any(len(row) != cols for row in entries):
            raise ValueError("ragged matrix")
        grid = entries[0][0].grid
        if any(e.grid != grid for row in entries for e in row):
            raise ValueError("matrix entries live on different grids")
        self.entries = entries
        self.grid = grid

    @classmethod
    def from_exprs(cls, grid, exprs):
        """A(t',t) = A~(t') Theta; entries written in t are bound to the left time."""
        rows = []
        for row in exprs:
            out = []
            for e in row:
                e = ex.as_left_variable(ex.as_expr(e))
                if "t" in e.free_vars:
                    raise ValueError(f"matrix entry '{e}' depends on both times")
                out.append(StarObject(grid, kernel=Kernel.from_expr(grid, e)))
            rows.append(out)
        return cls(rows)

    @property
    def dims(self):
        return len(self.entries), len(self.entries[0])

    def __getitem__(self, ij):
        i, j = ij
        return self.entries[i][j]

    def discrete(self, rule=RULE):
        return [[to_discrete(e, rule) for e in row] for row in self.entries]


def tridiagonal_matrix(T):
    """T_n as a StarMatrix with 1_* on the superdiagonal."""
    n = T.n
    grid = T.grid
    zero = StarObject(grid)
    one = star_identity(grid)
    rows = [[zero] * n for _ in range(n)]
    for k in range(n):
        rows[k][k] = T.alphas[k]
    for k in range(n - 1):
        rows[k][k + 1] = one
        rows[k + 1][k] = T.betas[k]
    return StarMatrix(rows)


@dataclass
class LanczosState:
    """Lanczos vectors after the last completed step (discrete entries)."""

    v_prev: list
    v_curr: list
    w_prev: list
    w_curr: list
    step: int
    breakdown: int = None


@dataclass
class TridiagonalStar:
    """alphas[0..n-1] on the diagonal, betas[0..n-2] = beta_1..beta_{n-1} below it.

    ``breakdown`` is the index j of a beta_j that could not be inverted, or None.
    """

    grid: object
    alphas: list
    betas: list
    breakdown: int = None
    beta_mode: str = "numeric"
    conditions: list = field(default_factory=list)
    state: LanczosState = None

    def __post_init__(self):
        if len(self.betas) != max(len(self.alphas) - 1, 0):
            raise ValueError("need exactly one beta fewer than alphas")

    @property
    def n(self):
        return len(self.alphas)

    def to_json(self):
        """Per-coefficient kernel samples (lower triangle, row-major) and validity."""
        def pack(obj):
            D = to_discrete(obj, RULE)
            k = D.readout().samples
            tri = k[np.tril_indices(self.grid.n_points)]
            return {"valid_from": D.valid_from, "samples": [None if not np.isfinite(x) else float(x) for x in tri]}

        g = self.grid
        return {
            "grid": {"a": g.a, "b": g.b, "n_points": g.n_points},
            "n": self.n,
            "beta_mode": self.beta_mode,
            "breakdown": self.breakdown,
            "alphas": [pack(a) for a in self.alphas],
            "betas": [pack(b) for b in self.betas],
        }


def _check_vectors(A, w, v):
    rows, cols = A.dims
    if rows != cols:
        raise ValueError("A must be square")
    w = np.asarray(w, dtype=float)
    v = np.asarray(v, dtype=float)
    if w.shape != (rows,) or v.shape != (rows,):
        raise ValueError(f"w and v must have length {rows}")
    if abs(w @ v - 1.0) > 1e-12:
        raise ValueError(f"w^H v = {w @ v!r}, expected 1")
    return w, v


def _scale(D):
    """Largest kernel value of a discrete object, the size of its action."""
    return D.max_abs() / D.grid.h


def run_lanczos(A, w, v, n=None, beta_mode="numeric", breakdown_tol=BREAKDOWN_TOL, cond_cap=None):
    """Run ``n`` steps of *-Lanczos on (A, w, v) and return T_n.

    On breakdown (a beta whose largest kernel value is below
    ``breakdown_tol`` times the running scale) the recurrence stops and the
    completed T_m is returned with ``breakdown`` set to the offending index.

    Beta kernels vanish on the diagonal, so their discrete inverses are
    differentiation-like and their 1-norm condition grows quickly with the
    grid size. The estimate is logged and kept in ``T.conditions``; it is
    only enforced when ``cond_cap`` is given.

    Raises
    ------
    ValueError
        w^H v differs from 1 or n exceeds the dimension.
    SingularError
        A beta is not negligible but its discrete inverse is too ill-conditioned.
    """
    w, v = _check_vectors(A, w, v)
    dim = A.dims[0]
    n = dim if n is None else int(n)
    if not 1 <= n <= dim:
        raise ValueError(f"n must lie in [1, {dim}]")
    if beta_mode not in BETA_MODES:
        raise ValueError(f"beta_mode must be one of {BETA_MODES}")
    grid = A.grid
    M = A.discrete(RULE)
    I = identity(grid, RULE)
    Z = 0.0 * I

    def Av(x):
        return [_sum(M[i][k] @ x[k] for k in range(dim)) for i in range(dim)]

    def wA(y):
        return [_sum(y[k] @ M[k][i] for k in range(dim)) for i in range(dim)]

    def dot(y, x):
        return _sum(y[k] @ x[k] for k in range(dim))

    v0 = [float(c) * I for c in v]
    w0 = [float(c) * I for c in w]
    Av0 = Av(v0)
    alphas = [dot(w0, Av0)]
    betas = []
    conditions = []
    scale = _scale(alphas[0])
    w_prev, v_prev = [Z] * dim, [Z] * dim
    w_curr, v_curr = w0, v0
    Av_curr = Av0
    breakdown = None
    for j in range(1, n):
        a = alphas[-1]
        w_next = [x - a @ y for x, y in zip(wA(w_curr), w_curr)]
        v_hat = [x - y @ a for x, y in zip(Av_curr, v_curr)]
        if j == 1:
            moment = dot(w0, Av(Av0))
            beta = moment - a @ a
            scale = max(scale, _scale(moment), _scale(a @ a))
        else:
            w_next = [x - betas[-1] @ y for x, y in zip(w_next, w_prev)]
            v_hat = [x - y for x, y in zip(v_hat, v_prev)]
            beta = dot(w_next, Av_curr)
        size = _scale(beta)
        logger.debug("beta_%d: max kernel value %.3e (scale %.3e)", j, size, scale)
        if size <= breakdown_tol * scale:
            breakdown = j
            logger.info("breakdown at beta_%d", j)
            break
        scale = max(scale, size)
        cap = np.inf if cond_cap is None else cond_cap
        v_next = _apply_beta_inverse(v_hat, beta, j, beta_mode, w_next, w_prev, Av_curr, dot, I, cap)
        conditions.append(beta.condition())
        logger.debug("beta_%d: condition estimate %.3e", j, conditions[-1])
        betas.append(beta)
        w_prev, v_prev, w_curr, v_curr = w_curr, v_curr, w_next, v_next
        Av_curr = Av(v_curr)
        alphas.append(dot(w_curr, Av_curr))
        scale = max(scale, _scale(alphas[-1]))
    state = LanczosState(v_prev, v_curr, w_prev, w_curr, len(alphas) - 1, breakdown)
    return TridiagonalStar(
        grid,
        [StarObject(grid, discrete=a) for a in alphas],
        [StarObject(grid, discrete=b) for b in betas],
        breakdown=breakdown,
        beta_mode=beta_mode,
        conditions=conditions,
        state=state,
    )


def _sum(terms):
    terms = iter(terms)
    total = next(terms)
    for t in terms:
        total = total + t
    return total


def _apply_beta_inverse(v_hat, beta, j, mode, w_next, w_prev, Av_curr, dot, I, cond_cap):
    """v_hat * beta_j^-1, entry by entry, by triangular solves."""
    if mode == "resolvent" and j >= 2:
        # beta_j = gamma_j - 1_*, so beta_j^-1 = -(1_* - gamma_j)^-1
        gamma = dot([x + y for x, y in zip(w_next, w_prev)], Av_curr)
        return [-((I - gamma).solve_right(x, cond_cap)) for x in v_hat]
    return [beta.solve_right(x, cond_cap) for x in v_hat]


# ------------------------------------------------------------------ moments

def _vector_moment(A, v, j):
    """A^j v as StarObjects, with the continuous product."""
    grid = A.grid
    dim = A.dims[0]
    if j == 0:
        return [float(c) * star_identity(grid) for c in v]
    y = []
    for i in range(dim):
        total = StarObject(grid)
        for k in range(dim):
            if v[k] != 0.0:
                total = total + float(v[k]) * A[i, k]
        y.append(total)
    for _ in range(j - 1):
        y = [_sum(A[i, k] @ y[k] for k in range(dim)) for i in range(dim)]
    return y


def star_moment(A, w, v, j):
    """w^H A^(*j) v by repeated matrix-vector products (j = 0 gives 1_*)."""
    if j < 0:
        raise ValueError("j must be non-negative")
    w = np.asarray(w, dtype=float)
    y = _vector_moment(A, np.asarray(v, dtype=float), j)
    out = StarObject(A.grid)
    for i, c in enumerate(w):
        if c != 0.0:
            out = out + float(c) * y[i]
    return out


def _kernel_value(obj, i, k):
    if obj.discrete is not None:
        return obj.discrete.value_at(i, k)
    if obj.kernel is None:
        return 0.0
    return float(obj.kernel.samples[i, k])


@dataclass
class MomentRow:
    j: int
    lhs: float
    rhs: float
    abs_err: float
    rel_err: float
    guaranteed: bool


@dataclass
class MomentReport:
    rows: list
    eval_at: tuple

    def max_rel_err(self, guaranteed_only=True):
        """Largest relative error; NaN if any compared moment is undefined."""
        errs = [r.rel_err for r in self.rows if r.guaranteed or not guaranteed_only]
        if any(np.isnan(e) for e in errs):
            return float("nan")
        return max(errs) if errs else 0.0

    def to_csv(self):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["j", "lhs", "rhs", "abs_err", "rel_err", "guaranteed"])
        for r in self.rows:
            wr.writerow([r.j, repr(r.lhs), repr(r.rhs), repr(r.abs_err), repr(r.rel_err), int(r.guaranteed)])
        return buf.getvalue()


def verify_moments(A, w, v, T, eval_at=None, j_max=None):
    """Compare w^H A^j v with e_1^H T_n^j e_1 at the node pair ``eval_at`` = (t', t).

    By default the pair is (b, a), with t moved to the first column that no
    beta inverse masks and j runs over 0..2n-1; rows with
    j > 2n-1 are marked as outside the guarantee. The relative error of a
    moment that vanishes (below 1e-12 of the largest one) is taken relative
    to the largest moment.
    """
    grid = A.grid
    n = T.n
    TD = tridiagonal_matrix(T).discrete(RULE)
    if eval_at is None:
        # skip columns masked by a zero pivot of some beta
        first = max(D.valid_from for row in TD for D in row)
        eval_at = (grid.b, grid.nodes[min(first, grid.n_points - 1)])
    i, k = grid.index(eval_at[0]), grid.index(eval_at[1])
    if i < k:
        raise ValueError("evaluation point must satisfy t' >= t")
    j_max = 2 * n - 1 if j_max is None else j_max
    w = np.asarray(w, dtype=float)
    I = identity(grid, RULE)
    x = [I] + [0.0 * I] * (n - 1)
    y = _vector_moment(A, np.asarray(v, dtype=float), 1) if j_max >= 1 else None
    values = []
    for j in range(j_max + 1):
        if j == 0:
            lhs = rhs = 0.0
        else:
            if j > 1:
                y = [_sum(A[r, c] @ y[c] for c in range(A.dims[0])) for r in range(A.dims[0])]
            x = [_sum(TD[r][c] @ x[c] for c in range(n)) for r in range(n)]
            lhs = sum(float(w[r]) * _kernel_value(y[r], i, k) for r in range(len(w)) if w[r] != 0.0)
            rhs = x[0].value_at(i, k)
        values.append((lhs, rhs))
    # moments that vanish (structurally, e.g. odd powers of an off-diagonal A)
    # are measured against the largest moment instead of themselves
    scale = max([abs(l) for l, _ in values] + [0.0])
    rows = []
    for j, (lhs, rhs) in enumerate(values):
        err = abs(lhs - rhs)
        denom = abs(lhs) if abs(lhs) > 1e-12 * scale else scale
        rel = err / denom if denom > 0.0 else (0.0 if err == 0.0 else np.inf)
        rows.append(MomentRow(j, lhs, rhs, err, rel, j <= 2 * n - 1))
    return MomentReport(rows, (grid.nodes[i], grid.nodes[k]))


def smoothness_probe(T):
    """Second differences of each alpha/beta kernel along t', relative to its size.

    A diagnostic for the conjecture that the coefficients stay smooth: values
    of order h^2 indicate a smooth kernel, values of order 1 a rough one.
    """
    out = {}
    for name, objs in (("alpha", T.alphas), ("beta", T.betas)):
        for idx, obj in enumerate(objs):
            D = to_discrete(obj, RULE)
            K = D.readout().samples
            K = K[:, D.valid_from:]
            d2 = K[2:] - 2 * K[1:-1] + K[:-2]
            tri = np.tril(np.ones_like(d2, dtype=bool), -2)
            vals = np.abs(d2[tri & np.isfinite(d2)])
            size = np.nanmax(np.abs(K)) if np.isfinite(K).any() else 0.0
            key = f"{name}_{idx if name == 'alpha' else idx + 1}"
            out[key] = float(vals.max() / size) if vals.size and size > 0 else 0.0
    return out


def breakdown_error(T):
    """A NumericalError describing the breakdown of ``T``, or None."""
    if T.breakdown is None:
        return None
    return NumericalError(f"breakdown at beta_{T.breakdown}")

