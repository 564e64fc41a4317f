"""Two-time distributions f(t',t)Theta(t'-t) + sum_m c_m(t') delta^(m)(t'-t) and their product.

The continuous objects live on a uniform grid. Kernels are stored as
lower-triangular sample matrices (the Theta support, diagonal kept since
Theta(0) = 1), optionally with the exact expression they came from. Delta
series are kept left-normalized: every coefficient is a function of the left
time t'.

The product of two objects, (p * q)(t',t) = int p(t',s) q(s,t) ds, is split
over the four pairs of parts:

* kernel * kernel: trapezoid rule on the triangle t <= s <= t',
* delta * kernel:  c(t') d^m/dt'^m [f Theta],
* kernel * delta:  (-1)^m d^m/dt^m [f(t',t) c(t) Theta],
* delta * delta:   Leibniz rule.

Derivatives of kernels use the exact expression when there is one and finite
differences otherwise.
"""

from dataclasses import dataclass
from math import comb

import numpy as np

from . import _fd
from . import expr as ex
from .errors import DeltaOrderOverflow, ExprDomainError, GridMismatchError

MAX_DELTA_ORDER = 8


@dataclass(frozen=True)
class Grid:
    """Uniform partition of [a, b] with ``n_points`` nodes.

    ``fd_order`` is the accuracy order of the finite differences used for
    kernels that carry no exact expression.
    """

    a: float
    b: float
    n_points: int
    fd_order: int = 4

    def __post_init__(self):
        if self.n_points < 2:
            raise ValueError("a grid needs at least two points")
        if not self.b > self.a:
            raise ValueError("grid interval must satisfy b > a")
        if self.fd_order not in (2, 4):
            raise ValueError("fd_order must be 2 or 4")

    @property
    def h(self):
        return (self.b - self.a) / (self.n_points - 1)

    @property
    def nodes(self):
        return self.a + self.h * np.arange(self.n_points)

    @property
    def weights(self):
        w = np.full(self.n_points, self.h)
        w[0] = w[-1] = self.h / 2
        return w

    def index(self, x):
        """Index of the node nearest to ``x``."""
        i = int(round((x - self.a) / self.h))
        if not 0 <= i < self.n_points:
            raise IndexError(f"{x} outside the grid [{self.a}, {self.b}]")
        return i

    def mesh(self):
        x = self.nodes
        return x[:, None], x[None, :]


def _check_grid(g1, g2):
    if g1 != g2:
        raise GridMismatchError(f"grids differ: {g1} vs {g2}")


def evaluate_lower(grid, e):
    """Samples of ``e`` at node pairs (i, j), i >= j; zero above the diagonal."""
    tp, t = grid.mesh()
    vals = ex.evaluate(e, tp, t, strict=False)
    vals = np.broadcast_to(vals, (grid.n_points, grid.n_points))
    vals = np.tril(vals)
    if not np.all(np.isfinite(vals)):
        i, j = np.argwhere(~np.isfinite(vals))[0]
        ex.evaluate(e, grid.nodes[i], grid.nodes[j])
        raise ExprDomainError("non-finite value", str(e))
    return vals


# ---------------------------------------------------------------- coefficients

class Coeff:
    """A function of t' on the grid: an expression in ``tp`` or sampled values."""

    __slots__ = ("grid", "expr", "_values")

    def __init__(self, grid, expr=None, values=None):
        self.grid = grid
        if expr is not None:
            expr = ex.as_expr(expr)
            if "t" in expr.free_vars:
                raise ValueError(f"coefficient '{expr}' depends on the right time")
        self.expr = expr
        if values is not None:
            values = np.asarray(values, dtype=float)
            if values.shape != (grid.n_points,):
                raise ValueError("coefficient samples must have one value per node")
        elif expr is None:
            raise ValueError("a coefficient needs an expression or samples")
        self._values = values

    @classmethod
    def constant(cls, grid, c):
        return cls(grid, expr=ex.Const(c))

    @property
    def values(self):
        if self._values is None:
            v = ex.evaluate(self.expr, self.grid.nodes, 0.0, strict=False)
            self._values = np.broadcast_to(v, (self.grid.n_points,)).astype(float)
        return self._values

    @property
    def symbolic(self):
        return self.expr is not None

    def derivative(self, k=1):
        if k == 0:
            return self
        if self.symbolic:
            return Coeff(self.grid, expr=ex.differentiate(self.expr, "tp", k))
        return Coeff(
            self.grid,
            values=_fd.derivative_1d(self.values, self.grid.h, k, self.grid.fd_order),
        )

    def is_zero(self, atol=0.0):
        if self.symbolic and ex.is_zero(self.expr):
            return True
        v = self.values
        return bool(np.all(np.isfinite(v)) and np.all(np.abs(v) <= atol))

    def __add__(self, other):
        if self.symbolic and other.symbolic:
            return Coeff(self.grid, expr=ex.add(self.expr, other.expr))
        return Coeff(self.grid, values=self.values + other.values)

    def __sub__(self, other):
        return self + (-other)

    def __neg__(self):
        if self.symbolic:
            return Coeff(self.grid, expr=ex.neg(self.expr))
        return Coeff(self.grid, values=-self.values)

    def __mul__(self, other):
        if isinstance(other, Coeff):
            if self.symbolic and other.symbolic:
                return Coeff(self.grid, expr=ex.mul(self.expr, other.expr))
            return Coeff(self.grid, values=self.values * other.values)
        other = float(other)
        if self.symbolic:
            return Coeff(self.grid, expr=ex.mul(other, self.expr))
        return Coeff(self.grid, values=other * self.values)

    __rmul__ = __mul__

    def __repr__(self):
        return f"Coeff({self.expr})" if self.symbolic else "Coeff(<samples>)"


def _as_coeff(grid, c):
    if isinstance(c, Coeff):
        _check_grid(grid, c.grid)
        return c
    if isinstance(c, (ex.TimeExpr, str)):
        return Coeff(grid, expr=ex.as_left_variable(ex.as_expr(c)))
    if np.isscalar(c):
        return Coeff.constant(grid, c)
    return Coeff(grid, values=c)


# --------------------------------------------------------------------- kernel

class Kernel:
    """Lower-triangular samples of f(t', t) on the grid, optionally with their exact source."""

    def __init__(self, grid, samples, source=None):
        samples = np.tril(np.asarray(samples, dtype=float))
        if samples.shape != (grid.n_points, grid.n_points):
            raise ValueError("kernel samples must be n_points x n_points")
        self.grid = grid
        self.samples = samples
        self.source = source
        self._cache = {}

    @classmethod
    def from_expr(cls, grid, e):
        e = ex.as_expr(e)
        return cls(grid, evaluate_lower(grid, e), source=e)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((grid.n_points, grid.n_points)), source=ex.Const(0.0))

    def derivative(self, j_left=0, j_right=0):
        """Kernel of f^(j_left, j_right)."""
        if j_left == 0 and j_right == 0:
            return self
        key = (j_left, j_right)
        if key in self._cache:
            return self._cache[key]
        if self.source is not None:
            e = ex.differentiate(ex.differentiate(self.source, "tp", j_left), "t", j_right)
            out = Kernel.from_expr(self.grid, e)
        else:
            g = self.grid
            s = self.samples
            if j_left:
                s = _fd.lower_axis0_derivative(s, g.h, j_left, g.fd_order)
            if j_right:
                s = _fd.lower_axis1_derivative(s, g.h, j_right, g.fd_order)
            out = Kernel(g, s)
        self._cache[key] = out
        return out

    def diagonal(self):
        """The function s -> f(s, s) as a coefficient."""
        if self.source is not None:
            return Coeff(self.grid, expr=ex.diagonal(self.source))
        return Coeff(self.grid, values=np.diag(self.samples).copy())

    def scale_left(self, c):
        """c(t') f(t', t)."""
        if self.source is not None and c.symbolic:
            return Kernel.from_expr(self.grid, ex.mul(c.expr, self.source))
        return Kernel(self.grid, c.values[:, None] * self.samples)

    def scale_right(self, c):
        """f(t', t) c(t)."""
        if self.source is not None and c.symbolic:
            ce = ex.substitute(c.expr, {"tp": ex.T})
            return Kernel.from_expr(self.grid, ex.mul(self.source, ce))
        return Kernel(self.grid, self.samples * c.values[None, :])

    def __add__(self, other):
        _check_grid(self.grid, other.grid)
        src = None
        if self.source is not None and other.source is not None:
            src = ex.add(self.source, other.source)
        return Kernel(self.grid, self.samples + other.samples, src)

    def __neg__(self):
        src = ex.neg(self.source) if self.source is not None else None
        return Kernel(self.grid, -self.samples, src)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, c):
        c = float(c)
        src = ex.mul(c, self.source) if self.source is not None else None
        return Kernel(self.grid, c * self.samples, src)

    __rmul__ = __mul__

    def max_abs(self):
        return float(np.max(np.abs(self.samples))) if self.samples.size else 0.0

    def __repr__(self):
        src = f" source='{self.source}'" if self.source is not None else ""
        return f"Kernel(n={self.grid.n_points}{src})"


def triangle_product(F2, F1, h):
    """Trapezoid rule for int_t^{t'} f2(t',s) f1(s,t) ds on all node pairs.

    The diagonal of the result is exactly zero.
    """
    P = F2 @ F1
    P -= 0.5 * F2 * np.diag(F1)[None, :]
    P -= 0.5 * np.diag(F2)[:, None] * F1
    out = h * np.tril(P)
    out[np.diag_indices_from(out)] = 0.0
    return out


# --------------------------------------------------------------- delta series

class DeltaSeries:
    """Left-normalized series sum_m c_m(t') delta^(m)(t'-t); trailing zeros trimmed."""

    def __init__(self, grid, coeffs, max_order=None):
        if max_order is None:
            max_order = MAX_DELTA_ORDER
        coeffs = [_as_coeff(grid, c) for c in coeffs]
        scale = max([float(np.nanmax(np.abs(c.values))) for c in coeffs if not c.symbolic] + [0.0])
        tol = 1e-14 * scale
        while coeffs and coeffs[-1].is_zero(tol):
            coeffs.pop()
        if len(coeffs) - 1 > max_order:
            raise DeltaOrderOverflow(
                f"delta order {len(coeffs) - 1} exceeds the cap {max_order}"
            )
        self.grid = grid
        self.coeffs = tuple(coeffs)

    @property
    def order(self):
        return len(self.coeffs) - 1

    def __len__(self):
        return len(self.coeffs)

    def __iter__(self):
        return iter(self.coeffs)

    def __getitem__(self, m):
        return self.coeffs[m]

    def values(self):
        """Sampled coefficients as an array of shape (M + 1, n_points)."""
        if not self.coeffs:
            return np.zeros((0, self.grid.n_points))
        return np.array([c.values for c in self.coeffs])

    def __repr__(self):
        return "DeltaSeries([" + ", ".join(repr(c) for c in self.coeffs) + "])"


def _accumulate(grid, acc, order, c):
    while len(acc) <= order:
        acc.append(Coeff.constant(grid, 0.0))
    acc[order] = acc[order] + c


def normalize_right_coefficient(c, j, grid):
    """Left-normalized series equal to c(t) delta^(j)(t'-t).

    ``c`` is a function of the right time: an expression in ``t`` (a ``tp``
    is also accepted and means the same function) or a Coeff holding its
    values. Uses c(t) delta^(j) = d^j/dt'^j [c(t') delta], expanded with the
    Leibniz rule.
    """
    if isinstance(c, Coeff):
        cf = c
    else:
        cf = Coeff(grid, expr=ex.as_left_variable(ex.as_expr(c)))
    return DeltaSeries(grid, _right_coefficient_terms(cf, j))


def _right_coefficient_terms(cf, j):
    return [comb(j, n) * cf.derivative(j - n) for n in range(j + 1)]


# ---------------------------------------------------------------- star object

class StarObject:
    """f(t',t) Theta(t'-t) + sum_m c_m(t') delta^(m)(t'-t) on a grid.

    ``discrete`` holds an opaque matrix representation (see ``discrete.py``)
    for objects that only exist on the grid, such as numeric inverses; such
    objects have no kernel or delta parts.
    """

    def __init__(self, grid, kernel=None, deltas=None, discrete=None):
        self.grid = grid
        if kernel is not None:
            _check_grid(grid, kernel.grid)
        if deltas is not None and not isinstance(deltas, DeltaSeries):
            deltas = DeltaSeries(grid, deltas)
        if deltas is not None and len(deltas) == 0:
            deltas = None
        if discrete is not None and (kernel is not None or deltas is not None):
            raise ValueError("a discrete object has no kernel or delta parts")
        self.kernel = kernel
        self.deltas = deltas
        self.discrete = discrete

    @classmethod
    def from_kernel_expr(cls, grid, e):
        return cls(grid, kernel=Kernel.from_expr(grid, e))

    @classmethod
    def from_deltas(cls, grid, coeffs):
        return cls(grid, deltas=DeltaSeries(grid, coeffs))

    @property
    def is_discrete(self):
        return self.discrete is not None

    @property
    def is_zero(self):
        return self.kernel is None and self.deltas is None and self.discrete is None

    def delta_coeffs(self):
        return list(self.deltas) if self.deltas is not None else []

    def __matmul__(self, other):
        return star_product(self, other)

    def __add__(self, other):
        return star_add(self, other)

    def __neg__(self):
        return -1.0 * self

    def __sub__(self, other):
        return star_add(self, -1.0 * other)

    def __mul__(self, c):
        c = float(c)
        if self.discrete is not None:
            return StarObject(self.grid, discrete=c * self.discrete)
        k = c * self.kernel if self.kernel is not None else None
        d = [c * x for x in self.deltas] if self.deltas is not None else None
        return StarObject(self.grid, kernel=k, deltas=d)

    __rmul__ = __mul__

    def __repr__(self):
        if self.discrete is not None:
            return f"StarObject(discrete={self.discrete!r})"
        return f"StarObject(kernel={self.kernel!r}, deltas={self.deltas!r})"


def star_identity(grid):
    """The identity 1_* = delta(t'-t)."""
    return StarObject(grid, deltas=DeltaSeries(grid, [1.0]))


def theta(grid):
    """Heaviside Theta(t'-t) as a kernel object."""
    return StarObject.from_kernel_expr(grid, ex.Const(1.0))


def star_add(p, q):
    _check_grid(p.grid, q.grid)
    grid = p.grid
    if p.discrete is not None or q.discrete is not None:
        from .discrete import to_discrete

        rule = (p.discrete or q.discrete).rule
        return StarObject(grid, discrete=to_discrete(p, rule) + to_discrete(q, rule))
    if p.kernel is None:
        k = q.kernel
    elif q.kernel is None:
        k = p.kernel
    else:
        k = p.kernel + q.kernel
    acc = []
    for m, c in enumerate(p.delta_coeffs()):
        _accumulate(grid, acc, m, c)
    for m, c in enumerate(q.delta_coeffs()):
        _accumulate(grid, acc, m, c)
    return StarObject(grid, kernel=k, deltas=DeltaSeries(grid, acc) if acc else None)


def star_product(p, q, max_order=None):
    """The product (p * q)(t',t) = int p(t',s) q(s,t) ds.

    Raises
    ------
    GridMismatchError
        When the operands live on different grids.
    DeltaOrderOverflow
        When the result carries a delta derivative above ``max_order``.
    """
    _check_grid(p.grid, q.grid)
    grid = p.grid
    if p.discrete is not None or q.discrete is not None:
        from .discrete import to_discrete

        rule = (p.discrete or q.discrete).rule
        return StarObject(grid, discrete=to_discrete(p, rule) @ to_discrete(q, rule))

    kernels = []
    acc = []

    if p.kernel is not None and q.kernel is not None:
        kernels.append(Kernel(grid, triangle_product(p.kernel.samples, q.kernel.samples, grid.h)))

    if p.deltas is not None and q.kernel is not None:
        f = q.kernel
        for m, c in enumerate(p.deltas):
            if c.is_zero():
                continue
            kernels.append(f.derivative(m, 0).scale_left(c))
            # d^m/dt'^m [f Theta] leaves f^(l,0)(t,t) delta differentiated m-1-l times
            for l in range(m):
                diag = f.derivative(l, 0).diagonal()
                for n, term in enumerate(_right_coefficient_terms(diag, m - 1 - l)):
                    _accumulate(grid, acc, n, c * term)

    if p.kernel is not None and q.deltas is not None:
        f = p.kernel
        for m, c in enumerate(q.deltas):
            if c.is_zero():
                continue
            g = f.scale_right(c)
            kernels.append((-1) ** m * g.derivative(0, m))
            for qq in range(m):
                diag = g.derivative(0, qq).diagonal()
                _accumulate(grid, acc, m - 1 - qq, (-1) ** qq * diag)

    if p.deltas is not None and q.deltas is not None:
        for m, c in enumerate(p.deltas):
            if c.is_zero():
                continue
            for n, d in enumerate(q.deltas):
                if d.is_zero():
                    continue
                for i in range(m + 1):
                    _accumulate(grid, acc, n + i, comb(m, i) * (c * d.derivative(m - i)))

    kernel = None
    for k in kernels:
        kernel = k if kernel is None else kernel + k
    deltas = DeltaSeries(grid, acc, max_order=max_order) if acc else None
    return StarObject(grid, kernel=kernel, deltas=deltas)


def apply_to_test(p, phi):
    """Kernel part of p * phi, for a smooth test kernel ``phi``.

    Delta terms of the product are dropped; they vanish when phi and enough
    of its t'-derivatives vanish on the diagonal. Use ``star_product`` to
    keep them.
    """
    if isinstance(phi, (ex.TimeExpr, str)):
        phi = Kernel.from_expr(p.grid, ex.as_expr(phi))
    _check_grid(p.grid, phi.grid)
    r = star_product(p, StarObject(p.grid, kernel=phi))
    if r.discrete is not None:
        return r.discrete.readout()
    return r.kernel if r.kernel is not None else Kernel.zeros(p.grid)


def integrate_rows(p, t_fixed):
    """F(t') = int_{t_fixed}^{t'} p(s, t_fixed) ds at every node t' >= t_fixed.

    ``t_fixed`` is a node index. The kernel part uses the trapezoid rule; a
    term c_m(t') delta^(m) contributes (-1)^m c_m^(m)(t_fixed) (Theta(0) = 1,
    so the delta already counts at t' = t_fixed). Entries before
    ``t_fixed`` are NaN.
    """
    grid = p.grid
    N = grid.n_points
    if not 0 <= t_fixed < N:
        raise IndexError(f"node index {t_fixed} out of range")
    out = np.full(N, np.nan)
    if p.discrete is not None:
        return p.discrete.integrate_column(t_fixed)
    total = np.zeros(N - t_fixed)
    if p.kernel is not None:
        col = p.kernel.samples[t_fixed:, t_fixed]
        seg = 0.5 * grid.h * (col[1:] + col[:-1])
        total[1:] += np.cumsum(seg)
    for m, c in enumerate(p.delta_coeffs()):
        total += (-1) ** m * c.derivative(m).values[t_fixed]
    out[t_fixed:] = total
    return out


def allclose(p, q, rtol=1e-10, atol=0.0):
    """Component-wise equality: kernels within rtol * max-abs, coefficients on the grid."""
    _check_grid(p.grid, q.grid)
    if p.discrete is not None or q.discrete is not None:
        from .discrete import to_discrete

        rule = (p.discrete or q.discrete).rule
        a, b = to_discrete(p, rule).matrix, to_discrete(q, rule).matrix
        scale = max(np.abs(a).max(), np.abs(b).max(), 1e-300)
        return bool(np.abs(a - b).max() <= rtol * scale + atol)
    n = p.grid.n_points
    ka = p.kernel.samples if p.kernel is not None else np.zeros((n, n))
    kb = q.kernel.samples if q.kernel is not None else np.zeros((n, n))
    scale = max(np.abs(ka).max(), np.abs(kb).max())
    if np.abs(ka - kb).max() > rtol * scale + atol:
        return False
    da = p.deltas.values() if p.deltas is not None else np.zeros((0, n))
    db = q.deltas.values() if q.deltas is not None else np.zeros((0, n))
    m = max(len(da), len(db))
    da = np.vstack([da, np.zeros((m - len(da), n))])
    db = np.vstack([db, np.zeros((m - len(db), n))])
    if m == 0:
        return True
    scale = max(np.abs(da).max(), np.abs(db).max())
    return bool(np.abs(da - db).max() <= rtol * scale + atol)
