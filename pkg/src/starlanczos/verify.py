"""Regression suite over the worked examples of the inverse construction.

Each check compares a computed object with an independently known closed
form or identity. Where a printed example contains a typo, the check uses the
corrected form, which is verified here by the identity f^-1 * f = delta.
"""

from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .core import Grid, Kernel, StarObject, apply_to_test
from .evolution import ordered_exponential, rk4_reference
from .inverse import Annihilator, invert_kernel, invert_left_variable, invert_polynomial, invert_separable
from .lanczos import StarMatrix, run_lanczos, verify_moments
from .testkernels import POLYNOMIAL_KERNELS, inverse_residuals, make_test_kernels


@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    note: str = ""

    @property
    def passed(self):
        return bool(np.isfinite(self.value) and self.value <= self.tolerance)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name}: {self.value:.3e} (tolerance {self.tolerance:.1e}) {self.note}".rstrip()


def _max_diff(values, expected):
    return float(np.max(np.abs(np.asarray(values) - np.asarray(expected))))


def check_theta_inverse(n_points=201):
    g = Grid(0.0, 1.0, n_points)
    d = invert_left_variable("1", g)
    dd = d @ d
    series = [float(np.max(np.abs(c.values))) for c in dd.deltas]
    out = [Check("theta inverse is delta'", _max_diff(d.deltas.values(), [[0.0] * n_points, [1.0] * n_points]), 0.0)]
    out.append(Check("theta^-1 * theta^-1 is delta''", abs(len(series) - 3) + series[0] + series[1] + abs(series[2] - 1), 1e-15))
    tp, t = g.mesh()
    phi = Kernel(g, np.tril(np.sin(tp - t)))
    got = apply_to_test(dd, phi).samples
    out.append(Check("delta'' acts as the second t'-derivative", float(np.abs(np.tril(got + np.sin(tp - t))).max()), 5e-3))
    return out


def check_one_variable_product(n_points=201):
    g = Grid(0.0, 1.0, n_points)
    b1 = invert_left_variable("2*(cos(tp)+1)", g)
    x = g.nodes
    out = [
        Check("b1^-1 delta coefficient", _max_diff(b1.deltas[0].values, np.sin(x) / (2 * (np.cos(x) + 1) ** 2)), 1e-12),
        Check("b1^-1 delta' coefficient", _max_diff(b1.deltas[1].values, 1 / (2 * (np.cos(x) + 1))), 1e-12),
    ]
    # beta = theta * b1 = 2(sin t' - sin t) + 2(t' - t)
    beta = "2*(sin(tp)-sin(t)) + 2*(tp-t)"
    inv = invert_kernel(beta, ["1", "sin(tp)", "tp"], g)
    left, right = inverse_residuals(StarObject.from_kernel_expr(g, beta), inv, make_test_kernels(g))
    out.append(Check("beta^-1 two-sided action", max(left, right), 1e-3))
    chained = b1 @ invert_left_variable("1", g)
    diff = max(_max_diff(a.values, b.values) for a, b in zip(chained.deltas, inv.deltas))
    out.append(Check("beta^-1 = b1^-1 * b2^-1", diff, 1e-10))
    return out


def check_polynomial(n_points=201):
    g = Grid(1.0, 2.0, n_points)
    inv, det = invert_polynomial("tp - 2*t", g, return_details=True)
    tp, t = g.mesh()
    x = g.nodes
    out = [Check("x = 1/t", float(np.abs(np.tril(det.solution.x - 1 / t)).max()), 1e-8)]
    out.append(Check("kernel -2/t^3", float(np.abs(np.tril(inv.kernel.samples + 2 / t ** 3)).max()), 1e-6))
    out.append(Check("delta coefficient -1/t'^2", _max_diff(inv.deltas[0].values, -1 / x ** 2), 1e-12))
    out.append(Check("delta' coefficient -1/t'", _max_diff(inv.deltas[1].values, -1 / x), 1e-12))
    left, right = inverse_residuals(StarObject.from_kernel_expr(g, "tp - 2*t"), inv, make_test_kernels(g, POLYNOMIAL_KERNELS))
    out.append(Check("p^-1 two-sided action", max(left, right), 1e-3))
    dd = invert_polynomial("tp - t", g)
    out.append(Check("(t'-t)^-1 = delta''", _max_diff(dd.deltas.values(), [[0.0] * n_points, [0.0] * n_points, [1.0] * n_points]), 0.0))
    return out


def check_separable_rational(n_points=201):
    g = Grid(1.0, 2.0, n_points)
    f = "tp^2 + t/tp"
    L = Annihilator(["1", "0", "-tp^2/2"])
    inv, det = invert_separable(f, L, g, return_details=True)
    tp, t = g.mesh()
    xc = 2 * tp * (t ** 2 + 1) ** 1.5 / ((tp ** 2 + 1) ** 2.5 * t ** 3)
    x = g.nodes
    h0 = ex.evaluate(det.ode.coeffs[0], x, 0.0)
    h1 = ex.evaluate(det.ode.coeffs[1], x, 0.0)
    left, right = inverse_residuals(StarObject.from_kernel_expr(g, f), inv, make_test_kernels(g))
    return [
        Check("h0 = 3t/2, h1 = (t^4+t^2)/2", max(_max_diff(h0, 1.5 * x), _max_diff(h1, (x ** 4 + x ** 2) / 2)), 1e-12),
        Check("x closed form", float(np.abs(np.tril(det.solution.x - xc)).max()), 1e-6),
        Check("f^-1 two-sided action", max(left, right), 1e-3),
    ]


def check_separable_trig(n_points=201):
    g = Grid(0.5, 1.25, n_points)
    inv = invert_separable("cos(tp)*t", Annihilator(["1", "0", "1"]), g)
    x = g.nodes
    kernel = inv.kernel.max_abs() if inv.kernel is not None else 0.0
    left, right = inverse_residuals(StarObject.from_kernel_expr(g, "cos(tp)*t"), inv, make_test_kernels(g))
    return [
        Check("delta coefficient sin/(cos^2 t')", _max_diff(inv.deltas[0].values, np.sin(x) / (np.cos(x) ** 2 * x)), 1e-8),
        Check("delta' coefficient +1/(cos t')", _max_diff(inv.deltas[1].values, 1 / (np.cos(x) * x)), 1e-8, "(printed with the opposite sign)"),
        Check("no kernel part", kernel, 1e-8),
        Check("f^-1 two-sided action", max(left, right), 1e-3),
    ]


def check_separable_exponential(n_points=201):
    g = Grid(0.0, 1.0, n_points)
    inv = invert_separable("exp(3*tp+t)", Annihilator(["1", "-1/3"]), g)
    x = g.nodes
    left, right = inverse_residuals(StarObject.from_kernel_expr(g, "exp(3*tp+t)"), inv, make_test_kernels(g))
    return [
        Check("delta coefficient -3 exp(-4t')", _max_diff(inv.deltas[0].values, -3 * np.exp(-4 * x)), 1e-8),
        Check("delta' coefficient exp(-4t')", _max_diff(inv.deltas[1].values, np.exp(-4 * x)), 1e-8),
        Check("f^-1 two-sided action", max(left, right), 1e-3),
    ]


def check_moment_matching(n_points=201):
    g = Grid(0.0, 1.0, n_points)
    exprs = [["0", "1"], ["t", "0"]]
    A = StarMatrix.from_exprs(g, exprs)
    T = run_lanczos(A, [1.0, 0.0], [1.0, 0.0])
    rep = verify_moments(A, [1.0, 0.0], [1.0, 0.0], T)
    u = ordered_exponential(T).u_samples
    ref = rk4_reference(exprs, [1.0, 0.0], [1.0, 0.0], g)
    return [
        Check("moments j <= 2n-1 match", rep.max_rel_err(), 1e-2),
        Check("ordered exponential vs RK4", _max_diff(u, ref), 5e-3),
    ]


SUITE = (
    ("Theta inverse", check_theta_inverse),
    ("one-variable inverses", check_one_variable_product),
    ("polynomial inverse", check_polynomial),
    ("separable inverse, rational", check_separable_rational),
    ("separable inverse, trigonometric", check_separable_trig),
    ("separable inverse, exponential", check_separable_exponential),
    ("matching moments", check_moment_matching),
)


def run_suite(n_points=201):
    """All checks as (group, Check) pairs."""
    results = []
    for group, fn in SUITE:
        for c in fn(n_points):
            results.append((group, c))
    return results
