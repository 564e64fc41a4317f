import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from starlanczos import expr as ex
from starlanczos.core import DeltaSeries, Grid, Kernel, StarObject, apply_to_test, star_identity, theta
from starlanczos.errors import AnnihilatorError, ExcludedNodesError, NumericalError, SingularError
from starlanczos.inverse import (
    Annihilator,
    build_annihilator,
    invert_kernel,
    invert_left_variable,
    invert_numeric,
    invert_polynomial,
    invert_right_variable,
    invert_separable,
    polynomial_degree,
    resolvent,
)
from starlanczos.testkernels import POLYNOMIAL_KERNELS, inverse_residuals, make_test_kernels


def _coeff_values(obj):
    return obj.deltas.values()


# ------------------------------------------------------------- one variable

def test_theta_inverse_is_delta_prime():
    g = Grid(0.0, 1.0, 51)
    inv = invert_left_variable("1", g)
    assert inv.kernel is None
    assert np.array_equal(_coeff_values(inv), [[0.0] * 51, [1.0] * 51])


def test_left_variable_inverse_coefficients():
    g = Grid(0.0, 1.0, 101)
    x = g.nodes
    inv = invert_left_variable("2*(cos(tp)+1)", g)
    assert np.allclose(inv.deltas[0].values, np.sin(x) / (2 * (np.cos(x) + 1) ** 2), rtol=1e-14)
    assert np.allclose(inv.deltas[1].values, 1 / (2 * (np.cos(x) + 1)), rtol=1e-14)
    left, right = inverse_residuals(StarObject.from_kernel_expr(g, "2*(cos(tp)+1)"), inv, make_test_kernels(g, POLYNOMIAL_KERNELS))
    assert max(left, right) < 1e-3


@pytest.mark.parametrize("b", ["1", "t", "exp(t)"])
def test_right_variable_inverse_is_two_sided(b):
    g = Grid(1.0, 2.0, 201)
    inv = invert_right_variable(b, g)
    x = g.nodes
    assert np.abs(inv.deltas[0].values).max() == 0.0
    bv = np.broadcast_to(ex.evaluate(ex.substitute(ex.parse(b), {"t": ex.TP}), x, 0.0), x.shape)
    assert np.allclose(inv.deltas[1].values, 1 / bv)
    left, right = inverse_residuals(StarObject.from_kernel_expr(g, b), inv, make_test_kernels(g))
    assert max(left, right) < 1e-3


def test_zero_one_variable_kernels_are_rejected():
    g = Grid(0.0, 1.0, 21)
    with pytest.raises(NumericalError):
        invert_right_variable("0", g)
    with pytest.raises(NumericalError):
        invert_left_variable("0*tp", g)
    with pytest.raises(ExcludedNodesError) as info:
        invert_left_variable("tp - 0.5", g)
    assert info.value.nodes == [10]


# --------------------------------------------------------------- polynomial

def test_polynomial_degree():
    assert polynomial_degree(ex.parse("tp - 2*t")) == 1
    assert polynomial_degree(ex.parse("tp^3*t + 1")) == 3
    assert polynomial_degree(ex.parse("sin(tp)")) is None


def test_polynomial_inverse_example():
    g = Grid(1.0, 2.0, 201)
    inv, det = invert_polynomial("tp - 2*t", g, return_details=True)
    tp, t = g.mesh()
    x = g.nodes
    assert np.abs(np.tril(det.solution.x - 1 / t)).max() < 1e-8
    # kernel -2/t^3, delta -1/t'^2, delta' -1/t' (checked by the identity below)
    assert np.abs(np.tril(inv.kernel.samples + 2 / t ** 3)).max() < 1e-6
    assert np.allclose(inv.deltas[0].values, -1 / x ** 2)
    assert np.allclose(inv.deltas[1].values, -1 / x)
    left, right = inverse_residuals(StarObject.from_kernel_expr(g, "tp - 2*t"), inv, make_test_kernels(g, POLYNOMIAL_KERNELS))
    assert max(left, right) < 1e-3


def test_polynomial_inverse_exact_identity_in_series_algebra():
    """(-2/t^3 Theta - delta/t'^2 - delta'/t') * (t' - 2t)Theta has only a delta part."""
    g = Grid(1.0, 2.0, 401)
    inv = invert_polynomial("tp - 2*t", g)
    r = inv @ StarObject.from_kernel_expr(g, "tp - 2*t")
    assert np.allclose(r.deltas.values()[0], 1.0, atol=1e-12)
    assert r.deltas.order == 0
    # the kernel part is the quadrature error of (-2/t^3 Theta) * (t' - 2t)Theta plus exact terms
    assert r.kernel.max_abs() < 1e-4


def test_degenerate_polynomial():
    g = Grid(0.0, 1.0, 51)
    inv = invert_polynomial("tp - t", g)
    assert np.array_equal(_coeff_values(inv), [[0.0] * 51, [0.0] * 51, [1.0] * 51])
    inv2 = invert_polynomial("(tp - t)^2", g)
    assert inv2.deltas.order == 3
    assert np.allclose(inv2.deltas[3].values, 0.5)


def test_polynomial_excluded_nodes():
    g = Grid(0.0, 2.0, 21)
    with pytest.raises(ExcludedNodesError):
        invert_polynomial("tp - 2*t + 1", g)


# --------------------------------------------------------------- annihilator

def test_annihilator_examples():
    g = Grid(0.5, 1.25, 101)
    L = build_annihilator(["cos(tp)", "sin(tp)"], g)
    x = g.nodes
    vals = [np.broadcast_to(ex.evaluate(c, x, 0.0), x.shape) for c in L.g]
    assert np.allclose(vals[0], 1.0) and np.allclose(vals[1], 0.0, atol=1e-12) and np.allclose(vals[2], 1.0)
    L6 = build_annihilator(["exp(3*tp)"], Grid(0.0, 1.0, 11))
    # leading coefficient fixed to 1: -3 delta + delta', a multiple of delta - delta'/3
    assert ex.evaluate(L6.g[0], 0.3, 0.0) == pytest.approx(-3.0)
    assert ex.evaluate(L6.g[1], 0.3, 0.0) == 1.0


def test_annihilator_for_rational_basis():
    g = Grid(1.0, 2.0, 101)
    L = build_annihilator(["tp^2", "1/tp"], g)
    for y in ("tp^2", "1/tp"):
        res, scale = L.residual(ex.parse(y), g)
        assert res <= 1e-10 * scale


def test_singular_wronskian():
    g = Grid(0.0, 1.0, 21)
    with pytest.raises(AnnihilatorError):
        build_annihilator(["tp", "2*tp"], g)


def test_explicit_annihilator_validation():
    with pytest.raises(ValueError):
        Annihilator(["1"])
    with pytest.raises(ValueError):
        Annihilator(["1", "0"])


# ---------------------------------------------------------------- separable

def test_separable_rational_example():
    g = Grid(1.0, 2.0, 201)
    inv, det = invert_separable("tp^2 + t/tp", Annihilator(["1", "0", "-tp^2/2"]), g, return_details=True)
    tp, t = g.mesh()
    closed = 2 * tp * (t ** 2 + 1) ** 1.5 / ((tp ** 2 + 1) ** 2.5 * t ** 3)
    assert np.abs(np.tril(det.solution.x - closed)).max() < 1e-6
    left, right = inverse_residuals(StarObject.from_kernel_expr(g, "tp^2 + t/tp"), inv, make_test_kernels(g))
    assert max(left, right) < 1e-3


def test_separable_trig_example():
    g = Grid(0.5, 1.25, 201)
    inv = invert_separable("cos(tp)*t", Annihilator(["1", "0", "1"]), g)
    x = g.nodes
    assert np.abs(inv.deltas[0].values - np.sin(x) / (np.cos(x) ** 2 * x)).max() < 1e-8
    assert np.abs(inv.deltas[1].values - 1 / (np.cos(x) * x)).max() < 1e-8


def test_separable_exponential_example():
    g = Grid(0.0, 1.0, 201)
    inv = invert_separable("exp(3*tp+t)", Annihilator(["1", "-1/3"]), g)
    x = g.nodes
    assert np.abs(inv.deltas[0].values + 3 * np.exp(-4 * x)).max() < 1e-8
    assert np.abs(inv.deltas[1].values - np.exp(-4 * x)).max() < 1e-8


def test_annihilator_scaling_does_not_change_the_inverse():
    g = Grid(0.0, 1.0, 101)
    a = invert_separable("exp(3*tp+t)", Annihilator(["1", "-1/3"]), g)
    b = invert_kernel("exp(3*tp+t)", ["exp(3*tp)"], g)
    assert np.allclose(a.deltas.values(), b.deltas.values(), rtol=1e-12)


def test_anti_homomorphism_on_factorized_kernel():
    """beta = Theta * b1 with b1 = 2(cos t' + 1)Theta, so beta^-1 = b1^-1 * Theta^-1."""
    g = Grid(0.0, 1.0, 201)
    beta = "2*(sin(tp)-sin(t)) + 2*(tp-t)"
    direct = invert_kernel(beta, ["1", "sin(tp)", "tp"], g)
    chained = invert_left_variable("2*(cos(tp)+1)", g) @ invert_left_variable("1", g)
    for phi in make_test_kernels(g):
        a = apply_to_test(direct, phi).samples
        b = apply_to_test(chained, phi).samples
        assert np.abs(a - b).max() < 1e-9 * (1 + np.abs(a).max())


def test_polynomial_and_separable_constructions_agree():
    g = Grid(1.0, 2.0, 201)
    p = invert_polynomial("tp - 2*t", g)
    s = invert_kernel("tp - 2*t", ["1", "tp"], g)
    phis = make_test_kernels(g, POLYNOMIAL_KERNELS)
    res = max(max(inverse_residuals(StarObject.from_kernel_expr(g, "tp - 2*t"), inv, phis)) for inv in (p, s))
    for phi in phis:
        fp = apply_to_test(StarObject.from_kernel_expr(g, "tp - 2*t"), phi)
        a = apply_to_test(p, fp).samples
        b = apply_to_test(s, fp).samples
        assert np.abs(a - b).max() <= 2 * res + 1e-12


def test_vanishing_diagonal_is_differentiated_first():
    g = Grid(0.0, 1.0, 201)
    f = "sin(tp - t)"
    inv = invert_kernel(f, ["sin(tp)", "cos(tp)"], g)
    left, right = inverse_residuals(StarObject.from_kernel_expr(g, f), inv, make_test_kernels(g))
    assert max(left, right) < 1e-3


@given(st.floats(0.5, 3.0), st.floats(-2.0, 2.0))
@settings(max_examples=10, deadline=None)
def test_two_sided_inverse_of_exponential_kernels(a, c):
    g = Grid(0.0, 1.0, 101)
    f = f"exp({a!r}*tp + {c!r}*t)"
    inv = invert_kernel(f, [f"exp({a!r}*tp)"], g)
    left, right = inverse_residuals(StarObject.from_kernel_expr(g, f), inv, make_test_kernels(g))
    assert max(left, right) < 5e-3


# ------------------------------------------------------------------ numeric

def test_numeric_inverse_of_theta_differentiates():
    g = Grid(0.0, 1.0, 201)
    inv = invert_numeric(theta(g).kernel)
    phi = Kernel.from_expr(g, ex.parse("sin(tp - t)"))
    out = apply_to_test(inv, phi).samples
    tp, t = g.mesh()
    mask = np.tril(np.ones_like(out, dtype=bool), -1)
    err = np.abs(out - np.cos(tp - t))[mask].max()
    assert err < 5 * g.h
    g2 = Grid(0.0, 1.0, 401)
    out2 = apply_to_test(invert_numeric(theta(g2).kernel), Kernel.from_expr(g2, ex.parse("sin(tp - t)"))).samples
    tp2, t2 = g2.mesh()
    err2 = np.abs(out2 - np.cos(tp2 - t2))[np.tril(np.ones_like(out2, dtype=bool), -1)].max()
    assert err2 < 0.6 * err


def test_numeric_inverse_of_linear_kernel_second_derivative():
    g = Grid(0.0, 1.0, 201)
    inv = invert_numeric(StarObject.from_kernel_expr(g, "tp - t"))
    phi = Kernel.from_expr(g, ex.parse("sin(tp - t)"))
    out = apply_to_test(inv, phi).samples
    tp, t = g.mesh()
    mask = np.tril(np.ones_like(out, dtype=bool), -2)
    assert np.abs(out + np.sin(tp - t))[mask].max() < 0.05


def test_numeric_inverse_residual():
    from starlanczos.discrete import to_discrete

    g = Grid(0.0, 1.0, 101)
    f = StarObject.from_kernel_expr(g, "1 + exp(tp*t)")
    inv = invert_numeric(f)
    D = to_discrete(f, "rectangle")
    assert np.abs((inv.discrete @ D).matrix - np.eye(101)).max() <= 1e-8 / g.h


def test_numeric_inverse_singular():
    g = Grid(0.0, 1.0, 21)
    with pytest.raises(SingularError):
        invert_numeric(StarObject.from_kernel_expr(g, "1 + tp*t"), cond_cap=2.0)
    with pytest.raises(SingularError):
        invert_numeric(StarObject(g, kernel=Kernel.zeros(g)))


def test_numeric_and_closed_form_agree():
    g = Grid(0.0, 1.0, 201)
    f = StarObject.from_kernel_expr(g, "exp(3*tp+t)")
    closed = invert_kernel("exp(3*tp+t)", ["exp(3*tp)"], g)
    num = invert_numeric(f)
    for phi in make_test_kernels(g, POLYNOMIAL_KERNELS):
        a = apply_to_test(closed, phi).samples
        b = apply_to_test(num, phi).samples
        mask = np.tril(np.ones_like(a, dtype=bool), -1)
        assert np.abs(a - b)[mask].max() < 50 * g.h * (1 + np.abs(a).max())


# ---------------------------------------------------------------- resolvent

def test_resolvent_of_zero_is_identity():
    g = Grid(0.0, 1.0, 11)
    r = resolvent(StarObject(g))
    assert r.kernel is None and r.deltas.order == 0


@pytest.mark.parametrize("a", [-1.0, 0.5, 1.0, 2.0])
def test_resolvent_of_constant_kernel(a):
    g = Grid(0.0, 1.0, 401)
    r = resolvent(StarObject.from_kernel_expr(g, f"{a!r}"))
    tp, t = g.mesh()
    assert np.abs(r.kernel.samples - np.tril(a * np.exp(a * (tp - t)))).max() < 1e-4
    assert np.allclose(r.deltas.values(), 1.0)


def test_resolvent_identity():
    g = Grid(0.0, 1.0, 201)
    f = StarObject.from_kernel_expr(g, "sin(tp)*t + 1")
    R = resolvent(f)
    one_minus_f = star_identity(g) - f
    for phi in make_test_kernels(g):
        for prod in (R @ one_minus_f, one_minus_f @ R):
            out = apply_to_test(prod, phi).samples
            assert np.abs(out - phi.samples).max() < 1e-3


def test_resolvent_rejects_delta_parts():
    g = Grid(0.0, 1.0, 11)
    with pytest.raises(ValueError):
        resolvent(StarObject(g, deltas=DeltaSeries(g, [1.0])))
