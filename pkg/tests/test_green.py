import numpy as np
import pytest

from starlanczos import expr as ex
from starlanczos.core import Grid, Kernel, StarObject, apply_to_test, star_product
from starlanczos.discrete import to_discrete
from starlanczos.green import GreenOperator, apply_green_operator, green_operator_from_kernel, green_operator_from_star
from starlanczos.inverse import invert_numeric
from starlanczos.testkernels import make_test_kernels


def test_theta_gives_first_derivative():
    g = Grid(0.0, 1.0, 101)
    D = green_operator_from_kernel("1", ["1"], g)
    assert D.r_minus1 is None
    assert D.order == 1
    assert np.array_equal(D.r.values(), [[0.0] * 101, [1.0] * 101])
    out = apply_green_operator(D, "tp - t").samples
    assert np.abs(out - np.tril(np.ones((101, 101)))).max() < 1e-13


def test_exponential_kernel_coefficients():
    g = Grid(0.0, 1.0, 201)
    D = green_operator_from_kernel("exp(3*tp+t)", ["exp(3*tp)"], g)
    x = g.nodes
    assert D.r_minus1 is None
    assert np.abs(D.r[0].values + 3 * np.exp(-4 * x)).max() < 1e-12
    assert np.abs(D.r[1].values - np.exp(-4 * x)).max() < 1e-12


@pytest.mark.parametrize("basis", [["cos(tp)"], ["cos(tp)", "sin(tp)"]])
def test_trig_kernel_coefficients(basis):
    g = Grid(0.5, 1.25, 201)
    D = green_operator_from_kernel("cos(tp)*t", basis, g)
    x = g.nodes
    assert np.abs(D.r[0].values - np.sin(x) / (np.cos(x) ** 2 * x)).max() < 1e-8
    assert np.abs(D.r[1].values - 1 / (np.cos(x) * x)).max() < 1e-8


@pytest.mark.parametrize(
    "G, basis, interval",
    [
        ("exp(3*tp+t)", ["exp(3*tp)"], (0.0, 1.0)),
        ("cos(tp)*t", ["cos(tp)"], (0.5, 1.25)),
        ("tp - 2*t", ["1", "tp"], (1.0, 2.0)),
        ("tp^2 + t/tp", ["tp^2", "1/tp"], (1.0, 2.0)),
    ],
)
def test_fundamental_solution_property(G, basis, interval):
    g = Grid(*interval, 201)
    D = green_operator_from_kernel(G, basis, g)
    Gs = StarObject.from_kernel_expr(g, G)
    for phi in make_test_kernels(g):
        got = apply_green_operator(D, star_product(Gs, StarObject(g, kernel=phi)).kernel)
        assert np.abs(got.samples - phi.samples).max() < 1e-3


def test_action_matches_the_underlying_object():
    g = Grid(0.0, 1.0, 101)
    D = green_operator_from_kernel("exp(3*tp+t)", ["exp(3*tp)"], g)
    for phi in make_test_kernels(g)[:4]:
        assert np.array_equal(apply_green_operator(D, phi).samples, apply_to_test(D.as_star(), phi).samples)


def test_acting_on_the_kernel_itself_gives_a_delta():
    res = []
    for N in (101, 201, 401):
        g = Grid(0.0, 1.0, N)
        D = green_operator_from_kernel("exp(3*tp+t)", ["exp(3*tp)"], g)
        # the kernel part of D * G vanishes, leaving the delta
        assert apply_green_operator(D, "exp(3*tp+t)").max_abs() < 1e-12
        M = (to_discrete(D.as_star()) @ to_discrete(StarObject.from_kernel_expr(g, "exp(3*tp+t)"))).matrix
        res.append(np.abs(M - np.eye(N)).max())
        assert res[-1] <= 4 * g.h
    # first order: two doublings divide the residual by about four
    assert res[2] < 0.3 * res[0]


def test_json_form():
    g = Grid(1.0, 2.0, 21)
    D = green_operator_from_kernel("tp - 2*t", ["1", "tp"], g)
    data = D.to_json()
    assert data["order"] == 1
    coeff = ex.parse(data["r"][1]["expr"])
    assert np.allclose(ex.evaluate(coeff, g.nodes, 0.0), -1 / g.nodes)
    assert data["r_minus1_csv"].count("\n") == 21


def test_numeric_inverse_is_rejected():
    g = Grid(0.0, 1.0, 21)
    with pytest.raises(ValueError):
        green_operator_from_star(invert_numeric(Kernel.from_expr(g, "1 + tp")))
    assert isinstance(green_operator_from_star(StarObject.from_deltas(g, [1.0])), GreenOperator)
