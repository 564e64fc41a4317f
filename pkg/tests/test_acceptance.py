"""One test per acceptance criterion, at the stated sizes and tolerances.

Each test records a single PASS/FAIL line (shown in the pytest terminal
summary) before asserting.
"""

import io
import os

import numpy as np

from starlanczos.cli import EXIT_NUMERICAL, run
from starlanczos.core import Grid, Kernel, StarObject, apply_to_test, star_product
from starlanczos.evolution import ordered_exponential, rk4_reference
from starlanczos.green import apply_green_operator, green_operator_from_kernel
from starlanczos.inverse import Annihilator, invert_left_variable, invert_polynomial, invert_separable, resolvent
from starlanczos.lanczos import StarMatrix, run_lanczos, verify_moments
from starlanczos.testkernels import POLYNOMIAL_KERNELS, inverse_residuals, make_test_kernels

NON_COMMUTING = [["0", "1"], ["t", "0"]]
E1 = [1.0, 0.0]


def _evolve(exprs, w, v, n_points, n=None, mode="numeric"):
    g = Grid(0.0, 1.0, n_points)
    T = run_lanczos(StarMatrix.from_exprs(g, exprs), w, v, n, beta_mode=mode)
    assert T.breakdown is None
    return g, ordered_exponential(T).u_samples


def test_criterion_1_theta_inverse(acceptance_line):
    errs = []
    for N in (201, 401):
        # sampled phi, so the t'-derivatives come from second-order differences
        g = Grid(0.0, 1.0, N, fd_order=2)
        d = invert_left_variable("1", g)
        tp, t = g.mesh()
        out = apply_to_test(d @ d, Kernel(g, np.sin(tp - t))).samples
        errs.append(float(np.abs(np.tril(out + np.sin(tp - t))).max()))
    ratio = errs[0] / errs[1]
    ok = errs[0] <= 5e-3 and ratio >= 3.5
    acceptance_line(1, ok, f"max error {errs[0]:.3e} at N=201 (<= 5e-3), ratio {ratio:.2f} on doubling (>= 3.5)")
    assert ok


def test_criterion_2_polynomial_inverse(acceptance_line):
    g = Grid(1.0, 2.0, 201)
    inv, det = invert_polynomial("tp - 2*t", g, return_details=True)
    _, t = g.mesh()
    x_err = float(np.abs(np.tril(det.solution.x - 1 / t)).max())
    p = StarObject.from_kernel_expr(g, "tp - 2*t")
    left, _ = inverse_residuals(p, inv, make_test_kernels(g, POLYNOMIAL_KERNELS))
    ok = left <= 1e-3 and x_err <= 1e-8
    acceptance_line(2, ok, f"(p^-1 * p) * phi - phi residual {left:.3e} (<= 1e-3), x~ vs 1/t {x_err:.3e} (<= 1e-8)")
    assert ok


def test_criterion_3_separable_inverses(acceptance_line):
    parts = []
    # rational kernel: t'^2 + t/t' is the kernel whose h~0 = 3t/2, h~1 = (t^4 + t^2)/2 and x~ are printed
    g = Grid(1.0, 2.0, 201)
    f4 = "tp^2 + t/tp"
    inv4, det = invert_separable(f4, Annihilator(["1", "0", "-tp^2/2"]), g, return_details=True)
    tp, t = g.mesh()
    closed = 2 * tp * (t ** 2 + 1) ** 1.5 / ((tp ** 2 + 1) ** 2.5 * t ** 3)
    parts.append(("rational x~", float(np.abs(np.tril(det.solution.x - closed)).max()), 1e-6))
    parts.append(("rational action", max(inverse_residuals(StarObject.from_kernel_expr(g, f4), inv4, make_test_kernels(g))), 1e-3))

    # trigonometric kernel, printed closed form sin t'/(cos^2 t' t') delta - 1/(cos t' t') delta'
    g = Grid(0.5, 1.25, 201)
    x = g.nodes
    inv5 = invert_separable("cos(tp)*t", Annihilator(["1", "0", "1"]), g)
    parts.append(("trig delta coefficient", float(np.abs(inv5.deltas[0].values - np.sin(x) / (np.cos(x) ** 2 * x)).max()), 1e-8))
    parts.append(("trig delta' coefficient (printed sign)", float(np.abs(inv5.deltas[1].values + 1 / (np.cos(x) * x)).max()), 1e-8))
    parts.append(("trig action", max(inverse_residuals(StarObject.from_kernel_expr(g, "cos(tp)*t"), inv5, make_test_kernels(g))), 1e-3))

    # exponential kernel, printed closed form -3 exp(-4t') (delta - delta'/3)
    g = Grid(0.0, 1.0, 201)
    x = g.nodes
    inv6 = invert_separable("exp(3*tp+t)", Annihilator(["1", "-1/3"]), g)
    parts.append(("exp delta coefficient", float(np.abs(inv6.deltas[0].values + 3 * np.exp(-4 * x)).max()), 1e-8))
    parts.append(("exp delta' coefficient", float(np.abs(inv6.deltas[1].values - np.exp(-4 * x)).max()), 1e-8))
    parts.append(("exp action", max(inverse_residuals(StarObject.from_kernel_expr(g, "exp(3*tp+t)"), inv6, make_test_kernels(g))), 1e-3))

    failed = [f"{name} {val:.3e} > {tol:.0e}" for name, val, tol in parts if not val <= tol]
    worst = max(val / tol for _, val, tol in parts)
    detail = "all sub-checks within tolerance" if not failed else "; ".join(failed)
    acceptance_line(3, not failed, f"{len(parts) - len(failed)}/{len(parts)} sub-checks pass (worst value/tolerance {worst:.2e}); {detail}")
    assert not failed


def test_criterion_3_trig_inverse_with_corrected_sign():
    """The computed delta' coefficient is +1/(cos t' t'); with it f^-1 * f = delta holds exactly in the series algebra."""
    g = Grid(0.5, 1.25, 201)
    x = g.nodes
    inv = invert_separable("cos(tp)*t", Annihilator(["1", "0", "1"]), g)
    assert np.abs(inv.deltas[1].values - 1 / (np.cos(x) * x)).max() <= 1e-8
    r = inv @ StarObject.from_kernel_expr(g, "cos(tp)*t")
    assert r.kernel.max_abs() <= 1e-12
    assert np.abs(r.deltas.values() - 1.0).max() <= 1e-12
    printed = StarObject.from_deltas(g, ["sin(tp)/(cos(tp)^2*tp)", "-1/(cos(tp)*tp)"])
    assert (printed @ StarObject.from_kernel_expr(g, "cos(tp)*t")).kernel.max_abs() > 1.0


def _random_matrix():
    rng = np.random.default_rng(0)
    fs = ["sin(t)", "cos(t)", "t", "t^2"]
    return [[f"{rng.uniform(-1, 1):.3f} + {rng.uniform(-1, 1):.3f}*{fs[rng.integers(4)]}" for _ in range(3)] for _ in range(3)]


def test_criterion_4_moment_matching(acceptance_line):
    exprs = _random_matrix()
    w = v = [1.0, 0.0, 0.0]
    reports = {}
    for N in (401, 801):
        g = Grid(0.0, 1.0, N)
        A = StarMatrix.from_exprs(g, exprs)
        T = run_lanczos(A, w, v, n=3)
        assert T.breakdown is None
        reports[N] = verify_moments(A, w, v, T, eval_at=(1.0, 0.0))
    coarse = [r.rel_err for r in reports[401].rows]
    fine = [r.rel_err for r in reports[801].rows]
    # the improvement test is meaningful only above the rounding floor
    floor = 1e-12
    improving = [j for j in range(6) if coarse[j] > floor]
    ok = max(coarse) <= 1e-2 and all(fine[j] <= coarse[j] / 2 for j in improving)
    ratios = ", ".join(f"j={j}: {coarse[j] / fine[j]:.2f}x" for j in improving)
    acceptance_line(4, ok, f"max relative discrepancy {max(coarse):.3e} at N=401 (<= 1e-2); improvement at N=801 {ratios}")
    assert ok


def test_criterion_5_commuting_evolution(acceptance_line):
    g, u = _evolve([["cos(t)"]], [1.0], [1.0], 401)
    e_scalar = float(np.abs(u - np.exp(np.sin(g.nodes))).max())
    g, u = _evolve([["0", "1"], ["-1", "0"]], E1, E1, 401, n=2)
    e_rot = float(np.abs(u - np.cos(g.nodes)).max())
    ok = e_scalar <= 1e-3 and e_rot <= 1e-3
    acceptance_line(5, ok, f"cos(t) scalar {e_scalar:.3e}, rotation {e_rot:.3e} (<= 1e-3)")
    assert ok


def test_criterion_6_non_commuting(acceptance_line):
    errs = []
    for N in (401, 801):
        g, u = _evolve(NON_COMMUTING, E1, E1, N, n=2)
        errs.append(float(np.abs(u - rk4_reference(NON_COMMUTING, E1, E1, g)).max()))
    ok = errs[0] <= 5e-3 and errs[1] <= errs[0] / 2
    acceptance_line(6, ok, f"max |u - RK4| {errs[0]:.3e} at N=401 (<= 5e-3), {errs[1]:.3e} at N=801 (ratio {errs[0] / errs[1]:.2f}, >= 2)")
    assert ok


def test_criterion_7_resolvent_oracle(acceptance_line):
    g = Grid(0.0, 1.0, 401)
    tp, t = g.mesh()
    errs = {}
    for a in (-1.0, 0.5, 2.0):
        R = resolvent(StarObject.from_kernel_expr(g, f"{a!r}"))
        errs[a] = float(np.abs(R.kernel.samples - np.tril(a * np.exp(a * (tp - t)))).max())
        assert np.allclose(R.deltas.values(), 1.0)
    ok = max(errs.values()) <= 1e-4
    acceptance_line(7, ok, "kernel errors " + ", ".join(f"a={a}: {e:.3e}" for a, e in errs.items()) + " (<= 1e-4)")
    assert ok


def test_criterion_8_breakdown(acceptance_line, tmp_path):
    problem = tmp_path / "nilpotent.json"
    problem.write_text('{"interval": [0, 1], "n_points": 101, "matrix": [["0", "1"], ["0", "0"]], "w": [1, 0], "v": [1, 0]}')
    out_dir = tmp_path / "out"
    err = io.StringIO()
    code = run(["lanczos", "--problem", str(problem), "--out", str(out_dir)], stdout=io.StringIO(), stderr=err)
    g = Grid(0.0, 1.0, 101)
    T = run_lanczos(StarMatrix.from_exprs(g, [["0", "1"], ["0", "0"]]), E1, E1)
    written = os.listdir(out_dir) if out_dir.exists() else []
    ok = code == EXIT_NUMERICAL and "breakdown at β_1" in err.getvalue() and not written and T.breakdown == 1 and T.n == 1
    acceptance_line(8, ok, f"exit code {code}, message {err.getvalue().strip()!r}, files written {written}, T.n = {T.n}")
    assert ok


def test_criterion_9_green_operator(acceptance_line):
    g = Grid(0.0, 1.0, 201)
    D = green_operator_from_kernel("exp(3*tp+t)", ["exp(3*tp)"], g)
    G = StarObject.from_kernel_expr(g, "exp(3*tp+t)")
    err = 0.0
    for phi in make_test_kernels(g):
        got = apply_green_operator(D, star_product(G, StarObject(g, kernel=phi)).kernel)
        err = max(err, float(np.abs(got.samples - phi.samples).max()))
    ok = err <= 1e-3
    acceptance_line(9, ok, f"max |D_G(G * phi) - phi| {err:.3e} over 10 test kernels (<= 1e-3)")
    assert ok


def test_criterion_10_mode_cross_check(acceptance_line):
    _, u_num = _evolve(NON_COMMUTING, E1, E1, 401, n=2, mode="numeric")
    _, u_res = _evolve(NON_COMMUTING, E1, E1, 401, n=2, mode="resolvent")
    diff = float(np.abs(u_num - u_res).max())
    ok = diff <= 2e-3
    acceptance_line(10, ok, f"max per-node difference numeric vs resolvent {diff:.3e} (<= 2e-3)")
    assert ok
