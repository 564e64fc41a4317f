"""Command-line front end: ``star invert|lanczos|evolve|green|verify``.

Exit codes: 0 success, 1 invalid input, 2 numerical failure (breakdown,
singular system, failed verification). Output files are written through a
temporary file and a rename, and only once the whole computation succeeded.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import core
from . import expr as ex
from .core import Grid, StarObject, star_product
from .discrete import CONDITION_CAP, to_discrete
from .errors import ExprSyntaxError, NumericalError, ProblemError, StarError
from .evolution import ordered_exponential, rk4_reference
from .green import apply_green_operator, green_operator_from_kernel
from .inverse import (
    ANNIHILATION_TOL,
    invert_kernel,
    invert_left_variable,
    invert_numeric,
    invert_polynomial,
    invert_right_variable,
    polynomial_degree,
)
from .lanczos import BETA_MODES, BREAKDOWN_TOL, StarMatrix, run_lanczos, verify_moments
from .serialize import dumps, star_to_json, write_atomic
from .testkernels import inverse_residuals, make_test_kernels
from .verify import run_suite

logger = logging.getLogger("starlanczos")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2
COMMANDS = ("invert", "lanczos", "evolve", "green", "verify")


@dataclass
class ProblemSpec:
    interval: tuple
    n_points: int
    matrix: list = None
    w: list = None
    v: list = None
    lanczos_n: int = None
    beta_mode: str = "numeric"
    outputs: list = field(default_factory=list)
    kernel: str = None
    basis: list = None
    exact: str = None

    def grid(self, n_points=None):
        a, b = self.interval
        return Grid(a, b, n_points or self.n_points)


def _parse_expr(text, path):
    if not isinstance(text, str):
        raise ProblemError(path, "expected an expression string")
    try:
        return ex.parse(text)
    except ExprSyntaxError as exc:
        raise ProblemError(path, str(exc)) from exc


def _number_list(d, key, length=None):
    val = d.get(key)
    if not isinstance(val, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in val):
        raise ProblemError(key, "expected a list of numbers")
    if length is not None and len(val) != length:
        raise ProblemError(key, f"expected {length} entries, found {len(val)}")
    return [float(x) for x in val]


def parse_problem(d):
    """Validate a decoded problem document."""
    if not isinstance(d, dict):
        raise ProblemError("$", "expected a JSON object")
    interval = d.get("interval")
    if not (isinstance(interval, list) and len(interval) == 2 and all(isinstance(x, (int, float)) for x in interval)):
        raise ProblemError("interval", "expected [a, b]")
    a, b = float(interval[0]), float(interval[1])
    if not b > a:
        raise ProblemError("interval", "need b > a")
    n_points = d.get("n_points")
    if not isinstance(n_points, int) or isinstance(n_points, bool) or n_points < 16:
        raise ProblemError("n_points", "expected an integer >= 16")
    spec = ProblemSpec((a, b), n_points)

    if "matrix" in d:
        m = d["matrix"]
        if not isinstance(m, list) or not m or not all(isinstance(r, list) for r in m):
            raise ProblemError("matrix", "expected a list of rows")
        size = len(m)
        for i, row in enumerate(m):
            if len(row) != size:
                raise ProblemError(f"matrix[{i}]", f"expected {size} entries (square matrix)")
            for j, e in enumerate(row):
                parsed = _parse_expr(e, f"matrix[{i}][{j}]")
                if "t" in parsed.free_vars and "tp" in parsed.free_vars:
                    raise ProblemError(f"matrix[{i}][{j}]", "entries must depend on one time only")
        spec.matrix = m
        spec.w = _number_list(d, "w", size)
        spec.v = _number_list(d, "v", size)
        if abs(float(np.dot(spec.w, spec.v)) - 1.0) > 1e-12:
            raise ProblemError("w", "w^H v must equal 1")
        if "lanczos_n" in d:
            n = d["lanczos_n"]
            if not isinstance(n, int) or not 1 <= n <= size:
                raise ProblemError("lanczos_n", f"expected an integer in [1, {size}]")
            spec.lanczos_n = n
    if "beta_mode" in d:
        if d["beta_mode"] not in BETA_MODES:
            raise ProblemError("beta_mode", f"expected one of {list(BETA_MODES)}")
        spec.beta_mode = d["beta_mode"]
    if "outputs" in d:
        if not isinstance(d["outputs"], list) or not all(isinstance(x, str) for x in d["outputs"]):
            raise ProblemError("outputs", "expected a list of names")
        spec.outputs = list(d["outputs"])
    if "kernel" in d:
        _parse_expr(d["kernel"], "kernel")
        spec.kernel = d["kernel"]
    if "basis" in d:
        if not isinstance(d["basis"], list) or not d["basis"]:
            raise ProblemError("basis", "expected a non-empty list of expressions")
        for i, e in enumerate(d["basis"]):
            _parse_expr(e, f"basis[{i}]")
        spec.basis = list(d["basis"])
    if "exact" in d:
        _parse_expr(d["exact"], "exact")
        spec.exact = d["exact"]
    return spec


def load_problem(path):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ProblemError("$", f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ProblemError("$", f"invalid JSON at line {exc.lineno} column {exc.colno}") from exc
    return parse_problem(data)


# ------------------------------------------------------------------ commands

def _require(spec, *names):
    for n in names:
        if getattr(spec, n) is None:
            raise ProblemError(n, "required by this command")


def _closed_form_inverse(f, basis, grid, args):
    if basis:
        return invert_kernel(f, basis, grid, tol=args.tol_annihilator), "separable"
    if "t" not in f.free_vars:
        return invert_left_variable(f, grid), "left-variable"
    if "tp" not in f.free_vars:
        return invert_right_variable(f, grid), "right-variable"
    if polynomial_degree(f) is not None:
        return invert_polynomial(f, grid), "polynomial"
    return None, None


def cmd_invert(spec, args, out):
    _require(spec, "kernel")
    grid = spec.grid(args.grid)
    f = ex.parse(spec.kernel)
    F = StarObject.from_kernel_expr(grid, f)
    inv, method = _closed_form_inverse(f, spec.basis, grid, args)
    phis = make_test_kernels(grid)
    if inv is None:
        inv = invert_numeric(F, rule="trapezoid", cond_cap=args.cond_cap)
        method = "numeric"
        D = to_discrete(F, "trapezoid")
        residual = float(np.abs((inv.discrete @ D).matrix - np.eye(grid.n_points)).max())
        report = {"method": method, "identity_residual": residual}
    else:
        left, right = inverse_residuals(F, inv, phis)
        report = {"method": method, "left_residual": left, "right_residual": right}
    out["inverse.json"] = dumps(star_to_json(inv))
    out["invert_report.json"] = dumps(report)
    return [f"{k}: {v}" for k, v in sorted(report.items())]


def _lanczos(spec, args, grid):
    _require(spec, "matrix")
    A = StarMatrix.from_exprs(grid, spec.matrix)
    mode = args.beta_mode or spec.beta_mode
    T = run_lanczos(A, spec.w, spec.v, spec.lanczos_n, mode, breakdown_tol=args.tol_breakdown, cond_cap=args.cond_cap_lanczos)
    if T.breakdown is not None:
        raise NumericalError(f"breakdown at β_{T.breakdown}")
    return A, T


def cmd_lanczos(spec, args, out):
    grid = spec.grid(args.grid)
    A, T = _lanczos(spec, args, grid)
    rep = verify_moments(A, spec.w, spec.v, T)
    out["tridiagonal.json"] = dumps(T.to_json())
    out["moments.csv"] = rep.to_csv()
    return [f"n = {T.n}, beta_mode = {T.beta_mode}", f"max relative moment discrepancy (j <= 2n-1): {rep.max_rel_err():.3e}"]


def cmd_evolve(spec, args, out):
    grid = spec.grid(args.grid)
    A, T = _lanczos(spec, args, grid)
    res = ordered_exponential(T)
    res.reference = rk4_reference(spec.matrix, spec.w, spec.v, grid, substeps=args.substeps)
    out["evolution.csv"] = res.to_csv()
    lines = [f"max |u - u_rk4| = {res.max_error():.3e}"]
    if spec.exact:
        exact = np.broadcast_to(ex.evaluate(ex.as_left_variable(ex.parse(spec.exact)), grid.nodes, 0.0), grid.nodes.shape)
        lines.append(f"max |u - exact| = {float(np.max(np.abs(res.u_samples - exact))):.3e}")
    return lines


def cmd_green(spec, args, out):
    _require(spec, "kernel", "basis")
    grid = spec.grid(args.grid)
    D = green_operator_from_kernel(spec.kernel, spec.basis, grid, tol=args.tol_annihilator)
    G = StarObject.from_kernel_expr(grid, spec.kernel)
    err = 0.0
    for phi in make_test_kernels(grid):
        got = apply_green_operator(D, star_product(G, StarObject(grid, kernel=phi)).kernel)
        err = max(err, float(np.abs(got.samples - phi.samples).max()))
    data = D.to_json()
    data["fundamental_solution_residual"] = err
    out["green.json"] = dumps(data)
    return [f"order k = {D.order}", f"max |D_G(G * phi) - phi| = {err:.3e}"]


def cmd_verify(spec, args, out):
    results = run_suite(args.grid or 201)
    lines = [f"[{group}] {c.line()}" for group, c in results]
    failed = [c for _, c in results if not c.passed]
    out["verify.txt"] = "\n".join(lines) + "\n"
    if failed:
        raise _VerifyFailed(lines, len(failed))
    return lines


class _VerifyFailed(Exception):
    def __init__(self, lines, count):
        super().__init__(f"{count} verification check(s) failed")
        self.lines = lines


HANDLERS = {
    "invert": cmd_invert,
    "lanczos": cmd_lanczos,
    "evolve": cmd_evolve,
    "green": cmd_green,
    "verify": cmd_verify,
}


def build_parser():
    p = argparse.ArgumentParser(prog="star", description="Time-ordered exponentials and inverses in the product algebra.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--problem", help="problem file (JSON); not needed for verify")
    p.add_argument("--out", default=".", help="output directory (default: current directory)")
    p.add_argument("--grid", type=int, help="override the number of grid points")
    p.add_argument("--beta-mode", choices=BETA_MODES, help="override the beta inversion mode")
    p.add_argument("--tol-breakdown", type=float, default=BREAKDOWN_TOL, help="relative breakdown threshold (default %(default)g)")
    p.add_argument("--tol-annihilator", type=float, default=ANNIHILATION_TOL, help="annihilation residual tolerance (default %(default)g)")
    p.add_argument("--cond-cap", type=float, default=CONDITION_CAP, help="condition cap for numeric inverses (default %(default)g)")
    p.add_argument("--cond-cap-lanczos", type=float, default=None, help="condition cap for beta inverses (default: log only)")
    p.add_argument("--max-delta-order", type=int, default=core.MAX_DELTA_ORDER, help="delta order cap (default %(default)d)")
    p.add_argument("--substeps", type=int, default=10, help="RK4 substeps per grid step (default %(default)d)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _thread_limit():
    value = os.environ.get("STAR_THREADS")
    if not value:
        return None
    try:
        n = int(value)
    except ValueError:
        raise ProblemError("STAR_THREADS", "expected an integer") from None
    if n < 1:
        raise ProblemError("STAR_THREADS", "expected a positive integer")
    return n


def run(argv=None, stdout=None, stderr=None):
    """Run the CLI; returns the exit code."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s", stream=stderr)
    core.MAX_DELTA_ORDER = args.max_delta_order
    out = {}
    try:
        threads = _thread_limit()
        if args.command == "verify":
            spec = None
        else:
            if not args.problem:
                raise ProblemError("--problem", "required for this command")
            spec = load_problem(args.problem)
        if threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=threads):
                lines = HANDLERS[args.command](spec, args, out)
        else:
            lines = HANDLERS[args.command](spec, args, out)
    except ProblemError as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_INPUT
    except _VerifyFailed as exc:
        for line in exc.lines:
            print(line, file=stdout)
        print(f"error: {exc}", file=stderr)
        return EXIT_NUMERICAL
    except (NumericalError, StarError) as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_INPUT
    for name in sorted(out):
        write_atomic(os.path.join(args.out, name), out[name])
    for line in lines:
        print(line, file=stdout)
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
