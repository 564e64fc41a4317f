import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from starlanczos.core import Grid, StarObject
from starlanczos.discrete import identity, to_discrete
from starlanczos.evolution import EvolutionResult, ordered_exponential, pathsum_resolvent, rk4_reference
from starlanczos.lanczos import StarMatrix, TridiagonalStar, run_lanczos


def _pipeline(exprs, w, v, grid, n=None, mode="numeric"):
    T = run_lanczos(StarMatrix.from_exprs(grid, exprs), w, v, n, beta_mode=mode)
    return ordered_exponential(T).u_samples


def test_pathsum_scalar_constant():
    g = Grid(0.0, 1.0, 401)
    a = 0.7
    T = TridiagonalStar(g, [StarObject.from_kernel_expr(g, f"{a!r}")], [])
    R = pathsum_resolvent(T).discrete
    k = R.kernel_part().samples
    tp, t = g.mesh()
    off = np.tril(np.ones_like(k, dtype=bool), -1)
    assert np.abs(k - a * np.exp(a * (tp - t)))[off].max() < 1e-4


def test_pathsum_of_zero_is_identity():
    g = Grid(0.0, 1.0, 21)
    T = TridiagonalStar(g, [StarObject(g)], [])
    assert np.array_equal(pathsum_resolvent(T).discrete.matrix, np.eye(21))


def test_pathsum_two_levels_matches_block_solve():
    g = Grid(0.0, 1.0, 101)
    N = g.n_points
    zero = StarObject(g)
    beta = StarObject.from_kernel_expr(g, "tp - t")
    T = TridiagonalStar(g, [zero, zero], [beta])
    G = pathsum_resolvent(T).discrete.matrix
    # (Id 1_* - T)^-1 with T = [[0, 1_*], [beta, 0]], top-left block
    I = np.eye(N)
    B = to_discrete(beta).matrix
    big = np.block([[I, -I], [-B, I]])
    top_left = np.linalg.solve(big, np.vstack([I, np.zeros((N, N))]))[:N]
    assert np.abs(G - top_left).max() < 1e-10 * np.abs(top_left).max()


def test_zero_generator_gives_one():
    g = Grid(0.0, 1.0, 51)
    u = _pipeline([["0"]], [1.0], [1.0], g)
    assert np.array_equal(u, np.ones(51))
    assert np.array_equal(rk4_reference([["0"]], [1.0], [1.0], g), np.ones(51))


@pytest.mark.parametrize("a", [-1.0, 0.5, 2.0])
def test_scalar_constant_generator(a):
    g = Grid(0.0, 1.0, 401)
    u = _pipeline([[f"{a!r}"]], [1.0], [1.0], g)
    assert u[0] == 1.0
    assert np.abs(u - np.exp(a * g.nodes)).max() < 1e-4 * np.exp(max(a, 0))


def test_scalar_cosine_generator():
    g = Grid(0.0, 1.0, 401)
    u = _pipeline([["cos(t)"]], [1.0], [1.0], g)
    assert np.abs(u - np.exp(np.sin(g.nodes))).max() < 1e-3


def test_rk4_rotation():
    g = Grid(0.5, 1.5, 101)
    u = rk4_reference([["0", "1"], ["-1", "0"]], [1.0, 0.0], [1.0, 0.0], g)
    assert np.abs(u - np.cos(g.nodes - 0.5)).max() < 1e-10


def test_rk4_validation():
    g = Grid(0.0, 1.0, 11)
    with pytest.raises(ValueError):
        rk4_reference([["0"]], [1.0], [1.0], g, substeps=0)
    with pytest.raises(ValueError):
        rk4_reference([["0", "1"], ["1", "0"]], [1.0], [1.0], g)


def test_rotation_through_full_pipeline():
    g = Grid(0.0, 1.0, 401)
    u = _pipeline([["0", "1"], ["-1", "0"]], [1.0, 0.0], [1.0, 0.0], g)
    assert np.abs(u - np.cos(g.nodes)).max() < 1e-3


@given(st.floats(0.2, 2.0), st.sampled_from(["cos(t)", "1 + t", "exp(-t)"]))
@settings(max_examples=6, deadline=None)
def test_commuting_family(scale, gfun):
    """A(t) = g(t) M gives w^H exp(M int g) v; with M = [[0, s], [s, 0]], the (1,1) entry is cosh(s G)."""
    grid = Grid(0.0, 1.0, 201)
    exprs = [["0", f"{scale!r}*({gfun})"], [f"{scale!r}*({gfun})", "0"]]
    u = _pipeline(exprs, [1.0, 0.0], [1.0, 0.0], grid)
    x = grid.nodes
    G = {"cos(t)": np.sin(x), "1 + t": x + x ** 2 / 2, "exp(-t)": 1 - np.exp(-x)}[gfun]
    assert np.abs(u - np.cosh(scale * G)).max() < 5e-3


def test_non_commuting_convergence():
    exprs = [["0", "1"], ["t", "0"]]
    errs = []
    for N in (101, 201, 401):
        g = Grid(0.0, 1.0, N)
        u = _pipeline(exprs, [1.0, 0.0], [1.0, 0.0], g)
        errs.append(np.abs(u - rk4_reference(exprs, [1.0, 0.0], [1.0, 0.0], g)).max())
    assert errs[0] < 5e-3
    assert errs[1] <= 0.5 * errs[0] and errs[2] <= 0.5 * errs[1]


def test_exact_at_full_dimension_for_random_matrix():
    rng = np.random.default_rng(7)
    exprs = [[f"{rng.uniform(-1, 1):.3f} + {rng.uniform(-1, 1):.3f}*sin(t)" for _ in range(2)] for _ in range(2)]
    g = Grid(0.0, 1.0, 201)
    u = _pipeline(exprs, [1.0, 0.0], [1.0, 0.0], g)
    ref = rk4_reference(exprs, [1.0, 0.0], [1.0, 0.0], g)
    assert np.abs(u - ref).max() < 1e-3


def test_start_must_be_left_end():
    g = Grid(0.0, 1.0, 21)
    T = run_lanczos(StarMatrix.from_exprs(g, [["1"]]), [1.0], [1.0])
    with pytest.raises(ValueError):
        ordered_exponential(T, a=0.5)


def test_evolution_csv():
    r = EvolutionResult(np.array([0.0, 0.5]), np.array([1.0, 2.0]), reference=np.array([1.0, 2.5]))
    lines = r.to_csv().splitlines()
    assert lines[0] == "t,u,u_ref,abs_err"
    assert lines[2] == "0.5,2.0,2.5,0.5"
    assert r.max_error() == 0.5
    assert EvolutionResult(np.zeros(1), np.ones(1)).max_error() is None
