"""Finite differences on uniform grids, including triangular kernel samples."""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def fd_weights(offsets, d):
    """Weights w with sum_k w_k f(x + o_k h) ~ h^d f^(d)(x) for integer offsets."""
    offsets = np.asarray(offsets, dtype=float)
    s = len(offsets)
    V = np.vander(offsets, s, increasing=True).T
    rhs = np.zeros(s)
    rhs[d] = float(np.prod(np.arange(1, d + 1)))
    return tuple(np.linalg.solve(V, rhs))


def _window_start(p, n, s):
    return min(max(p - (s - 1) // 2, 0), n - s)


def derivative_1d(values, h, d, order=4):
    """d-th derivative of equally spaced samples, accuracy ``order``.

    Centered stencils inside, one-sided windows near both ends.
    """
    values = np.asarray(values, dtype=float)
    if d == 0:
        return values.copy()
    n = len(values)
    s = d + order
    if n < s:
        raise ValueError(f"need at least {s} samples for a derivative of order {d}")
    out = np.empty(n)
    half = (s - 1) // 2
    w = fd_weights(tuple(range(-half, s - half)), d)
    lo, hi = half, n - (s - half) + 1
    if hi > lo:
        acc = np.zeros(hi - lo)
        for k, wk in enumerate(w):
            acc += wk * values[lo - half + k:hi - half + k]
        out[lo:hi] = acc
    for p in list(range(0, lo)) + list(range(max(hi, lo), n)):
        start = _window_start(p, n, s)
        wp = fd_weights(tuple(range(start - p, start - p + s)), d)
        out[p] = np.dot(wp, values[start:start + s])
    return out / h ** d


def _extrapolation_weights(points):
    # Lagrange weights for evaluating at 0 from values at the given abscissae
    points = np.asarray(points, dtype=float)
    w = np.ones(len(points))
    for i, xi in enumerate(points):
        for j, xj in enumerate(points):
            if i != j:
                w[i] *= (0.0 - xj) / (xi - xj)
    return w


def lower_axis0_derivative(F, h, d, order=4):
    """d-th derivative along axis 0 (the left time) of lower-triangular samples.

    Column j holds samples at rows j..N-1. Columns long enough get a direct
    stencil; the last few short columns are filled by polynomial
    extrapolation along the diagonals i - j = const.
    """
    F = np.asarray(F, dtype=float)
    if d == 0:
        return np.tril(F)
    N = F.shape[0]
    s = d + order
    if N < s + order + 1:
        raise ValueError(f"grid too small for a derivative of order {d}")
    out = np.zeros_like(F)
    half = (s - 1) // 2
    rows = np.arange(N)[:, None]
    cols = np.arange(N)[None, :]
    # interior: centered window fits inside the column
    w = fd_weights(tuple(range(-half, s - half)), d)
    acc = np.zeros_like(F)
    for k, wk in zip(range(-half, s - half), w):
        shifted = np.zeros_like(F)
        if k >= 0:
            shifted[:N - k] = F[k:]
        else:
            shifted[-k:] = F[:N + k]
        acc += wk * shifted
    interior = (rows - half >= cols) & (rows + (s - 1 - half) <= N - 1)
    out[interior] = acc[interior]
    # near the diagonal: window starts at row j
    for p in range(half):
        wp = fd_weights(tuple(range(-p, s - p)), d)
        ncol = N - s + 1
        if ncol <= 0:
            continue
        val = np.zeros(ncol)
        for k, wk in enumerate(wp):
            val += wk * np.diagonal(F, -k)[:ncol]
        jj = np.arange(ncol)
        out[jj + p, jj] = val
    # near the bottom: window ends at row N-1
    start = N - s
    for i in range(N - s + half + 1, N):
        ncol = min(N - s, i - half) + 1
        if ncol <= 0:
            continue
        wq = fd_weights(tuple(range(start - i, start - i + s)), d)
        out[i, :ncol] = np.asarray(wq) @ F[start:N, :ncol]
    # short columns: extrapolate along diagonals from longer columns
    first_short = N - s + 1
    q = order + 1
    for j in range(first_short, N):
        r0 = j - (N - s)
        rs = np.arange(r0, r0 + q)
        if j - rs[-1] < 0:
            raise ValueError("grid too small for diagonal extrapolation")
        we = _extrapolation_weights(rs)
        for i in range(j, N):
            out[i, j] = np.dot(we, out[i - rs, j - rs])
    return np.tril(out) / h ** d


def lower_axis1_derivative(F, h, d, order=4):
    """d-th derivative along axis 1 (the right time) of lower-triangular samples."""
    F = np.asarray(F, dtype=float)
    G = F[::-1, ::-1].T
    D = lower_axis0_derivative(G, h, d, order)
    return (-1) ** d * D.T[::-1, ::-1]
