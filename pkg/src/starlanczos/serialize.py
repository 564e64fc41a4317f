"""CSV and JSON forms of kernels and star objects.

Kernels are written as their lower triangle in row-major order, one row of
the triangle per CSV line. The JSON envelope carries the grid, the kernel
(samples, or source expression text when there is one) and the delta
coefficients (expression text when symbolic, samples otherwise).
"""

import csv
import io
import json
import os
import tempfile

import numpy as np

from . import expr as ex
from .core import Coeff, DeltaSeries, Grid, Kernel, StarObject
from .discrete import to_discrete


def _num(x):
    x = float(x)
    return repr(x) if np.isfinite(x) else "nan"


def kernel_to_csv(kernel):
    """Row i holds samples (i, 0..i)."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    S = kernel.samples
    for i in range(len(S)):
        wr.writerow([_num(x) for x in S[i, : i + 1]])
    return buf.getvalue()


def kernel_from_csv(text, grid):
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    N = grid.n_points
    if len(rows) != N:
        raise ValueError(f"expected {N} rows, found {len(rows)}")
    S = np.zeros((N, N))
    for i, r in enumerate(rows):
        if len(r) != i + 1:
            raise ValueError(f"row {i} has {len(r)} values, expected {i + 1}")
        S[i, : i + 1] = [float(x) for x in r]
    return Kernel(grid, S)


def grid_to_dict(grid):
    return {"a": grid.a, "b": grid.b, "n_points": grid.n_points, "fd_order": grid.fd_order}


def grid_from_dict(d):
    return Grid(float(d["a"]), float(d["b"]), int(d["n_points"]), int(d.get("fd_order", 4)))


def _values(v):
    return [float(x) if np.isfinite(x) else None for x in v]


def coeff_to_json(c):
    if c.symbolic:
        return {"expr": ex.to_text(c.expr)}
    return {"samples": _values(c.values)}


def coeff_from_json(d, grid):
    if "expr" in d:
        return Coeff(grid, expr=ex.parse(d["expr"]))
    return Coeff(grid, values=np.array([np.nan if x is None else x for x in d["samples"]], dtype=float))


def kernel_to_json(kernel):
    out = {}
    if kernel.source is not None:
        out["expr"] = ex.to_text(kernel.source)
    tri = kernel.samples[np.tril_indices(kernel.grid.n_points)]
    out["lower_triangle"] = _values(tri)
    return out


def kernel_from_json(d, grid):
    if "expr" in d:
        return Kernel.from_expr(grid, ex.parse(d["expr"]))
    N = grid.n_points
    S = np.zeros((N, N))
    S[np.tril_indices(N)] = [np.nan if x is None else x for x in d["lower_triangle"]]
    return Kernel(grid, S)


def star_to_json(obj):
    """JSON-ready dict for a StarObject; discrete objects are written as a read-back kernel."""
    out = {"grid": grid_to_dict(obj.grid)}
    if obj.discrete is not None:
        D = to_discrete(obj, obj.discrete.rule)
        out["discrete"] = {
            "rule": D.rule,
            "valid_from": D.valid_from,
            "matrix_lower_triangle": _values(D.matrix[np.tril_indices(obj.grid.n_points)]),
        }
        return out
    out["kernel"] = kernel_to_json(obj.kernel) if obj.kernel is not None else None
    out["deltas"] = [coeff_to_json(c) for c in obj.delta_coeffs()]
    return out


def star_from_json(d):
    from .discrete import DiscreteStar

    grid = grid_from_dict(d["grid"])
    if "discrete" in d:
        dd = d["discrete"]
        N = grid.n_points
        M = np.zeros((N, N))
        M[np.tril_indices(N)] = [np.nan if x is None else x for x in dd["matrix_lower_triangle"]]
        return StarObject(grid, discrete=DiscreteStar(grid, M, dd["rule"], dd["valid_from"]))
    kernel = kernel_from_json(d["kernel"], grid) if d.get("kernel") else None
    coeffs = [coeff_from_json(c, grid) for c in d.get("deltas", [])]
    return StarObject(grid, kernel=kernel, deltas=DeltaSeries(grid, coeffs) if coeffs else None)


def dumps(data):
    """Deterministic JSON text."""
    return json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_atomic(path, text):
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
