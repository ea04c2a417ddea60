"""Runtime scaling of direct versus sliced FGW.

Both solvers run on pairs of random ``N x M`` clouds for each ``N``; the
log-log slope of runtime against ``N`` is fitted by least squares.  The
direct solver runs one Sinkhorn sweep per outer step, so its cost is
``J`` linearizations each dominated by the ``N^3`` product
``D_p T D_q^T``.  Sliced FGW costs ``L`` projections, sorts and ``O(N)``
slice evaluations.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .data_io import rng_stream
from .errors import InvalidInputError
from .ot_core import FgwSolverOpts, empirical_fgw
from .sliced_ot import sample_projections, sliced_fgw

__all__ = ["BenchRow", "scaling_bench", "loglog_slope", "DEFAULT_SIZES"]

DEFAULT_SIZES = (64, 128, 256, 512)


@dataclass(frozen=True)
class BenchRow:
    N: int
    direct_seconds: float
    sliced_seconds: float


def loglog_slope(sizes, seconds):
    """Least-squares slope of ``log(seconds)`` against ``log(sizes)``."""
    sizes = np.asarray(sizes, dtype=np.float64)
    seconds = np.asarray(seconds, dtype=np.float64)
    if sizes.size < 2 or np.any(sizes <= 0) or np.any(seconds <= 0):
        raise InvalidInputError("need at least two positive sizes and runtimes")
    return float(np.polyfit(np.log(sizes), np.log(seconds), 1)[0])


def _best_time(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def scaling_bench(sizes=DEFAULT_SIZES, seed=0, J=20, L=50, M=8, beta=0.5, repeats=3,
                  inner_sinkhorn_iters=1):
    """Time both solvers at each size; returns ``(rows, direct_slope, sliced_slope)``.

    Each timing is the best of ``repeats`` runs.
    """
    sizes = [int(n) for n in sizes]
    if any(n < 2 for n in sizes):
        raise InvalidInputError("sizes must be >= 2")
    rng = rng_stream(seed, "data")
    opts = FgwSolverOpts(outer_iters=J, inner_sinkhorn_iters=inner_sinkhorn_iters)
    rows = []
    for n in sizes:
        X = rng.standard_normal((n, M))
        Y = rng.standard_normal((n, M)) + 0.5
        proj = sample_projections(M, L, rng=rng_stream(seed, "projections"))
        direct = _best_time(lambda: empirical_fgw(X, Y, beta, opts), repeats)
        sliced = _best_time(lambda: sliced_fgw(X, Y, beta, proj), repeats)
        rows.append(BenchRow(n, direct, sliced))
    direct_slope = loglog_slope(sizes, [r.direct_seconds for r in rows])
    sliced_slope = loglog_slope(sizes, [r.sliced_seconds for r in rows])
    return rows, direct_slope, sliced_slope
