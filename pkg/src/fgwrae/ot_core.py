"""Discrete optimal transport: costs, Sinkhorn scaling and the proximal FGW solver.

All routines work on float64 numpy arrays and are pure functions of their
arguments.  The fused Gromov-Wasserstein problem solved here is

    min_{T in Pi(a, b)}  <D - 2 beta D_p T D_q^T, T>

with the fused cost ``D`` built by :func:`build_fused_cost`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.special import logsumexp

from .errors import InvalidInputError, SolverDegenerateError

__all__ = [
    "FgwSolverOpts",
    "TransportPlan",
    "as_distribution",
    "uniform",
    "build_cost_matrix",
    "sinkhorn",
    "entropic_ot",
    "sinkhorn_divergence",
    "round_to_polytope",
    "build_fused_cost",
    "fgw_objective",
    "solve_fgw_discrete",
    "empirical_fgw",
]

LOG_CLAMP = -700.0
MASS_TOL = 1e-12
# roundoff allowance when accepting a proximal step
ACCEPT_SLACK = 1e-11


@dataclass(frozen=True)
class FgwSolverOpts:
    """Knobs of the proximal-gradient FGW solver.

    ``alpha_scale`` multiplies ``max(C)`` to give the proximal weight of
    each outer step.  ``max_backtracks`` bounds how many times a step that
    would increase the objective is retried with a doubled weight.
    ``restarts`` extra random starting plans (seeded by ``seed``) and
    ``polish_iters`` Frank-Wolfe steps are off by default.
    """

    outer_iters: int = 20
    inner_sinkhorn_iters: int = 50
    inner_tol: float = 1e-9
    alpha_scale: float = 0.1
    seed: int = 0
    restarts: int = 0
    polish_iters: int = 0
    max_backtracks: int = 30

    def __post_init__(self):
        if self.outer_iters < 1:
            raise InvalidInputError("outer_iters must be >= 1")
        if self.inner_sinkhorn_iters < 1:
            raise InvalidInputError("inner_sinkhorn_iters must be >= 1")
        if not self.inner_tol > 0:
            raise InvalidInputError("inner_tol must be > 0")
        if not self.alpha_scale > 0:
            raise InvalidInputError("alpha_scale must be > 0")
        if self.restarts < 0 or self.polish_iters < 0:
            raise InvalidInputError("restarts and polish_iters must be >= 0")
        if self.max_backtracks < 0:
            raise InvalidInputError("max_backtracks must be >= 0")


@dataclass
class TransportPlan:
    """A coupling together with the marginals it was asked to satisfy.

    ``residual`` is the larger of the row and column L1 marginal errors.
    ``history`` holds the objective after each outer iteration (index 0 is
    the initial plan); it is empty for plain Sinkhorn solves.
    """

    coupling: np.ndarray
    marginal_a: np.ndarray
    marginal_b: np.ndarray
    residual: float = 0.0
    converged: bool = True
    iterations: int = 0
    history: list = field(default_factory=list)

    @property
    def shape(self):
        return self.coupling.shape

    def marginal_residual(self):
        rows = np.abs(self.coupling.sum(axis=1) - self.marginal_a).sum()
        cols = np.abs(self.coupling.sum(axis=0) - self.marginal_b).sum()
        return float(max(rows, cols))


def as_distribution(weights, name="weights"):
    """Validate a probability vector and return it as a float64 array."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size < 1:
        raise InvalidInputError(f"{name} must be a non-empty 1-D vector")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InvalidInputError(f"{name} must be finite and nonnegative")
    if abs(w.sum() - 1.0) > MASS_TOL:
        raise InvalidInputError(f"{name} must sum to 1 (got {w.sum()!r})")
    return w


def uniform(n):
    if n < 1:
        raise InvalidInputError("a distribution needs at least one atom")
    return np.full(n, 1.0 / n)


def _as_cloud(X, name):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise InvalidInputError(f"{name} must be a non-empty (N, M) array")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return X


def build_cost_matrix(X, Y):
    """Squared Euclidean distances between the rows of ``X`` and ``Y``.

    Differences are formed explicitly (no Gram-matrix shortcut) so the
    diagonal of ``build_cost_matrix(X, X)`` is exactly zero and the result
    is exactly symmetric.
    """
    X = _as_cloud(X, "X")
    Y = _as_cloud(Y, "Y")
    if X.shape[1] != Y.shape[1]:
        raise InvalidInputError(
            f"dimension mismatch: X has {X.shape[1]} columns, Y has {Y.shape[1]}"
        )
    diff = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def sinkhorn(a, b, kernel, max_iter=50, tol=1e-9):
    """Scale a positive kernel to a coupling with marginals ``a`` and ``b``.

    Alternates ``v = b / K^T u`` and ``u = a / K v`` and stops once the
    column residual (rows are exact after each ``u`` update) drops below
    ``tol`` or after ``max_iter`` sweeps.  Non-convergence is reported via
    ``plan.converged`` rather than raised.
    """
    a = as_distribution(a, "a")
    b = as_distribution(b, "b")
    K = np.asarray(kernel, dtype=np.float64)
    if K.shape != (a.size, b.size):
        raise InvalidInputError(f"kernel shape {K.shape} does not match ({a.size}, {b.size})")
    if not np.all(np.isfinite(K)) or np.any(K < 0):
        raise InvalidInputError("kernel must be finite and nonnegative")
    if np.any(K.sum(axis=1) <= 0) or np.any(K.sum(axis=0) <= 0):
        raise SolverDegenerateError("kernel has an all-zero row or column")

    u = np.ones_like(a)
    residual = math.inf
    it = 0
    Ktu = K.T @ u
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        for it in range(1, max_iter + 1):
            v = b / Ktu
            u = a / (K @ v)
            Ktu = K.T @ u
            residual = float(np.abs(v * Ktu - b).sum())
            if not np.isfinite(residual):
                raise SolverDegenerateError("Sinkhorn scaling vectors became non-finite")
            if residual < tol:
                break
    T = u[:, None] * K * v[None, :]
    return TransportPlan(
        coupling=T,
        marginal_a=a,
        marginal_b=b,
        residual=max(residual, float(np.abs(T.sum(axis=1) - a).sum())),
        converged=residual < tol,
        iterations=it,
    )


def _shifted_kernel(C, epsilon):
    # Subtracting row and then column minima only rescales the Sinkhorn
    # vectors, but leaves a unit entry in every row and column.
    C = C - C.min(axis=1, keepdims=True)
    C = C - C.min(axis=0, keepdims=True)
    return np.exp(-C / epsilon)


def _sinkhorn_log(a, b, C, epsilon, max_iter, tol):
    log_a, log_b = np.log(a), np.log(b)
    f = np.zeros_like(a)
    g = np.zeros_like(b)
    M = -C / epsilon
    residual = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        g = log_b - logsumexp(M + f[:, None], axis=0)
        f = log_a - logsumexp(M + g[None, :], axis=1)
        T = np.exp(M + f[:, None] + g[None, :])
        residual = float(np.abs(T.sum(axis=0) - b).sum())
        if residual < tol:
            break
    return TransportPlan(T, a, b, residual, residual < tol, it)


def entropic_ot(X, Y, epsilon, a=None, b=None, max_iter=1000, tol=1e-6):
    """Entropic OT between two clouds with squared Euclidean cost.

    Returns ``(plan, value)`` with ``value = <C, T> + epsilon KL(T || a b^T)``
    evaluated at the (rounded) Sinkhorn plan.  Scaling runs on the kernel
    and falls back to log-domain updates if the kernel form degenerates.
    """
    if not epsilon > 0:
        raise InvalidInputError("epsilon must be > 0")
    C = build_cost_matrix(X, Y)
    a = uniform(C.shape[0]) if a is None else as_distribution(a, "a")
    b = uniform(C.shape[1]) if b is None else as_distribution(b, "b")
    try:
        plan = sinkhorn(a, b, _shifted_kernel(C, epsilon), max_iter=max_iter, tol=tol)
    except SolverDegenerateError:
        plan = _sinkhorn_log(a, b, C, epsilon, max_iter, tol)
    T = round_to_polytope(plan.coupling, a, b)
    plan.coupling = T
    mask = T > 0
    kl = float(np.sum(T[mask] * np.log(T[mask] / np.outer(a, b)[mask])))
    return plan, float(np.sum(C * T)) + epsilon * kl


def sinkhorn_divergence(X, Y, epsilon, max_iter=1000, tol=1e-6):
    """Debiased entropic OT ``OT(X, Y) - OT(X, X) / 2 - OT(Y, Y) / 2``.

    With uniform weights this approaches the squared 2-Wasserstein distance
    between the samples as ``epsilon`` shrinks, without the entropic blur
    of the plain regularized cost.
    """
    _, xy = entropic_ot(X, Y, epsilon, max_iter=max_iter, tol=tol)
    _, xx = entropic_ot(X, X, epsilon, max_iter=max_iter, tol=tol)
    _, yy = entropic_ot(Y, Y, epsilon, max_iter=max_iter, tol=tol)
    return xy - 0.5 * xx - 0.5 * yy


def _is_uniform(w):
    return bool(np.all(w == w[0]))


def build_fused_cost(D_pq, D_p, D_q, beta, a=None, b=None):
    """Constant part ``D`` of the fused objective.

    ``D = (1-beta) D_pq + beta (D_p*D_p) a 1^T + beta 1 b^T (D_q*D_q)^T``.
    For uniform marginals the two relational terms are evaluated as row
    sums divided by ``K`` and ``N``.
    """
    D_pq = np.asarray(D_pq, dtype=np.float64)
    D_p = np.asarray(D_p, dtype=np.float64)
    D_q = np.asarray(D_q, dtype=np.float64)
    if not 0.0 <= beta <= 1.0:
        raise InvalidInputError(f"beta must lie in [0, 1], got {beta}")
    if D_p.ndim != 2 or D_p.shape[0] != D_p.shape[1]:
        raise InvalidInputError("D_p must be square")
    if D_q.ndim != 2 or D_q.shape[0] != D_q.shape[1]:
        raise InvalidInputError("D_q must be square")
    K, N = D_p.shape[0], D_q.shape[0]
    if D_pq.shape != (K, N):
        raise InvalidInputError(f"D_pq has shape {D_pq.shape}, expected ({K}, {N})")
    a = uniform(K) if a is None else as_distribution(a, "a")
    b = uniform(N) if b is None else as_distribution(b, "b")
    if a.size != K or b.size != N:
        raise InvalidInputError("marginal sizes do not match the cost matrices")

    P2 = D_p * D_p
    Q2 = D_q * D_q
    if _is_uniform(a):
        row = P2.sum(axis=1) / K
    else:
        row = P2 @ a
    if _is_uniform(b):
        col = Q2.sum(axis=1) / N
    else:
        col = Q2 @ b
    return (1.0 - beta) * D_pq + beta * row[:, None] + beta * col[None, :]


def fgw_objective(D, D_p, D_q, T, beta):
    """``<D - 2 beta D_p T D_q^T, T>`` for a given coupling."""
    return float(np.sum((D - 2.0 * beta * (D_p @ T @ D_q.T)) * T))


def round_to_polytope(F, a, b):
    """Project a nonnegative matrix onto ``Pi(a, b)``.

    Rows then columns are scaled down to fit the marginals and the missing
    mass is added back as a rank-one correction (Altschuler, Weed and
    Rigollet, 2017).  The result has exact marginals up to float rounding.
    """
    r = F.sum(axis=1)
    F = F * np.minimum(a / np.where(r > 0, r, 1.0), 1.0)[:, None]
    c = F.sum(axis=0)
    F = F * np.minimum(b / np.where(c > 0, c, 1.0), 1.0)[None, :]
    err_a = np.maximum(a - F.sum(axis=1), 0.0)
    err_b = np.maximum(b - F.sum(axis=0), 0.0)
    mass = err_a.sum()
    if mass > 0:
        F = F + np.outer(err_a, err_b) / mass
    return F


def _plan_residual(T, a, b):
    return float(max(np.abs(T.sum(axis=1) - a).sum(), np.abs(T.sum(axis=0) - b).sum()))


def _initial_plan(init, a, b):
    if init is None or (isinstance(init, str) and init == "product"):
        return np.outer(a, b)
    if isinstance(init, str) and init == "identity":
        if a.size != b.size or not np.array_equal(a, b):
            raise InvalidInputError("identity warm start needs equal marginals")
        return np.diag(a)
    if isinstance(init, str):
        raise InvalidInputError(f"unknown warm start {init!r}")
    T0 = np.asarray(init, dtype=np.float64)
    if T0.shape != (a.size, b.size) or np.any(T0 < 0) or not np.all(np.isfinite(T0)):
        raise InvalidInputError("initial plan must be a finite nonnegative (K, N) array")
    return T0


def _random_plan(rng, a, b):
    kernel = np.exp(2.0 * rng.standard_normal((a.size, b.size)))
    return round_to_polytope(sinkhorn(a, b, kernel, max_iter=500).coupling, a, b)


def _proximal_kernel(C, T, alpha):
    logk = -C / alpha
    with np.errstate(divide="ignore"):
        logk = logk + np.log(T)
    logk -= logk.max()
    np.maximum(logk, LOG_CLAMP, out=logk)
    return np.exp(logk)


def _linear_vertex(G, a, b):
    """Vertex of ``Pi(a, b)`` minimizing ``<G, S>``."""
    K, N = G.shape
    if K == N and _is_uniform(a) and _is_uniform(b):
        rows, cols = linear_sum_assignment(G)
        S = np.zeros_like(G)
        S[rows, cols] = a[0]
        return S
    A_eq = np.vstack([
        np.kron(np.eye(K), np.ones((1, N))),
        np.kron(np.ones((1, K)), np.eye(N)),
    ])
    res = linprog(G.ravel(), A_eq=A_eq[:-1], b_eq=np.concatenate([a, b])[:-1],
                  bounds=(0, None), method="highs")
    if res.status != 0:
        raise SolverDegenerateError(f"linear transport subproblem failed: {res.message}")
    return np.maximum(res.x.reshape(K, N), 0.0)


def _proximal_descent(D, D_p, D_q, a, b, beta, T, opts):
    cross = D_p @ T @ D_q.T
    value = float(np.sum((D - 2.0 * beta * cross) * T))
    if not np.isfinite(value):
        raise SolverDegenerateError("objective is not finite at the initial plan")
    history = [value]
    converged = True
    for _ in range(opts.outer_iters):
        C = D - 2.0 * beta * cross
        scale = float(C.max())
        if scale <= 0.0:
            scale = float(np.abs(C).max())
        if scale == 0.0:
            # constant objective on the feasible set
            history.append(value)
            continue
        alpha = opts.alpha_scale * scale
        for _attempt in range(opts.max_backtracks + 1):
            plan = sinkhorn(
                a, b, _proximal_kernel(C, T, alpha),
                max_iter=opts.inner_sinkhorn_iters, tol=opts.inner_tol,
            )
            candidate = round_to_polytope(plan.coupling, a, b)
            candidate_cross = D_p @ candidate @ D_q.T
            new_value = float(np.sum((D - 2.0 * beta * candidate_cross) * candidate))
            if math.isnan(new_value):
                raise SolverDegenerateError("objective became NaN")
            if new_value <= value + ACCEPT_SLACK:
                break
            alpha *= 2.0
        else:
            history.append(value)
            continue
        T, cross, value, converged = candidate, candidate_cross, new_value, plan.converged
        history.append(value)
    return T, value, history, converged


def _frank_wolfe_polish(D, D_p, D_q, a, b, beta, T, value, history, iters):
    for _ in range(iters):
        grad = D - 4.0 * beta * (D_p @ T @ D_q.T)
        step_dir = _linear_vertex(grad, a, b) - T
        slope = float(np.sum(grad * step_dir))
        if slope >= -1e-15:
            break
        curvature = -2.0 * beta * float(np.sum((D_p @ step_dir @ D_q.T) * step_dir))
        step = 1.0 if curvature <= 0 else min(1.0, -slope / (2.0 * curvature))
        candidate = T + step * step_dir
        new_value = fgw_objective(D, D_p, D_q, candidate, beta)
        if not new_value < value:
            break
        T, value = candidate, new_value
        history.append(value)
    return T, value


def solve_fgw_discrete(D_pq, D_p, D_q, a=None, b=None, beta=0.5, opts=None, init=None):
    """Proximal-gradient solver for the discrete fused GW problem.

    Each outer step linearizes the quadratic term at ``T_j`` and solves
    ``min <C_j, T> + alpha KL(T || T_j)`` by Sinkhorn on the kernel
    ``exp(-C_j / alpha) * T_j`` with ``C_j = D - 2 beta D_p T_j D_q^T`` and
    ``alpha = alpha_scale * max(C_j)``.  The Sinkhorn output is rounded
    onto ``Pi(a, b)``; a step that would raise the objective is retried
    with ``alpha`` doubled, so ``plan.history`` is non-increasing.

    ``opts.polish_iters`` Frank-Wolfe steps with exact line search may
    follow to land on a vertex, and ``opts.restarts`` extra random starts
    (seeded by ``opts.seed``) keep the best local solution.

    ``init`` is ``"product"`` (default, ``a b^T``), ``"identity"`` or an
    explicit array.  Returns ``(plan, value)``.
    """
    opts = FgwSolverOpts() if opts is None else opts
    D_pq = np.asarray(D_pq, dtype=np.float64)
    D_p = np.asarray(D_p, dtype=np.float64)
    D_q = np.asarray(D_q, dtype=np.float64)
    a = uniform(D_p.shape[0]) if a is None else as_distribution(a, "a")
    b = uniform(D_q.shape[0]) if b is None else as_distribution(b, "b")
    D = build_fused_cost(D_pq, D_p, D_q, beta, a, b)

    starts = [_initial_plan(init, a, b)]
    if opts.restarts:
        rng = np.random.default_rng(opts.seed)
        starts += [_random_plan(rng, a, b) for _ in range(opts.restarts)]

    best = None
    for T0 in starts:
        T, value, history, converged = _proximal_descent(D, D_p, D_q, a, b, beta, T0, opts)
        if opts.polish_iters:
            T, value = _frank_wolfe_polish(
                D, D_p, D_q, a, b, beta, T, value, history, opts.polish_iters
            )
        if best is None or value < best[1]:
            best = (T, value, history, converged)

    T, value, history, converged = best
    plan = TransportPlan(
        coupling=T, marginal_a=a, marginal_b=b,
        residual=_plan_residual(T, a, b), converged=converged,
        iterations=opts.outer_iters, history=history,
    )
    return plan, value


def empirical_fgw(X, Y, beta, opts=None, a=None, b=None, init=None):
    """FGW between two point clouds with squared Euclidean ground costs.

    When ``beta == 1`` the clouds may live in different dimensions; the
    cross cost is then never used and is replaced by zeros.
    """
    X = _as_cloud(X, "X")
    Y = _as_cloud(Y, "Y")
    if X.shape[1] == Y.shape[1]:
        D_pq = build_cost_matrix(X, Y)
    elif beta == 1.0:
        D_pq = np.zeros((X.shape[0], Y.shape[0]))
    else:
        raise InvalidInputError("clouds of different dimension need beta == 1")
    return solve_fgw_discrete(
        D_pq, build_cost_matrix(X, X), build_cost_matrix(Y, Y),
        a=a, b=b, beta=beta, opts=opts, init=init,
    )
