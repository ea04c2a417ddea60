"""Closed-form geometry of diagonal Gaussians and hierarchical FGW between mixtures.

Between two diagonal Gaussians the squared 2-Wasserstein distance is
``|mu_p - mu_q|^2 + |sigma_p - sigma_q|^2``.  The hierarchical FGW distance
treats each mixture as a discrete distribution over its components and
solves the discrete FGW problem with these component distances as ground
and intra-space costs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .ot_core import as_distribution, build_fused_cost, solve_fgw_discrete, uniform

__all__ = [
    "STD_FLOOR",
    "DiagGaussian",
    "GaussianMixture",
    "gaussian_w2_diag",
    "pairwise_w2",
    "gmm_pairwise_w2",
    "hierarchical_fgw",
    "frozen_plan_value_and_grad",
]

STD_FLOOR = 1e-6


@dataclass(frozen=True)
class DiagGaussian:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        std = np.atleast_1d(np.asarray(self.std, dtype=np.float64))
        if mean.ndim != 1 or mean.shape != std.shape:
            raise InvalidInputError("mean and std must be vectors of equal length")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std))):
            raise InvalidInputError("mean and std must be finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def dim(self):
        return self.mean.size


class GaussianMixture:
    """Diagonal Gaussian mixture stored as stacked arrays.

    ``means`` and ``stds`` have shape ``(K, M)``; ``weights`` defaults to
    uniform.  Standard deviations below ``std_floor`` are rejected; pass
    ``std_floor=0`` to build point-mass components.
    """

    def __init__(self, means, stds, weights=None, std_floor=STD_FLOOR):
        means = np.asarray(means, dtype=np.float64)
        stds = np.asarray(stds, dtype=np.float64)
        if means.ndim == 1:
            means = means[:, None]
        if stds.ndim == 1:
            stds = stds[:, None]
        if means.ndim != 2 or means.shape[0] < 1 or means.shape[1] < 1:
            raise InvalidInputError("means must be a non-empty (K, M) array")
        if stds.shape != means.shape:
            raise InvalidInputError(f"stds shape {stds.shape} != means shape {means.shape}")
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(stds))):
            raise InvalidInputError("means and stds must be finite")
        if np.any(stds < std_floor) or np.any(stds < 0):
            raise InvalidInputError(f"stds must be >= {std_floor}")
        self.means = means
        self.stds = stds
        self.weights = uniform(means.shape[0]) if weights is None else as_distribution(weights)
        if self.weights.size != means.shape[0]:
            raise InvalidInputError("one weight per component is required")

    @classmethod
    def from_components(cls, components, weights=None, std_floor=STD_FLOOR):
        comps = list(components)
        if not comps:
            raise InvalidInputError("a mixture needs at least one component")
        if len({c.dim for c in comps}) != 1:
            raise InvalidInputError("all components must share one dimension")
        return cls(
            np.stack([c.mean for c in comps]), np.stack([c.std for c in comps]),
            weights, std_floor,
        )

    @property
    def n_components(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def components(self):
        return [DiagGaussian(m, s) for m, s in zip(self.means, self.stds)]

    def __repr__(self):
        return f"GaussianMixture(K={self.n_components}, dim={self.dim})"


def gaussian_w2_diag(p, q):
    """Squared 2-Wasserstein distance between two diagonal Gaussians."""
    if p.dim != q.dim:
        raise InvalidInputError(f"dimension mismatch: {p.dim} vs {q.dim}")
    return float(np.sum((p.mean - q.mean) ** 2) + np.sum((p.std - q.std) ** 2))


def pairwise_w2(means_p, stds_p, means_q, stds_q):
    """Component-wise closed-form W2 matrix from raw arrays."""
    dm = means_p[:, None, :] - means_q[None, :, :]
    ds = stds_p[:, None, :] - stds_q[None, :, :]
    return np.einsum("ijk,ijk->ij", dm, dm) + np.einsum("ijk,ijk->ij", ds, ds)


def gmm_pairwise_w2(P, Q=None):
    """W2 between every component of ``P`` and every component of ``Q``.

    With ``Q`` omitted the intra-mixture matrix of ``P`` is returned.
    """
    if Q is None:
        Q = P
    if P.dim != Q.dim:
        raise InvalidInputError(f"dimension mismatch: {P.dim} vs {Q.dim}")
    return pairwise_w2(P.means, P.stds, Q.means, Q.stds)


def hierarchical_fgw(P, Q, beta, opts=None, init=None):
    """Hierarchical FGW between two Gaussian mixtures.

    ``beta = 0`` gives the hierarchical Wasserstein distance and
    ``beta = 1`` the hierarchical GW distance, which is also defined for
    mixtures of different dimension.  Returns ``(plan, value)`` where the
    plan couples the component weights.
    """
    if not 0.0 <= beta <= 1.0:
        raise InvalidInputError(f"beta must lie in [0, 1], got {beta}")
    if P.dim != Q.dim:
        if beta < 1.0:
            raise InvalidInputError(
                f"mixtures of dimension {P.dim} and {Q.dim} can only be compared with beta == 1"
            )
        D_pq = np.zeros((P.n_components, Q.n_components))
    else:
        D_pq = gmm_pairwise_w2(P, Q)
    return solve_fgw_discrete(
        D_pq, gmm_pairwise_w2(P), gmm_pairwise_w2(Q),
        a=P.weights, b=Q.weights, beta=beta, opts=opts, init=init,
    )


def _self_pull(G, X):
    """Gradient of ``sum_kl G_kl |x_k - x_l|^2`` with respect to ``X``."""
    S = G + G.T
    return 2.0 * (S.sum(axis=1)[:, None] * X - S @ X)


def frozen_plan_value_and_grad(means_p, stds_p, means_q, stds_q, T, beta, a=None, b=None):
    """Hierarchical FGW objective at a fixed plan and its parameter gradients.

    Evaluates ``<D - 2 beta D_p T D_q^T, T>`` with every distance matrix
    rebuilt from the given means and stds, holding ``T`` constant.  Returns
    ``(value, (g_means_p, g_stds_p, g_means_q, g_stds_q))``.  When the two
    sides differ in dimension only ``beta == 1`` is allowed and the cross
    term is skipped.
    """
    T = np.asarray(T, dtype=np.float64)
    K, N = T.shape
    a = uniform(K) if a is None else as_distribution(a, "a")
    b = uniform(N) if b is None else as_distribution(b, "b")
    same_dim = means_p.shape[1] == means_q.shape[1]
    if not same_dim and beta < 1.0:
        raise InvalidInputError("different dimensions need beta == 1")

    D_p = pairwise_w2(means_p, stds_p, means_p, stds_p)
    D_q = pairwise_w2(means_q, stds_q, means_q, stds_q)
    D_pq = pairwise_w2(means_p, stds_p, means_q, stds_q) if same_dim else np.zeros((K, N))
    D = build_fused_cost(D_pq, D_p, D_q, beta, a, b)
    cross = T @ D_q.T @ T.T  # (K, K)
    value = float(np.sum((D - 2.0 * beta * (D_p @ T @ D_q.T)) * T))

    rows = T.sum(axis=1)
    cols = T.sum(axis=0)
    G_pq = (1.0 - beta) * T
    G_p = 2.0 * beta * (D_p * np.outer(rows, a)) - 2.0 * beta * cross
    G_q = 2.0 * beta * (D_q * np.outer(cols, b)) - 2.0 * beta * (T.T @ D_p @ T)

    g_mp = _self_pull(G_p, means_p)
    g_sp = _self_pull(G_p, stds_p)
    g_mq = _self_pull(G_q, means_q)
    g_sq = _self_pull(G_q, stds_q)
    if same_dim and beta < 1.0:
        g_mp += 2.0 * (G_pq.sum(axis=1)[:, None] * means_p - G_pq @ means_q)
        g_sp += 2.0 * (G_pq.sum(axis=1)[:, None] * stds_p - G_pq @ stds_q)
        g_mq += 2.0 * (G_pq.sum(axis=0)[:, None] * means_q - G_pq.T @ means_p)
        g_sq += 2.0 * (G_pq.sum(axis=0)[:, None] * stds_q - G_pq.T @ stds_p)
    return value, (g_mp, g_sp, g_mq, g_sq)
