"""Relational co-training of two autoencoders and multi-view evaluation.

Two autoencoders with possibly different latent dimensions are trained
together on unpaired batches.  The loss is

    sum_s [recon_s + gamma (1 - tau) D(q_s, p)] + 2 gamma tau GW(q_1, q_2)

with ``p`` a fixed standard normal prior.  In probabilistic mode ``D`` is
the hierarchical Wasserstein distance and ``GW`` the hierarchical GW
distance between the two batch posteriors; in deterministic mode both are
sliced, with each latent space projected on its own directions.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_softmax

from .data_io import PointCloud, rng_stream
from .errors import InvalidInputError, SolverDegenerateError
from .gaussian_ot import GaussianMixture, frozen_plan_value_and_grad, hierarchical_fgw
from .rae import TrainConfig, ViewTrainer, encode
from .sliced_ot import sample_projections, sliced_fgw_with_grad

__all__ = [
    "MODES",
    "CoTrainConfig",
    "cotrain",
    "relational_step",
    "eval_multiview",
    "fit_softmax",
    "tau_sweep",
]

MODES = ("probabilistic", "deterministic")
L2_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)


@dataclass(frozen=True)
class CoTrainConfig:
    """Co-training setup.

    ``view_a`` and ``view_b`` carry the per-autoencoder settings (latent
    size, widths, batch size, learning rate, seed, ``J``, ``L``); their
    ``gamma``, ``beta``, ``K`` and ``epochs`` are ignored.  ``L`` for the
    relational term is taken from ``view_a``.
    """

    view_a: TrainConfig = TrainConfig()
    view_b: TrainConfig = TrainConfig(seed=1)
    gamma: float = 1.0
    tau: float = 0.5
    mode: str = "probabilistic"
    epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        for name in ("view_a", "view_b"):
            value = getattr(self, name)
            if isinstance(value, dict):
                object.__setattr__(self, name, TrainConfig(**value))
        if not self.gamma >= 0:
            raise InvalidInputError("gamma must be >= 0")
        if not 0.0 <= self.tau <= 1.0:
            raise InvalidInputError("tau must lie in [0, 1]")
        if self.mode not in MODES:
            raise InvalidInputError(f"mode must be one of {MODES}")
        if self.epochs < 0:
            raise InvalidInputError("epochs must be >= 0")

    def view_config(self, which):
        base = self.view_a if which == "a" else self.view_b
        return dataclasses.replace(base, K=1, learn_prior=False, beta=0.0, epochs=self.epochs)


CoTrainConfig._nested = {"view_a": TrainConfig, "view_b": TrainConfig}


def relational_step(view_a, view_b, batch_a, batch_b, mode, L, rng):
    """Relational GW between two batch posteriors and its code gradients.

    Returns ``(value, grads_a, grads_b)`` where each ``grads`` is
    ``(g_means, g_stds)`` in probabilistic mode and ``(g_codes, None)``
    otherwise.
    """
    if mode == "probabilistic":
        mu_a, sd_a = view_a.codes(batch_a)
        mu_b, sd_b = view_b.codes(batch_b)
        plan, _ = hierarchical_fgw(
            GaussianMixture(mu_a, sd_a), GaussianMixture(mu_b, sd_b), 1.0, view_a.opts
        )
        value, (g_ma, g_sa, g_mb, g_sb) = frozen_plan_value_and_grad(
            mu_a, sd_a, mu_b, sd_b, plan.coupling, 1.0
        )
        return value, (g_ma, g_sa), (g_mb, g_sb)
    za = view_a.codes(batch_a)
    zb = view_b.codes(batch_b)
    proj_a = sample_projections(za.shape[1], L, rng=rng)
    proj_b = sample_projections(zb.shape[1], L, rng=rng)
    value, g_a, g_b = sliced_fgw_with_grad(za, zb, 1.0, proj_a, projections_y=proj_b)
    return value, (g_a, None), (g_b, None)


def cotrain(config, data_a, data_b):
    """Co-train two autoencoders on unpaired data.

    Each view shuffles independently every epoch; the k-th batches of both
    views are paired and truncated to the smaller one.  Returns
    ``(model_a, model_b, (report_a, report_b))``.  Both reports share the
    ``relational`` series (per-epoch mean of the relational GW term) and
    ``relational_init`` (its value on the very first batch pair, before
    any update).  With ``tau == 0`` the relational term is never computed
    and its series is all zero.
    """
    probabilistic = config.mode == "probabilistic"
    va = ViewTrainer(config.view_config("a"), data_a, probabilistic)
    vb = ViewTrainer(config.view_config("b"), data_b, probabilistic)
    w_prior = config.gamma * (1.0 - config.tau)
    w_rel = 2.0 * config.gamma * config.tau
    rel_rng = rng_stream(config.seed, "relational")
    relational = []
    relational_init = 0.0

    for epoch in range(config.epochs):
        start = time.perf_counter()
        va.start_epoch()
        vb.start_epoch()
        rel_sum = 0.0
        n_rel = 0
        for idx_a, idx_b in zip(va.batches(), vb.batches()):
            m = min(idx_a.size, idx_b.size)
            ba = va.forward(idx_a[:m])
            bb = vb.forward(idx_b[:m])
            if w_prior > 0.0:
                ok_a = va.add_prior_reg(ba, w_prior, 0.0)
                ok_b = vb.add_prior_reg(bb, w_prior, 0.0)
                if not (ok_a and ok_b):
                    continue
            rel = 0.0
            if w_rel > 0.0:
                try:
                    rel, (ga, sa), (gb, sb) = relational_step(
                        va, vb, ba, bb, config.mode, config.view_a.L, rel_rng
                    )
                except SolverDegenerateError:
                    va.report.skipped_batches += 1
                    vb.report.skipped_batches += 1
                    continue
                va.add_code_grad(ba, w_rel, ga, sa)
                vb.add_code_grad(bb, w_rel, gb, sb)
                if epoch == 0 and n_rel == 0:
                    relational_init = rel
            loss = ba.recon + bb.recon + w_prior * (ba.reg + bb.reg) + w_rel * rel
            if not np.isfinite(loss):
                raise SolverDegenerateError(f"co-training loss became non-finite in epoch {epoch + 1}")
            va.update(ba)
            vb.update(bb)
            rel_sum += rel
            n_rel += 1
        seconds = time.perf_counter() - start
        va.end_epoch(seconds, epoch)
        vb.end_epoch(seconds, epoch)
        relational.append(rel_sum / max(n_rel, 1))

    for view in (va, vb):
        view.report.relational = list(relational)
        view.report.relational_init = relational_init
    return va.model, vb.model, (va.report, vb.report)


def _features(model, X):
    if model.probabilistic:
        mu, _ = encode(model.encoder, X, model.latent_dim)
        return mu
    return encode(model.encoder, X)


def _softmax_loss(w_flat, F, Y, l2, n_feat, n_cls):
    W = w_flat[: n_feat * n_cls].reshape(n_feat, n_cls)
    bias = w_flat[n_feat * n_cls:]
    logp = log_softmax(F @ W + bias, axis=1)
    n = F.shape[0]
    loss = -np.sum(Y * logp) / n + l2 * np.sum(W * W)
    resid = (np.exp(logp) - Y) / n
    gW = F.T @ resid + 2.0 * l2 * W
    return loss, np.concatenate([gW.ravel(), resid.sum(axis=0)])


def fit_softmax(F, y, n_classes, l2):
    """Multinomial logistic regression by L-BFGS; returns ``(W, bias)``."""
    n_feat = F.shape[1]
    Y = np.eye(n_classes)[y]
    w0 = np.zeros(n_feat * n_classes + n_classes)
    res = minimize(
        _softmax_loss, w0, args=(F, Y, l2, n_feat, n_classes),
        jac=True, method="L-BFGS-B", options={"maxiter": 500},
    )
    return res.x[: n_feat * n_classes].reshape(n_feat, n_classes), res.x[n_feat * n_classes:]


def _accuracy(params, F, y):
    W, bias = params
    return float(np.mean(np.argmax(F @ W + bias, axis=1) == y))


def eval_multiview(model_a, model_b, data_a, data_b, labels, split_seed, l2_grid=L2_GRID):
    """Test accuracy of softmax regression on concatenated latent codes.

    The paired samples are split 80/10/10 into train, validation and test;
    features are standardized with training statistics and the L2 weight
    is chosen on the validation split.
    """
    Xa = data_a.samples if isinstance(data_a, PointCloud) else np.asarray(data_a, dtype=np.float64)
    Xb = data_b.samples if isinstance(data_b, PointCloud) else np.asarray(data_b, dtype=np.float64)
    y = np.asarray(labels)
    if not (Xa.shape[0] == Xb.shape[0] == y.shape[0]):
        raise InvalidInputError("views and labels must have the same number of samples")
    n = y.shape[0]
    if n < 10:
        raise InvalidInputError("need at least 10 labeled samples for an 80/10/10 split")
    _, y = np.unique(y, return_inverse=True)
    n_classes = int(y.max()) + 1

    F = np.hstack([_features(model_a, Xa), _features(model_b, Xb)])
    order = rng_stream(split_seed, "split").permutation(n)
    n_train = int(round(0.8 * n))
    n_val = int(round(0.1 * n))
    tr, va, te = order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]
    mean = F[tr].mean(axis=0)
    std = F[tr].std(axis=0)
    F = (F - mean) / np.where(std > 0, std, 1.0)

    best = None
    for l2 in l2_grid:
        params = fit_softmax(F[tr], y[tr], n_classes, l2)
        acc = _accuracy(params, F[va], y[va])
        if best is None or acc > best[0]:
            best = (acc, params)
    return _accuracy(best[1], F[te], y[te])


def tau_sweep(config, data_a, data_b, labels, split_seed, taus=(0.0, 0.2, 0.4, 0.6, 0.8, 1.0)):
    """Co-train once per ``tau`` and evaluate; returns a list of result dicts."""
    rows = []
    for tau in taus:
        cfg = dataclasses.replace(config, tau=float(tau))
        model_a, model_b, (rep_a, _) = cotrain(cfg, data_a, data_b)
        rows.append({
            "tau": float(tau),
            "accuracy": eval_multiview(model_a, model_b, data_a, data_b, labels, split_seed),
            "relational_final": rep_a.relational[-1] if rep_a.relational else 0.0,
        })
    return rows
