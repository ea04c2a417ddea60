"""Relational regularized autoencoders on dense networks.

Two trainers share one loop skeleton:

* :func:`train_prae` uses a probabilistic encoder.  Each batch forms the
  posterior mixture ``(1/N) sum_n N(mu_n, diag(sigma_n))`` and penalizes its
  hierarchical FGW distance to a learnable K-component prior.
* :func:`train_drae` uses a deterministic encoder and penalizes the sliced
  FGW distance between the batch codes and an equal number of prior draws.

Both treat the optimal coupling (or per-slice matching) as a constant when
differentiating the regularizer.  Encoder, decoder and prior are updated by
one Adam optimizer.  The reconstruction loss is the batch mean of squared
Euclidean errors.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data_io import PointCloud, config_from_dict, rng_stream
from .errors import InvalidInputError, ParseError, SolverDegenerateError
from .gaussian_ot import STD_FLOOR, frozen_plan_value_and_grad, GaussianMixture, hierarchical_fgw
from .nn_micro import AdamState, Mlp, adam_step, mlp_apply, mlp_grad, reparam_backward, reparam_sample
from .ot_core import FgwSolverOpts
from .sliced_ot import sample_projections, sliced_fgw_with_grad

__all__ = [
    "TrainConfig",
    "RaePrior",
    "TrainReport",
    "RaeModel",
    "ViewTrainer",
    "train_prae",
    "train_drae",
    "conditional_generate",
    "encode",
    "transport_assignment",
    "cluster_purity",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters shared by both trainers.

    ``J`` is only read by the probabilistic trainer and ``L`` only by the
    deterministic one.  ``hidden`` lists the hidden widths of encoder and
    decoder.  With ``learn_prior=False`` the prior stays a fixed standard
    normal (every component at the origin with unit variance).
    """

    gamma: float = 1.0
    beta: float = 0.1
    K: int = 3
    batch_size: int = 64
    epochs: int = 200
    latent_dim: int = 2
    L: int = 50
    J: int = 20
    inner_sinkhorn_iters: int = 50
    hidden: tuple = (32, 32)
    seed: int = 0
    lr: float = 1e-3
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    prior_init_scale: float = 1.0
    learn_prior: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.gamma >= 0:
            raise InvalidInputError("gamma must be >= 0")
        if not 0.0 <= self.beta <= 1.0:
            raise InvalidInputError("beta must lie in [0, 1]")
        for name in ("K", "batch_size", "latent_dim", "L", "J", "inner_sinkhorn_iters"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise InvalidInputError("epochs must be >= 0")
        if any(h < 1 for h in self.hidden):
            raise InvalidInputError("hidden widths must be >= 1")
        if not self.lr > 0:
            raise InvalidInputError("lr must be > 0")

    def solver_opts(self):
        return FgwSolverOpts(outer_iters=self.J, inner_sinkhorn_iters=self.inner_sinkhorn_iters)


class RaePrior:
    """Learnable mixture of K diagonal Gaussians with uniform weights.

    Stored as ``means`` and ``log_vars`` of shape ``(K, M)``; standard
    deviations are ``max(exp(log_var / 2), STD_FLOOR)``.
    """

    def __init__(self, means, log_vars):
        means = np.array(means, dtype=np.float64, ndmin=2)
        log_vars = np.array(log_vars, dtype=np.float64, ndmin=2)
        if means.shape != log_vars.shape or means.shape[0] < 1:
            raise InvalidInputError("means and log_vars must share a (K, M) shape with K >= 1")
        self.means = means
        self.log_vars = log_vars

    @classmethod
    def random(cls, K, dim, rng, scale=1.0):
        return cls(scale * rng.standard_normal((K, dim)), np.zeros((K, dim)))

    @property
    def K(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def stds(self):
        return np.maximum(np.exp(0.5 * self.log_vars), STD_FLOOR)

    @property
    def params(self):
        return [self.means, self.log_vars]

    def mixture(self):
        return GaussianMixture(self.means, self.stds)

    def to_dict(self):
        return {"means": self.means.tolist(), "log_vars": self.log_vars.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["means"], d["log_vars"])


@dataclass
class TrainReport:
    recon_loss: list = field(default_factory=list)
    reg_value: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    w_term: list = field(default_factory=list)  # magnitude of the Wasserstein part
    gw_term: list = field(default_factory=list)  # magnitude of the GW part
    skipped_batches: int = 0
    final_plan: np.ndarray | None = None
    relational: list = field(default_factory=list)  # co-training only
    relational_init: float = 0.0

    @property
    def epochs(self):
        return len(self.recon_loss)


@dataclass
class RaeModel:
    encoder: Mlp
    decoder: Mlp
    prior: RaePrior
    probabilistic: bool

    @property
    def latent_dim(self):
        return self.decoder.in_dim


def _as_samples(data):
    X = data.samples if isinstance(data, PointCloud) else np.asarray(data, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1:
        raise InvalidInputError("training data must be a non-empty (n, d) array")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("training data must be finite")
    return X


def _build_model(config, in_dim, probabilistic):
    init = rng_stream(config.seed, "init")
    head = 2 * config.latent_dim if probabilistic else config.latent_dim
    encoder = Mlp([in_dim, *config.hidden, head], rng=init)
    decoder = Mlp([config.latent_dim, *reversed(config.hidden), in_dim], rng=init)
    if config.learn_prior:
        prior = RaePrior.random(
            config.K, config.latent_dim, rng_stream(config.seed, "prior_init"),
            config.prior_init_scale,
        )
    else:
        prior = RaePrior(np.zeros((config.K, config.latent_dim)), np.zeros((config.K, config.latent_dim)))
    return RaeModel(encoder, decoder, prior, probabilistic)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _recon(decoder, z, X):
    cache = mlp_apply(decoder, z)
    err = cache.output - X
    loss = float(np.sum(err * err)) / X.shape[0]
    grads, grad_z = mlp_grad(decoder, cache, 2.0 * err / X.shape[0])
    return loss, grads, grad_z


def _split_head(out, dim):
    return out[:, :dim], out[:, dim:]


def _fgw_terms(means_p, stds_p, means_q, stds_q, T, beta):
    """Unweighted W and GW parts of the hierarchical objective at ``T``."""
    w, _ = frozen_plan_value_and_grad(means_p, stds_p, means_q, stds_q, T, 0.0)
    gw, _ = frozen_plan_value_and_grad(means_p, stds_p, means_q, stds_q, T, 1.0)
    return (1.0 - beta) * w, beta * gw


def _posterior_reg(model, mu, lv, beta, opts):
    prior = model.prior
    stds_q = np.maximum(np.exp(0.5 * lv), STD_FLOOR)
    posterior = GaussianMixture(mu, stds_q)
    plan, _ = hierarchical_fgw(prior.mixture(), posterior, beta, opts)
    T = plan.coupling
    value, (g_mp, g_sp, g_mq, g_sq) = frozen_plan_value_and_grad(
        prior.means, prior.stds, mu, stds_q, T, beta
    )
    # d sigma / d log_var, zero where the floor is active
    dsp = np.where(prior.stds > STD_FLOOR, 0.5 * prior.stds, 0.0)
    dsq = np.where(stds_q > STD_FLOOR, 0.5 * stds_q, 0.0)
    terms = _fgw_terms(prior.means, prior.stds, mu, stds_q, T, beta)
    return value, T, (g_mp, g_sp * dsp, g_mq, g_sq * dsq), terms


def _check_finite(value, what, epoch):
    if not np.isfinite(value):
        raise SolverDegenerateError(f"{what} became non-finite in epoch {epoch + 1}")


@dataclass
class _Batch:
    X: np.ndarray
    enc: object
    z: np.ndarray
    recon: float
    dec_grads: list
    g_head: list  # [g_mu, g_log_var] or [g_z]
    g_prior: list
    mu: np.ndarray | None = None
    lv: np.ndarray | None = None
    reg: float = 0.0
    terms: tuple = (0.0, 0.0)


class ViewTrainer:
    """One autoencoder plus its optimizer and random streams.

    Both trainers here and the co-training loop drive models through this
    class, so a co-training run with the relational term switched off
    performs exactly the same floating-point operations as two
    independent runs.
    """

    def __init__(self, config, data, probabilistic):
        self.config = config
        self.X = _as_samples(data)
        self.probabilistic = probabilistic
        self.model = _build_model(config, self.X.shape[1], probabilistic)
        self.params = self.model.encoder.params + self.model.decoder.params
        if config.learn_prior:
            self.params = self.params + self.model.prior.params
        self.adam = AdamState.for_params(
            self.params, lr=config.lr, beta1=config.adam_beta1,
            beta2=config.adam_beta2, eps=config.adam_eps,
        )
        self.shuffle = rng_stream(config.seed, "shuffle")
        self.noise = rng_stream(config.seed, "noise")
        self.prior_rng = rng_stream(config.seed, "prior")
        self.proj_rng = rng_stream(config.seed, "projections")
        self.opts = config.solver_opts()
        self.report = TrainReport()
        self._sums = None

    def batches(self):
        return _batches(self.X.shape[0], self.config.batch_size, self.shuffle)

    def forward(self, idx):
        Xb = self.X[idx]
        model = self.model
        enc = mlp_apply(model.encoder, Xb)
        g_prior = [np.zeros_like(model.prior.means), np.zeros_like(model.prior.log_vars)]
        if self.probabilistic:
            mu, lv = _split_head(enc.output, self.config.latent_dim)
            z, eps = reparam_sample(mu, lv, rng=self.noise)
            recon, dec_grads, grad_z = _recon(model.decoder, z, Xb)
            g_mu, g_lv = reparam_backward(grad_z, eps, lv)
            return _Batch(Xb, enc, z, recon, dec_grads, [g_mu.copy(), g_lv], g_prior, mu, lv)
        z = enc.output
        recon, dec_grads, grad_z = _recon(model.decoder, z, Xb)
        return _Batch(Xb, enc, z, recon, dec_grads, [grad_z.copy()], g_prior)

    def codes(self, b):
        """Posterior ``(means, stds)`` or deterministic codes of a batch."""
        if self.probabilistic:
            return b.mu, np.maximum(np.exp(0.5 * b.lv), STD_FLOOR)
        return b.z

    def add_code_grad(self, b, weight, g_means, g_stds=None):
        b.g_head[0] += weight * g_means
        if g_stds is not None:
            stds = np.maximum(np.exp(0.5 * b.lv), STD_FLOOR)
            b.g_head[1] += weight * (g_stds * np.where(stds > STD_FLOOR, 0.5 * stds, 0.0))

    def add_prior_reg(self, b, weight, beta):
        """Add ``weight`` times the prior regularizer; False if the batch must be skipped."""
        cfg = self.config
        prior = self.model.prior
        if self.probabilistic:
            try:
                reg, T, (g_mp, g_lp, g_mq, g_lq), terms = _posterior_reg(
                    self.model, b.mu, b.lv, beta, self.opts
                )
            except SolverDegenerateError:
                self.report.skipped_batches += 1
                return False
            self.report.final_plan = T
            b.g_head[0] += weight * g_mq
            b.g_head[1] += weight * g_lq
            b.g_prior = [weight * g_mp, weight * g_lp]
        else:
            n, M = b.z.shape
            k = self.prior_rng.integers(0, prior.K, size=n)
            eps_p = self.prior_rng.standard_normal((n, M))
            sp = prior.stds
            zp = prior.means[k] + eps_p * sp[k]
            proj = sample_projections(M, cfg.L, rng=self.proj_rng)
            reg, g_z, g_zp, terms = sliced_fgw_with_grad(b.z, zp, beta, proj, return_terms=True)
            b.g_head[0] += weight * g_z
            g_means = np.zeros_like(prior.means)
            g_sig = np.zeros_like(prior.means)
            np.add.at(g_means, k, g_zp)
            np.add.at(g_sig, k, g_zp * eps_p)
            dsp = np.where(sp > STD_FLOOR, 0.5 * sp, 0.0)
            b.g_prior = [weight * g_means, weight * g_sig * dsp]
        b.reg = reg
        b.terms = terms
        return True

    def update(self, b):
        grad_head = np.hstack(b.g_head) if self.probabilistic else b.g_head[0]
        enc_grads, _ = mlp_grad(self.model.encoder, b.enc, grad_head)
        grads = enc_grads + b.dec_grads
        if self.config.learn_prior:
            grads = grads + b.g_prior
        adam_step(self.adam, self.params, grads)
        sums = self._sums
        sums[0] += b.recon
        sums[1] += b.reg
        sums[2] += b.terms[0]
        sums[3] += b.terms[1]
        sums[4] += 1

    def start_epoch(self):
        self._sums = [0.0, 0.0, 0.0, 0.0, 0]

    def end_epoch(self, seconds, epoch):
        recon, reg, w, gw, n_done = self._sums
        denom = max(n_done, 1)
        rep = self.report
        rep.recon_loss.append(recon / denom)
        rep.reg_value.append(reg / denom)
        rep.w_term.append(w / denom)
        rep.gw_term.append(gw / denom)
        rep.seconds.append(seconds)
        _check_finite(rep.recon_loss[-1], "reconstruction loss", epoch)


def _train(config, data, probabilistic):
    view = ViewTrainer(config, data, probabilistic)
    use_reg = config.gamma > 0.0
    for epoch in range(config.epochs):
        start = time.perf_counter()
        view.start_epoch()
        for idx in view.batches():
            b = view.forward(idx)
            if use_reg and not view.add_prior_reg(b, config.gamma, config.beta):
                continue
            _check_finite(b.recon + config.gamma * b.reg, "training loss", epoch)
            view.update(b)
        view.end_epoch(time.perf_counter() - start, epoch)
    return view.model, view.report


def train_prae(config, data):
    """Probabilistic RAE with a hierarchical FGW regularizer.

    Returns ``(encoder, decoder, prior, report)``.  A batch whose transport
    problem degenerates is skipped and counted in
    ``report.skipped_batches``; a non-finite loss raises
    :class:`SolverDegenerateError`.
    """
    model, report = _train(config, data, probabilistic=True)
    return model.encoder, model.decoder, model.prior, report


def train_drae(config, data):
    """Deterministic RAE with a sliced FGW regularizer.

    Every batch draws one prior sample per data point (uniform component,
    then reparameterized) and ``config.L`` fresh projections.  Returns
    ``(encoder, decoder, prior, report)``.
    """
    model, report = _train(config, data, probabilistic=False)
    return model.encoder, model.decoder, model.prior, report


def encode(encoder, X, latent_dim=None):
    """Latent codes of ``X``; for a probabilistic encoder the means and stds.

    Pass ``latent_dim`` when the encoder has a (mean, log-variance) head.
    """
    out = mlp_apply(encoder, _as_samples(X)).output
    if latent_dim is None or out.shape[1] == latent_dim:
        return out
    mu, lv = _split_head(out, latent_dim)
    return mu, np.maximum(np.exp(0.5 * lv), STD_FLOOR)


def conditional_generate(decoder, prior, k, n, seed):
    """Decode ``n`` draws from prior component ``k``."""
    if not 0 <= k < prior.K:
        raise InvalidInputError(f"component {k} out of range for K={prior.K}")
    if n < 0:
        raise InvalidInputError("count must be >= 0")
    if n == 0:
        return np.zeros((0, decoder.out_dim))
    rng = rng_stream(seed, "prior")
    mean = np.broadcast_to(prior.means[k], (n, prior.dim))
    lv = np.broadcast_to(2.0 * np.log(prior.stds[k]), (n, prior.dim))
    z, _ = reparam_sample(mean, lv, rng=rng)
    return PointCloud(decoder(z))


def transport_assignment(encoder, prior, X, beta, opts=None, probabilistic=True):
    """Assign every sample to a prior component through the optimal coupling.

    The whole data set is encoded into one posterior mixture (point masses
    for a deterministic encoder), coupled to the prior by hierarchical FGW,
    and each sample takes the argmax component of its column.
    """
    X = _as_samples(X)
    if probabilistic:
        mu, sd = encode(encoder, X, prior.dim)
        posterior = GaussianMixture(mu, sd)
    else:
        mu = encode(encoder, X)
        posterior = GaussianMixture(mu, np.zeros_like(mu), std_floor=0.0)
    plan, _ = hierarchical_fgw(prior.mixture(), posterior, beta, opts)
    return np.argmax(plan.coupling, axis=0)


def cluster_purity(assignment, labels):
    """Fraction of samples whose label is the majority label of their group."""
    assignment = np.asarray(assignment)
    labels = np.asarray(labels)
    if assignment.shape != labels.shape or assignment.size == 0:
        raise InvalidInputError("assignment and labels must be equal-length and non-empty")
    hits = 0
    for g in np.unique(assignment):
        hits += np.bincount(labels[assignment == g]).max()
    return hits / assignment.size


def save_checkpoint(path, encoder, decoder, prior, config=None):
    payload = {
        "encoder": encoder.to_dict(),
        "decoder": decoder.to_dict(),
        "prior": prior.to_dict(),
    }
    if config is not None:
        payload["config"] = asdict(config)
    Path(path).write_text(json.dumps(payload) + "\n")


def load_checkpoint(path):
    """Returns ``(encoder, decoder, prior, config_or_None)``."""
    path = Path(path)
    try:
        d = json.loads(path.read_text())
        encoder = Mlp.from_dict(d["encoder"])
        decoder = Mlp.from_dict(d["decoder"])
        prior = RaePrior.from_dict(d["prior"])
    except OSError as exc:
        raise ParseError(exc.strerror or str(exc), str(path)) from None
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"{path}: line {exc.lineno}") from None
    except (KeyError, TypeError, InvalidInputError) as exc:
        raise ParseError(f"malformed checkpoint ({exc})", str(path)) from None
    config = config_from_dict(TrainConfig, d["config"], str(path)) if "config" in d else None
    return encoder, decoder, prior, config
