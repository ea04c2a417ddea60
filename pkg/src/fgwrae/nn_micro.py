"""Small dense networks with hand-written backpropagation and Adam.

Batches are row-major: an input of shape ``(N, d_in)`` maps to ``(N, d_out)``
via ``X @ W + b`` per layer.  Everything runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, InvalidStateError

__all__ = [
    "Mlp",
    "Activations",
    "AdamState",
    "mlp_apply",
    "mlp_grad",
    "reparam_sample",
    "reparam_backward",
    "adam_step",
]

ACTIVATIONS = ("relu", "identity")


def _fingerprint(params):
    return hash(tuple(p.tobytes() for p in params))


@dataclass
class Activations:
    """Forward-pass record consumed by :func:`mlp_grad`."""

    inputs: list  # input of each layer
    preacts: list  # X @ W + b of each layer
    output: np.ndarray
    fingerprint: int


class Mlp:
    """Feed-forward network of dense layers.

    ``activations`` defaults to ReLU on hidden layers and identity on the
    output layer.  Weights are drawn uniformly in
    ``+-sqrt(6 / (fan_in + fan_out))``; biases start at zero.
    """

    def __init__(self, layer_sizes, activations=None, rng=None, seed=None):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise InvalidInputError("need at least an input and an output size, all >= 1")
        n_layers = len(sizes) - 1
        if activations is None:
            activations = ["relu"] * (n_layers - 1) + ["identity"]
        activations = list(activations)
        if len(activations) != n_layers or any(a not in ACTIVATIONS for a in activations):
            raise InvalidInputError(f"need {n_layers} activations from {ACTIVATIONS}")
        self.layer_sizes = sizes
        self.activations = activations
        rng = np.random.default_rng(seed) if rng is None else rng
        self.params = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.params.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.params.append(np.zeros(fan_out))

    @property
    def n_layers(self):
        return len(self.activations)

    @property
    def in_dim(self):
        return self.layer_sizes[0]

    @property
    def out_dim(self):
        return self.layer_sizes[-1]

    def layer(self, i):
        return self.params[2 * i], self.params[2 * i + 1]

    def __call__(self, X):
        return mlp_apply(self, X).output

    def to_dict(self):
        return {
            "layer_sizes": list(self.layer_sizes),
            "activations": list(self.activations),
            "params": [p.ravel().tolist() for p in self.params],
        }

    @classmethod
    def from_dict(cls, d):
        model = cls(d["layer_sizes"], d["activations"], seed=0)
        flat = d["params"]
        if len(flat) != len(model.params):
            raise InvalidInputError("checkpoint parameter count does not match layer sizes")
        for i, values in enumerate(flat):
            arr = np.asarray(values, dtype=np.float64)
            if arr.size != model.params[i].size:
                raise InvalidInputError(f"parameter {i} has {arr.size} values, expected {model.params[i].size}")
            model.params[i] = arr.reshape(model.params[i].shape)
        return model


def mlp_apply(model, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.in_dim:
        raise InvalidInputError(f"input must have shape (N, {model.in_dim}), got {X.shape}")
    inputs, preacts = [], []
    h = X
    for i, act in enumerate(model.activations):
        W, b = model.layer(i)
        inputs.append(h)
        z = h @ W + b
        preacts.append(z)
        h = np.maximum(z, 0.0) if act == "relu" else z
    return Activations(inputs, preacts, h, _fingerprint(model.params))


def mlp_grad(model, cache, grad_output):
    """Backpropagate ``grad_output`` (dLoss/dOutput) through ``model``.

    Returns ``(param_grads, grad_input)`` with ``param_grads`` aligned to
    ``model.params``.
    """
    if cache.fingerprint != _fingerprint(model.params):
        raise InvalidStateError("activation cache was produced with different parameters")
    g = np.asarray(grad_output, dtype=np.float64)
    if g.shape != cache.output.shape:
        raise InvalidInputError(f"grad_output shape {g.shape} != output shape {cache.output.shape}")
    grads = [None] * len(model.params)
    for i in reversed(range(model.n_layers)):
        if model.activations[i] == "relu":
            g = g * (cache.preacts[i] > 0.0)  # subgradient 0 at 0
        W, _ = model.layer(i)
        grads[2 * i] = cache.inputs[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ W.T
    return grads, g


def reparam_sample(mean, log_variance, seed=None, rng=None, noise=None):
    """Draw ``z = mean + eps * exp(log_variance / 2)``.

    ``noise`` fixes ``eps`` explicitly; otherwise it is drawn from ``rng``
    (or a generator seeded by ``seed``).  Returns ``(z, eps)``.
    """
    mean = np.asarray(mean, dtype=np.float64)
    log_variance = np.asarray(log_variance, dtype=np.float64)
    if mean.shape != log_variance.shape:
        raise InvalidInputError("mean and log_variance must have the same shape")
    if noise is None:
        rng = np.random.default_rng(seed) if rng is None else rng
        noise = rng.standard_normal(mean.shape)
    noise = np.asarray(noise, dtype=np.float64)
    return mean + noise * np.exp(0.5 * log_variance), noise


def reparam_backward(grad_z, noise, log_variance):
    """Pull ``dL/dz`` back to ``(dL/dmean, dL/dlog_variance)``."""
    sigma = np.exp(0.5 * np.asarray(log_variance, dtype=np.float64))
    grad_sigma = grad_z * noise
    return grad_z, 0.5 * sigma * grad_sigma


@dataclass
class AdamState:
    shapes: list
    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper):
        shapes = [p.shape for p in params]
        return cls(shapes, m=[np.zeros(s) for s in shapes], v=[np.zeros(s) for s in shapes], **hyper)


def adam_step(state, params, grads):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(state.shapes) or len(grads) != len(params):
        raise InvalidInputError("parameter, gradient and state counts differ")
    for p, g, s in zip(params, grads, state.shapes):
        if p.shape != s or np.shape(g) != s:
            raise InvalidInputError(f"shape mismatch: param {p.shape}, grad {np.shape(g)}, state {s}")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params
