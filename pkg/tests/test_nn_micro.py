import numpy as np
import pytest

from fgwrae.errors import InvalidInputError, InvalidStateError
from fgwrae.nn_micro import (
    AdamState,
    Mlp,
    adam_step,
    mlp_apply,
    mlp_grad,
    reparam_backward,
    reparam_sample,
)


def random_architecture(rng):
    n_layers = int(rng.integers(1, 4))
    sizes = [int(s) for s in rng.integers(1, 17, size=n_layers + 1)]
    acts = [str(a) for a in rng.choice(["relu", "identity"], size=n_layers)]
    model = Mlp(sizes, acts, rng=rng)
    # nonzero biases keep pre-activations off the relu kink at 0
    for i in range(n_layers):
        model.params[2 * i + 1] = rng.normal(0, 0.5, sizes[i + 1])
    return model


def fd_check(model, X, direction, h=1e-5):
    """Max relative error between analytic and central-difference gradients."""
    cache = mlp_apply(model, X)
    grads, g_in = mlp_grad(model, cache, direction)

    def loss():
        return float(np.sum(mlp_apply(model, X).output * direction))

    worst = 0.0
    for p, g in zip(model.params, grads):
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss()
            p[idx] = old - h
            down = loss()
            p[idx] = old
            num[idx] = (up - down) / (2 * h)
        worst = max(worst, np.max(np.abs(g - num)) / max(np.max(np.abs(num)), 1e-8))
    num_in = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        Xp, Xm = X.copy(), X.copy()
        Xp[idx] += h
        Xm[idx] -= h
        num_in[idx] = (np.sum(mlp_apply(model, Xp).output * direction)
                       - np.sum(mlp_apply(model, Xm).output * direction)) / (2 * h)
    worst = max(worst, np.max(np.abs(g_in - num_in)) / max(np.max(np.abs(num_in)), 1e-8))
    return worst


class TestMlpApply:
    def test_zero_network(self):
        model = Mlp([3, 4, 2], seed=0)
        model.params = [np.zeros_like(p) for p in model.params]
        np.testing.assert_array_equal(model(np.ones((5, 3))), np.zeros((5, 2)))

    def test_linear_layer(self):
        model = Mlp([2, 2], ["identity"], seed=0)
        W = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([0.5, -1.0])
        model.params = [W, b]
        np.testing.assert_array_equal(model(np.array([[1.0, 1.0]])), [[4.5, 5.0]])

    def test_shapes(self):
        model = Mlp([2, 16, 2], seed=1)
        cache = mlp_apply(model, np.random.default_rng(0).normal(size=(7, 2)))
        assert np.all(np.isfinite(cache.output))
        assert [z.shape for z in cache.preacts] == [(7, 16), (7, 2)]
        assert [h.shape for h in cache.inputs] == [(7, 2), (7, 16)]

    def test_glorot_range(self):
        model = Mlp([4, 6], seed=2)
        assert np.max(np.abs(model.params[0])) <= np.sqrt(6.0 / 10.0)
        np.testing.assert_array_equal(model.params[1], 0.0)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            mlp_apply(Mlp([3, 2], seed=0), np.zeros((4, 2)))

    def test_bad_activation(self):
        with pytest.raises(InvalidInputError):
            Mlp([2, 2], ["tanh"])

    def test_dict_roundtrip(self):
        model = Mlp([3, 5, 2], seed=3)
        clone = Mlp.from_dict(model.to_dict())
        X = np.random.default_rng(1).normal(size=(4, 3))
        np.testing.assert_array_equal(clone(X), model(X))


class TestMlpGrad:
    def test_identity_network(self):
        model = Mlp([3, 3], ["identity"], seed=0)
        model.params = [np.eye(3), np.zeros(3)]
        X = np.array([[1.0, -2.0, 0.5]])
        cache = mlp_apply(model, X)
        _, g_in = mlp_grad(model, cache, cache.output)  # d(0.5|out|^2)/dout = out
        np.testing.assert_array_equal(g_in, X)

    def test_zero_output_gradient(self):
        model = Mlp([2, 4, 2], seed=1)
        cache = mlp_apply(model, np.ones((3, 2)))
        grads, _ = mlp_grad(model, cache, np.zeros((3, 2)))
        for g in grads:
            np.testing.assert_array_equal(g, 0.0)

    def test_small_relu_network(self):
        rng = np.random.default_rng(2)
        model = Mlp([2, 8, 2], seed=4)
        assert fd_check(model, rng.normal(size=(5, 2)), rng.normal(size=(5, 2))) < 1e-4

    def test_twenty_architectures(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            model = random_architecture(rng)
            X = rng.normal(size=(4, model.in_dim))
            direction = rng.normal(size=(4, model.out_dim))
            assert fd_check(model, X, direction) < 1e-4

    def test_stale_cache(self):
        model = Mlp([2, 2], seed=0)
        cache = mlp_apply(model, np.ones((1, 2)))
        model.params[0] += 1.0
        with pytest.raises(InvalidStateError):
            mlp_grad(model, cache, np.ones((1, 2)))

    def test_gradient_shape_mismatch(self):
        model = Mlp([2, 2], seed=0)
        cache = mlp_apply(model, np.ones((1, 2)))
        with pytest.raises(InvalidInputError):
            mlp_grad(model, cache, np.ones((2, 2)))


class TestReparam:
    def test_zero_noise(self):
        mu = np.array([1.0, -2.0])
        z, _ = reparam_sample(mu, np.array([0.3, -1.0]), noise=np.zeros(2))
        np.testing.assert_array_equal(z, mu)

    def test_unit_variance(self):
        mu = np.array([0.5, 0.5])
        z, eps = reparam_sample(mu, np.zeros(2), seed=0)
        np.testing.assert_array_equal(z, mu + eps)

    def test_moments(self):
        z, _ = reparam_sample(np.zeros(10_000), np.zeros(10_000), seed=1)
        assert abs(z.mean()) < 0.05
        assert abs(z.var() - 1.0) < 0.05

    def test_gradient_identities(self):
        lv = np.array([0.2, -0.4])
        eps = np.array([1.5, -0.3])
        g_mu, g_lv = reparam_backward(np.ones(2), eps, lv)
        np.testing.assert_array_equal(g_mu, 1.0)
        np.testing.assert_allclose(g_lv, 0.5 * np.exp(0.5 * lv) * eps, rtol=1e-15)

    def test_seeded(self):
        a, _ = reparam_sample(np.zeros(5), np.zeros(5), seed=7)
        b, _ = reparam_sample(np.zeros(5), np.zeros(5), seed=7)
        np.testing.assert_array_equal(a, b)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            reparam_sample(np.zeros(2), np.zeros(3), seed=0)


class TestAdam:
    def test_first_step_magnitude(self):
        # bias correction makes the first step lr * sign(g)
        w = [np.array([1.0, -1.0])]
        state = AdamState.for_params(w, lr=0.1)
        adam_step(state, w, [np.array([3.0, -0.5])])
        np.testing.assert_allclose(w[0], [0.9, -0.9], atol=1e-8)
        assert state.step == 1

    def test_zero_gradient(self):
        w = [np.array([1.0, 2.0])]
        state = AdamState.for_params(w)
        adam_step(state, w, [np.array([1.0, 1.0])])
        before = w[0].copy()
        m_before = state.m[0].copy()
        adam_step(state, w, [np.zeros(2)])
        np.testing.assert_allclose(state.m[0], 0.5 * m_before)
        # with zero gradient the step is driven only by decayed moments
        adam_step(AdamState.for_params(w), w, [np.zeros(2)])
        assert np.all(np.abs(w[0] - before) < 2e-3)

    def test_untouched_with_fresh_state(self):
        w = [np.array([1.0, 2.0])]
        adam_step(AdamState.for_params(w), w, [np.zeros(2)])
        np.testing.assert_array_equal(w[0], [1.0, 2.0])

    def test_constant_gradient_direction(self):
        w = [np.zeros(3)]
        state = AdamState.for_params(w)
        g = np.array([1.0, -2.0, 0.5])
        for _ in range(100):
            adam_step(state, w, [g])
        np.testing.assert_array_equal(np.sign(w[0]), -np.sign(g))

    def test_quadratic_bowl(self):
        w = [np.array([0.3, -0.4])]
        start = np.linalg.norm(w[0])
        state = AdamState.for_params(w, lr=1e-3)
        for _ in range(500):
            adam_step(state, w, [2.0 * w[0]])
        assert np.linalg.norm(w[0]) <= 0.5 * start

    def test_shape_mismatch(self):
        w = [np.zeros(2)]
        with pytest.raises(InvalidInputError):
            adam_step(AdamState.for_params(w), w, [np.zeros(3)])

    def test_deterministic_trajectory(self):
        def run():
            model = Mlp([2, 4, 1], seed=5)
            state = AdamState.for_params(model.params)
            X = np.random.default_rng(0).normal(size=(8, 2))
            for _ in range(20):
                cache = mlp_apply(model, X)
                grads, _ = mlp_grad(model, cache, cache.output)
                adam_step(state, model.params, grads)
            return model.params

        for a, b in zip(run(), run()):
            np.testing.assert_array_equal(a, b)
