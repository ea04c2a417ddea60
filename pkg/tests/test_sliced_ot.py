import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fgwrae.errors import InvalidInputError
from fgwrae.sliced_ot import (
    ANTI_IDENTITY,
    IDENTITY,
    ProjectionSet,
    brute_force_fgw_1d,
    fgw_1d,
    fgw_1d_objective,
    project_sort,
    sample_projections,
    sliced_fgw,
    sliced_fgw_with_grad,
    closed_form_rule,
)

BETAS = (0.1, 0.5, 0.9, 1.0)


def sorted_pair(rng, n, scale=1.0):
    return np.sort(rng.normal(0, scale, n)), np.sort(rng.normal(0, scale, n))


def naive_objective(x, y, beta):
    n = len(x)
    w = sum((x[i] - y[i]) ** 2 for i in range(n))
    gw = sum(((x[i] - x[j]) ** 2 - (y[i] - y[j]) ** 2) ** 2 for i in range(n) for j in range(n))
    return (1 - beta) / n * w + beta / n * gw


class TestObjective:
    def test_hand_value(self):
        # identity: 0.25 W + 4.5 GW; anti-identity: 1.25 W + 4.5 GW
        assert fgw_1d_objective([0.0, 1.0], [0.0, 2.0], 0.5) == pytest.approx(4.75, abs=1e-15)
        assert fgw_1d_objective([0.0, 1.0], [2.0, 0.0], 0.5) == pytest.approx(5.75, abs=1e-15)

    def test_matches_loops(self):
        rng = np.random.default_rng(3)
        x, y = rng.normal(size=5), rng.normal(size=5)
        for beta in (0.0, 0.3, 1.0):
            assert fgw_1d_objective(x, y, beta) == pytest.approx(naive_objective(x, y, beta), rel=1e-12)

    def test_matches_loops_off_centre(self):
        rng = np.random.default_rng(5)
        x, y = rng.normal(40.0, 3.0, size=30), rng.normal(-7.0, 0.5, size=30)
        assert fgw_1d_objective(x, y, 0.7) == pytest.approx(naive_objective(x, y, 0.7), rel=1e-10)

    def test_self_is_exactly_zero(self):
        x = np.random.default_rng(6).normal(size=50)
        assert fgw_1d_objective(x, x, 1.0) == 0.0

    def test_batched(self):
        rng = np.random.default_rng(4)
        xs, ys = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        expected = [fgw_1d_objective(x, y, 0.4) for x, y in zip(xs, ys)]
        np.testing.assert_allclose(fgw_1d_objective(xs, ys, 0.4), expected, rtol=1e-14)


class TestFgw1d:
    def test_equal_inputs(self):
        sol = fgw_1d([0.0, 1.0, 3.0], [0.0, 1.0, 3.0], 0.5)
        assert sol.permutation_kind == IDENTITY
        assert sol.value == 0.0

    def test_symmetric_tie_goes_to_identity(self):
        x = [-1.0, 0.0, 1.0]
        sol = fgw_1d(x, x, 1.0)
        assert sol.permutation_kind == IDENTITY
        assert sol.value == 0.0
        assert closed_form_rule(x, x, 1.0) == IDENTITY

    def test_hand_example(self):
        sol = fgw_1d([0.0, 1.0], [0.0, 2.0], 0.5)
        assert sol.permutation_kind == IDENTITY
        assert sol.value == pytest.approx(4.75, abs=1e-15)

    def test_anti_identity_selected(self):
        # mirrored gaps: the GW term prefers the flip, beta=1 removes the W pull
        x = np.array([0.0, 0.1, 2.0])
        y = np.array([0.0, 1.9, 2.0])
        sol = fgw_1d(x, y, 1.0)
        assert sol.permutation_kind == ANTI_IDENTITY
        assert sol.value == pytest.approx(0.0, abs=1e-12)

    def test_beta_zero_is_sorted_matching(self):
        x, y = [0.0, 1.0, 5.0], [1.0, 2.0, 3.0]
        sol = fgw_1d(x, y, 0.0)
        assert sol.permutation_kind == IDENTITY
        assert sol.value == pytest.approx((1 + 1 + 4) / 3, abs=1e-15)

    def test_n5_matches_all_permutations(self):
        x, y = sorted_pair(np.random.default_rng(5), 5)
        best = min(
            naive_objective(x, y[list(p)], 0.5) for p in itertools.permutations(range(5))
        )
        assert fgw_1d(x, y, 0.5).value == pytest.approx(best, abs=1e-9)

    def test_oracle_200_instances(self):
        rng = np.random.default_rng(2024)
        for _ in range(200):
            n = int(rng.integers(1, 7))
            beta = BETAS[int(rng.integers(len(BETAS)))]
            x, y = sorted_pair(rng, n)
            assert abs(fgw_1d(x, y, beta).value - brute_force_fgw_1d(x, y, beta)) <= 1e-9

    def test_rule_never_beats_exact(self):
        rng = np.random.default_rng(6)
        agree = 0
        for _ in range(200):
            x, y = sorted_pair(rng, 5)
            rule = fgw_1d(x, y, 0.5, method="rule")
            exact = fgw_1d(x, y, 0.5)
            agree += rule.permutation_kind == exact.permutation_kind
            assert exact.value <= rule.value + 1e-12
        assert agree >= 160

    @settings(max_examples=50, deadline=None)
    @given(
        st.integers(0, 10_000),
        st.floats(-50, 50),
        st.floats(-50, 50),
        st.sampled_from(BETAS),
    )
    def test_translation_invariant_choice(self, seed, tx, ty, beta):
        x, y = sorted_pair(np.random.default_rng(seed), 5)
        base = fgw_1d(x, y, beta)
        moved = fgw_1d(x + tx, y + ty, beta)
        assert moved.permutation_kind == base.permutation_kind
        same = fgw_1d(x + tx, y + tx, beta)
        assert same.value == pytest.approx(base.value, rel=1e-6, abs=1e-9)

    def test_rule_translation_invariant(self):
        x, y = sorted_pair(np.random.default_rng(7), 6)
        assert closed_form_rule(x + 3.0, y - 8.0, 0.3) == closed_form_rule(x, y, 0.3)

    def test_unsorted_rejected(self):
        with pytest.raises(InvalidInputError):
            fgw_1d([1.0, 0.0], [0.0, 1.0], 0.5)

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            fgw_1d([0.0, 1.0], [0.0], 0.5)

    def test_bad_beta(self):
        with pytest.raises(InvalidInputError):
            fgw_1d([0.0], [0.0], 1.5)
        with pytest.raises(InvalidInputError):
            closed_form_rule([0.0], [0.0], 0.0)


class TestBruteForce:
    def test_equal_inputs(self):
        assert brute_force_fgw_1d([0.0, 2.0, 3.0], [0.0, 2.0, 3.0], 0.7) == 0.0

    def test_pure_w_pair(self):
        assert brute_force_fgw_1d([0.0, 1.0], [0.0, 1.0], 0.0) == 0.0

    def test_n4_beta03(self):
        x, y = sorted_pair(np.random.default_rng(8), 4)
        assert fgw_1d(x, y, 0.3).value == pytest.approx(brute_force_fgw_1d(x, y, 0.3), abs=1e-9)

    def test_refuses_large_n(self):
        with pytest.raises(InvalidInputError):
            brute_force_fgw_1d(np.arange(9.0), np.arange(9.0), 0.5)


class TestProjections:
    def test_unit_norm(self):
        P = sample_projections(4, 20, seed=0)
        np.testing.assert_allclose(np.linalg.norm(P.directions, axis=1), 1.0, atol=1e-12)
        assert len(P) == 20 and P.dim == 4

    def test_one_dimension_signs(self):
        P = sample_projections(1, 3, seed=1)
        assert set(np.abs(P.directions.ravel())) == {1.0}

    def test_deterministic(self):
        a = sample_projections(5, 50, seed=11)
        b = sample_projections(5, 50, seed=11)
        np.testing.assert_array_equal(a.directions, b.directions)

    def test_isotropy(self):
        P = sample_projections(3, 10_000, seed=2)
        assert np.linalg.norm(P.directions.mean(axis=0)) < 0.05

    def test_bad_sizes(self):
        with pytest.raises(InvalidInputError):
            sample_projections(0, 3, seed=0)
        with pytest.raises(InvalidInputError):
            sample_projections(2, 0, seed=0)

    def test_project_sort_stable(self):
        X = np.array([[1.0, 0.0], [0.0, 5.0], [1.0, 3.0]])
        P = ProjectionSet(np.array([[1.0, 0.0]]))
        vals, order = project_sort(X, P)
        np.testing.assert_array_equal(vals, [[0.0, 1.0, 1.0]])
        np.testing.assert_array_equal(order, [[1, 0, 2]])


class TestSlicedFgw:
    def test_self_distance_zero(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(12, 3))
        P = sample_projections(3, 25, seed=0)
        for beta in (0.0, 0.5, 1.0):
            assert sliced_fgw(X, X, beta, P) == 0.0

    def test_beta_zero_is_sliced_wasserstein(self):
        rng = np.random.default_rng(10)
        X, Y = rng.normal(size=(8, 2)), rng.normal(size=(8, 2))
        P = sample_projections(2, 6, seed=1)
        xs, _ = project_sort(X, P)
        ys, _ = project_sort(Y, P)
        expected = np.mean(np.mean((xs - ys) ** 2, axis=1))
        assert sliced_fgw(X, Y, 0.0, P) == pytest.approx(expected, rel=1e-13)

    def test_per_slice_oracle(self):
        rng = np.random.default_rng(11)
        X, Y = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
        P = sample_projections(2, 4, seed=2)
        xs, _ = project_sort(X, P)
        ys, _ = project_sort(Y, P)
        expected = np.mean([brute_force_fgw_1d(x, y, 0.5) for x, y in zip(xs, ys)])
        assert abs(sliced_fgw(X, Y, 0.5, P) - expected) <= 1e-9

    def test_concat_with_self_unchanged(self):
        rng = np.random.default_rng(12)
        X, Y = rng.normal(size=(10, 3)), rng.normal(size=(10, 3))
        P = sample_projections(3, 7, seed=3)
        assert sliced_fgw(X, Y, 0.4, P.concat(P)) == pytest.approx(sliced_fgw(X, Y, 0.4, P), abs=1e-12)

    def test_frozen_value(self):
        X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
        Y = np.array([[0.5, 0.5], [1.0, 1.0], [2.0, 0.0]])
        P = ProjectionSet(np.array([[1.0, 0.0], [0.0, 1.0]]))
        # slice 1: x=[0,0,1], y=[0.5,1,2]; slice 2: x=[0,0,2], y=[0,0.5,1]
        expected = 0.5 * (brute_force_fgw_1d([0, 0, 1], [0.5, 1, 2], 0.5)
                          + brute_force_fgw_1d([0, 0, 2], [0, 0.5, 1], 0.5))
        assert sliced_fgw(X, Y, 0.5, P) == pytest.approx(expected, abs=1e-12)

    def test_size_mismatch(self):
        P = sample_projections(2, 3, seed=0)
        with pytest.raises(InvalidInputError):
            sliced_fgw(np.zeros((3, 2)), np.zeros((4, 2)), 0.5, P)

    def test_dimension_mismatch(self):
        P = sample_projections(3, 3, seed=0)
        with pytest.raises(InvalidInputError):
            sliced_fgw(np.zeros((3, 2)), np.zeros((3, 2)), 0.5, P)

    def test_cross_dimension_needs_beta_one(self):
        rng = np.random.default_rng(13)
        X, Y = rng.normal(size=(5, 2)), rng.normal(size=(5, 3))
        Px, Py = sample_projections(2, 4, seed=0), sample_projections(3, 4, seed=1)
        assert sliced_fgw(X, Y, 1.0, Px, projections_y=Py) >= 0.0
        with pytest.raises(InvalidInputError):
            sliced_fgw(X, Y, 0.5, Px, projections_y=Py)


class TestSlicedGradient:
    @pytest.mark.parametrize("beta", [0.0, 0.3, 1.0])
    def test_value_matches(self, beta):
        rng = np.random.default_rng(14)
        X, Y = rng.normal(size=(7, 2)), rng.normal(size=(7, 2))
        P = sample_projections(2, 5, seed=4)
        value, _, _ = sliced_fgw_with_grad(X, Y, beta, P)
        assert value == pytest.approx(sliced_fgw(X, Y, beta, P), rel=1e-14)

    @pytest.mark.parametrize("beta", [0.0, 0.3, 1.0])
    def test_finite_differences(self, beta):
        rng = np.random.default_rng(15)
        X, Y = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
        P = sample_projections(3, 4, seed=5)
        _, gX, gY = sliced_fgw_with_grad(X, Y, beta, P)
        h = 1e-6
        for G, which in ((gX, 0), (gY, 1)):
            num = np.zeros_like(G)
            for idx in np.ndindex(G.shape):
                pair = [X.copy(), Y.copy()]
                pair[which][idx] += h
                up = sliced_fgw(*pair, beta, P)
                pair[which][idx] -= 2 * h
                down = sliced_fgw(*pair, beta, P)
                num[idx] = (up - down) / (2 * h)
            np.testing.assert_allclose(G, num, rtol=1e-5, atol=1e-7)

    def test_terms_sum_to_value(self):
        rng = np.random.default_rng(16)
        X, Y = rng.normal(size=(9, 2)), rng.normal(size=(9, 2))
        P = sample_projections(2, 8, seed=6)
        value, _, _, (w, gw) = sliced_fgw_with_grad(X, Y, 0.2, P, return_terms=True)
        assert w + gw == pytest.approx(value, rel=1e-12)
