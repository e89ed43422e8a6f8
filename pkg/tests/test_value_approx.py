"""Tests for the polynomial value approximation and its training loop."""

import time

import numpy as np
import pytest
from scipy import linalg as spla

from src.controllers import ApproxController
from src.models import StageCost, WeightSchedule
from src.pendulum import input_map
from src.plant import constant_weights, linear_plant
from src.synthesis import sdre_gain
from src.value_approx import (
    InsufficientSamples,
    NonFiniteTarget,
    RankDeficient,
    approx_control,
    approx_value,
    basis_functions,
    hjbi_residual,
    least_squares_fit,
    monomial_basis,
    quadratic_weights,
    stage_cost,
    train_weights,
)
from tests.conftest import fixed_schedule


class TestBasis:

    @pytest.mark.parametrize("n, degree, count", [(4, 2, 10), (2, 3, 7), (4, 6, 205), (1, 4, 3)])
    def test_term_count(self, n, degree, count):
        assert monomial_basis(n, degree).count == count

    def test_rejects_linear_basis(self):
        with pytest.raises(ValueError):
            monomial_basis(2, 1)

    def test_batch_matches_pointwise(self, rng):
        functions = basis_functions(monomial_basis(3, 4))
        states = rng.uniform(-1.0, 1.0, size=(7, 3))
        weights = rng.standard_normal(functions.count)

        batch = functions.features_batch(states)
        for j, x in enumerate(states):
            np.testing.assert_allclose(batch[:, j], functions.features(x), rtol=1e-13)

        gradients = functions.gradient_batch(states, weights)
        hessians = functions.hessian_batch(states, weights)
        for j, x in enumerate(states):
            np.testing.assert_allclose(gradients[j], functions.gradient(x, weights), rtol=1e-12, atol=1e-11)
            np.testing.assert_allclose(hessians[j], functions.hessian(x, weights), rtol=1e-12, atol=1e-11)

    def test_gradient_matches_finite_differences(self, rng):
        functions = basis_functions(monomial_basis(4, 4))
        weights = rng.standard_normal(functions.count)
        h = 1e-6
        for x in rng.uniform(-1.0, 1.0, size=(10, 4)):
            numeric = np.array([
                (functions.features(x + h * e) - functions.features(x - h * e)) @ weights / (2 * h)
                for e in np.eye(4)
            ])
            np.testing.assert_allclose(functions.gradient(x, weights), numeric, rtol=1e-6, atol=1e-7)

    def test_hessian_matches_finite_differences(self, rng):
        functions = basis_functions(monomial_basis(3, 3))
        weights = rng.standard_normal(functions.count)
        h = 1e-5
        for x in rng.uniform(-1.0, 1.0, size=(10, 3)):
            numeric = np.array([
                (functions.gradient(x + h * e, weights) - functions.gradient(x - h * e, weights)) / (2 * h)
                for e in np.eye(3)
            ])
            hessian = functions.hessian(x, weights)
            np.testing.assert_allclose(hessian, numeric, rtol=1e-5, atol=1e-6)
            np.testing.assert_allclose(hessian, hessian.T, atol=1e-12)

    def test_quadratic_weights_reproduce_quadratic_form(self, rng):
        spec = monomial_basis(4, 3)
        root = rng.standard_normal((4, 4))
        p_mat = root @ root.T
        weights = quadratic_weights(spec, p_mat)
        functions = basis_functions(spec)
        for x in rng.standard_normal((5, 4)):
            assert functions.features(x) @ weights == pytest.approx(x @ p_mat @ x, rel=1e-12)
            np.testing.assert_allclose(functions.gradient(x, weights), 2 * p_mat @ x, rtol=1e-10, atol=1e-12)


class TestLeastSquares:

    def test_exact_fit(self, rng):
        upsilon = rng.standard_normal((3, 12))
        weights = np.array([1.0, -2.0, 0.5])
        np.testing.assert_allclose(least_squares_fit(upsilon, weights @ upsilon), weights, rtol=1e-12)

    def test_identical_samples_are_rank_deficient(self):
        upsilon = np.tile(np.array([[1.0], [2.0], [3.0]]), (1, 10))
        with pytest.raises(RankDeficient):
            least_squares_fit(upsilon, np.ones(10))

    def test_too_few_samples(self, rng):
        with pytest.raises(RankDeficient):
            least_squares_fit(rng.standard_normal((5, 3)), np.ones(3))

    def test_non_finite_targets(self, rng):
        with pytest.raises(NonFiniteTarget):
            least_squares_fit(rng.standard_normal((2, 4)), np.array([1.0, np.nan, 0.0, 0.0]))


class TestTraining:

    def test_greedy_mode_matches_discrete_riccati(self, scalar_plant, scalar_weights):
        schedule = train_weights(
            scalar_plant, monomial_basis(1, 2), stage_cost(scalar_weights, 1.0),
            horizon=200, eta=20, domain=[(-1.0, 1.0)], seed=3,
        )
        expected = spla.solve_discrete_are(np.array([[0.9]]), np.array([[0.1]]), np.eye(1), np.eye(1))
        assert schedule.converged
        assert schedule.final_weights[0] == pytest.approx(expected[0, 0], rel=1e-8)
        assert schedule.weights_by_step.shape == (201, 1)
        assert schedule.weights_by_step[-1, 0] == pytest.approx(1.0)

    def test_drift_only_mode(self, scalar_plant, scalar_weights):
        schedule = train_weights(
            scalar_plant, monomial_basis(1, 2), stage_cost(scalar_weights, 1.0),
            horizon=300, eta=20, domain=[(-1.0, 1.0)], seed=3, mode="drift-only",
        )
        assert schedule.converged
        assert schedule.final_weights[0] == pytest.approx(1.0 / 0.19, rel=1e-8)

    def test_terminal_step_is_stage_cost(self, scalar_plant, scalar_weights):
        schedule = train_weights(
            scalar_plant, monomial_basis(1, 2), stage_cost(scalar_weights, 1.0),
            horizon=5, eta=20, domain=[(-1.0, 1.0)], seed=3,
        )
        assert schedule.weights_by_step[5, 0] == pytest.approx(1.0, rel=1e-12)

    def test_same_seed_same_weights(self, plant, weights):
        kwargs = dict(horizon=5, eta=60, domain=[(-0.5, 0.5)] * 4, seed=11)
        cost = stage_cost(weights, 0.01)
        first = train_weights(plant, monomial_basis(4, 2), cost, **kwargs)
        second = train_weights(plant, monomial_basis(4, 2), cost, **kwargs)
        np.testing.assert_array_equal(first.weights_by_step, second.weights_by_step)

    def test_insufficient_samples(self, plant, weights):
        with pytest.raises(InsufficientSamples):
            train_weights(
                plant, monomial_basis(4, 2), stage_cost(weights, 0.01),
                horizon=3, eta=5, domain=[(-1.0, 1.0)] * 4, seed=0,
            )

    def test_rejects_bad_domain(self, scalar_plant, scalar_weights):
        with pytest.raises(ValueError):
            train_weights(
                scalar_plant, monomial_basis(1, 2), stage_cost(scalar_weights, 1.0),
                horizon=3, eta=5, domain=[(1.0, -1.0)], seed=0,
            )

    def test_rejects_unknown_mode(self, scalar_plant, scalar_weights):
        with pytest.raises(ValueError):
            train_weights(
                scalar_plant, monomial_basis(1, 2), stage_cost(scalar_weights, 1.0),
                horizon=3, eta=5, domain=[(-1.0, 1.0)], seed=0, mode="policy",
            )

    def test_offset_column_keeps_quartic_cost_out_of_other_weights(self):
        plant = linear_plant(np.zeros((2, 2)), [[1.0], [0.0]])
        cost = StageCost(q_of_x=lambda x: np.diag([1.0, 1.0 + x[1] ** 2]), r_of_x=lambda x: np.eye(1), dt=0.1)
        spec = monomial_basis(2, 2)
        schedule = train_weights(plant, spec, cost, horizon=1, eta=20_000, domain=[(-1.0, 1.0), (-2.0, 2.0)],
                                 seed=5, mode="drift-only")
        terminal = dict(zip(spec.terms, schedule.weights_by_step[1]))
        # Without the constant column the x2^4 term drags the x1^2 weight negative
        assert terminal[(2, 0)] == pytest.approx(0.1, rel=0.15)
        assert abs(terminal[(1, 1)]) < 0.015
        assert terminal[(0, 2)] > 0.1

    def test_resampling_still_reaches_the_discrete_riccati_value(self, scalar_plant, scalar_weights):
        schedule = train_weights(
            scalar_plant, monomial_basis(1, 2), stage_cost(scalar_weights, 1.0),
            horizon=200, eta=20, domain=[(-1.0, 1.0)], seed=3, resample=True,
        )
        expected = spla.solve_discrete_are(np.array([[0.9]]), np.array([[0.1]]), np.eye(1), np.eye(1))
        assert schedule.resampled
        assert schedule.converged
        assert schedule.final_weights[0] == pytest.approx(expected[0, 0], rel=1e-8)

    def test_resampling_draws_new_states_each_step(self, plant, weights):
        kwargs = dict(horizon=5, eta=60, domain=[(-0.5, 0.5)] * 4, seed=11)
        cost = stage_cost(weights, 0.01)
        fixed = train_weights(plant, monomial_basis(4, 2), cost, **kwargs)
        redrawn = train_weights(plant, monomial_basis(4, 2), cost, resample=True, **kwargs)
        again = train_weights(plant, monomial_basis(4, 2), cost, resample=True, **kwargs)
        np.testing.assert_array_equal(fixed.weights_by_step[5], redrawn.weights_by_step[5])
        assert not np.array_equal(fixed.weights_by_step[0], redrawn.weights_by_step[0])
        np.testing.assert_array_equal(redrawn.weights_by_step, again.weights_by_step)
        assert not fixed.resampled


class TestOnlineEvaluation:

    def test_value_and_extrapolation_flag(self):
        schedule = fixed_schedule(2.0)
        inside = approx_value(np.array([0.5]), schedule)
        assert inside.value == pytest.approx(0.5)
        np.testing.assert_allclose(inside.gradient, [2.0])
        assert not inside.extrapolated
        assert approx_value(np.array([2.0]), schedule).extrapolated

    def test_hjbi_residual_scalar(self):
        plant = linear_plant([[-1.0]], [[1.0]])
        residual = hjbi_residual(np.array([0.5]), fixed_schedule(2.0), plant, lambda x: np.eye(1))
        assert residual == pytest.approx(3.0)

    def test_controller_recovers_lqr_gain(self):
        plant = linear_plant([[1.0]], [[1.0]])
        weights = constant_weights([[1.0]], [[1.0]], [[0.0]])
        schedule = train_weights(
            plant, monomial_basis(1, 2), stage_cost(weights, 0.01),
            horizon=3000, eta=20, domain=[(-1.0, 1.0)], seed=0,
        )
        controller = ApproxController(plant, schedule, weights.r_of_x)
        u, k_gain = controller.compute(np.array([0.4]))
        assert k_gain is None
        assert u[0] / 0.4 == pytest.approx(-(1.0 + np.sqrt(2.0)), rel=0.02)

    def test_value_gradient_matches_finite_differences(self, rng):
        spec = monomial_basis(4, 4)
        schedule = WeightSchedule(
            weights_by_step=np.vstack([rng.standard_normal(spec.count)] * 2),
            horizon=1, basis=spec, domain=((-1.0, 1.0),) * 4, eta=1, seed=0, converged=True,
        )
        h = 1e-6
        for x in rng.uniform(-1.0, 1.0, size=(1000, 4)):
            gradient = approx_value(x, schedule).gradient
            numeric = np.array([
                (approx_value(x + h * e, schedule).value - approx_value(x - h * e, schedule).value) / (2 * h)
                for e in np.eye(4)
            ])
            assert np.linalg.norm(gradient - numeric) <= 1e-6 * (1.0 + np.linalg.norm(gradient))

    @pytest.mark.slow
    def test_online_evaluation_is_cheaper_than_sdre(self, rng, params, plant, weights):
        spec = monomial_basis(4, 2)
        schedule = WeightSchedule(
            weights_by_step=np.vstack([np.ones(spec.count)] * 2),
            horizon=1, basis=spec, domain=((-1.0, 1.0),) * 4, eta=1, seed=0, converged=True,
        )
        b_mat = input_map(params)
        states = rng.uniform(-0.5, 0.5, size=(10_000, 4))

        start = time.perf_counter()
        for x in states:
            approx_control(x, schedule, lambda z: 2.0 * weights.r_of_x(z), lambda z: b_mat)
        approx_seconds = time.perf_counter() - start

        start = time.perf_counter()
        for x in states:
            sdre_gain(plant.sdc(x), weights)
        sdre_seconds = time.perf_counter() - start

        assert sdre_seconds >= 10.0 * approx_seconds
