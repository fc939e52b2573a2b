from __future__ import annotations

import math

import numpy as np
import pytest

from oracles import derivative_exact, value_exact
from stopgrad.dp import (
    ConvergenceError,
    GridDynamics,
    GridValueFunction,
    bellman_backup,
    extract_control_limit,
    make_grid,
    oracle_derivative,
    policy_value,
    policy_value_sweep,
    value_iterate,
)
from stopgrad.kernel import UniformDeteriorationKernel
from stopgrad.model import ConstantReward, LinearReward, StoppingModel
from stopgrad.sim import ReplicationStreams, estimate_value

LAM = 0.97


@pytest.fixture(scope="module")
def wsc_vi(wsc_model) -> GridValueFunction:
    return value_iterate(wsc_model)


class TestGridDynamics:
    def test_rows_integrate_to_total_living_mass(self, wsc_model):
        nodes = make_grid(wsc_model, 257)
        dyn = GridDynamics(wsc_model, nodes)
        ones = np.ones(nodes.size)
        cont = dyn.continuation(ones)
        np.testing.assert_allclose(cont[dyn.alive], 1.0, atol=1e-9)

    def test_rows_integrate_with_cuts_off_the_grid(self):
        # A kernel whose density jumps at 1 - h puts cuts strictly inside grid
        # cells for nodes like 1/3, exercising the split-panel path.
        from test_kernel import ImprovingKernel

        m = StoppingModel(ImprovingKernel(), ConstantReward(0.5), ConstantReward(0.0))
        nodes = make_grid(m, 129, extra=(1.0 / 3.0, 0.123456789))
        dyn = GridDynamics(m, nodes)
        cont = dyn.continuation(np.ones(nodes.size))
        np.testing.assert_allclose(cont[nodes < 1.0], 1.0, atol=1e-9)

    def test_grid_requires_death_threshold_node(self, wsc_model):
        with pytest.raises(ValueError):
            GridDynamics(wsc_model, np.array([0.0, 0.4, 1.0 + 1e-9]))


class TestBellman:
    def test_first_backup_is_max_of_rewards(self, wsc_model):
        nodes = make_grid(wsc_model, 65)
        v0 = GridValueFunction(nodes, np.zeros(nodes.size))
        v1 = bellman_backup(wsc_model, v0)
        interior = nodes < 1.0
        np.testing.assert_allclose(
            v1.values[interior], np.maximum(8.0 * (1.0 - nodes[interior]), 0.5), atol=1e-12
        )

    def test_first_backup_from_zero_at_origin(self, wsc_model):
        nodes = make_grid(wsc_model, 65)
        v1 = bellman_backup(wsc_model, GridValueFunction(nodes, np.zeros(nodes.size)))
        assert v1.values[0] == pytest.approx(8.0)

    def test_terminal_node_carries_living_side_limit(self, wsc_model):
        # The absorbing endpoint's slot stores the limit of living values, which
        # the quadrature requires; with V = 0 it is max(r(1), c(1)) = 0.5 here.
        nodes = make_grid(wsc_model, 65)
        v1 = bellman_backup(wsc_model, GridValueFunction(nodes, np.zeros(nodes.size)))
        assert v1.values[-1] == pytest.approx(0.5)

    def test_interior_death_region_stays_zero(self):
        m = StoppingModel(UniformDeteriorationKernel(), ConstantReward(0.5), LinearReward(8.0, 0.0), H_D=0.6)
        nodes = make_grid(m, 65)
        v1 = bellman_backup(m, GridValueFunction(nodes, np.zeros(nodes.size)))
        assert np.all(v1.values[nodes > 0.6] == 0.0)


class TestValueIteration:
    def test_converges_within_contraction_bound(self, wsc_model, wsc_vi):
        v_max = wsc_model.value_bound
        bound = math.ceil(math.log(1e-10 * (1 - LAM) / v_max) / math.log(LAM))
        assert wsc_vi.converged
        assert wsc_vi.iterations <= bound

    def test_iterates_nondecreasing(self, wsc_model):
        nodes = make_grid(wsc_model, 129)
        dyn = GridDynamics(wsc_model, nodes)
        v = GridValueFunction(nodes, np.zeros(nodes.size))
        for _ in range(40):
            v_next = bellman_backup(wsc_model, v, dyn)
            assert float((v.values - v_next.values).max()) <= 1e-10
            v = v_next

    def test_zero_budget_returns_zero_function_with_flag(self, wsc_model):
        v = value_iterate(wsc_model, max_iter=0)
        assert not v.converged
        assert np.all(v.values == 0.0)

    def test_residuals_contract(self, wsc_vi):
        hist = np.asarray(wsc_vi.residual_history[5:])
        ratios = hist[1:] / hist[:-1]
        assert np.all(ratios <= LAM + 0.02)

    def test_value_bounds_and_monotone_in_state(self, wsc_model, wsc_vi):
        assert np.all(wsc_vi.values >= 0.0)
        assert np.all(wsc_vi.values <= wsc_model.value_bound + 1e-9)
        assert float(np.diff(wsc_vi.values).max()) <= 1e-6

    def test_wsc_value_is_waiting_perpetuity(self, wsc_model, wsc_vi):
        # Never transplanting earns c every period forever (no interior death),
        # beating any transplant reward: V is the constant c / (1 - discount).
        np.testing.assert_allclose(wsc_vi.values, 0.5 / (1 - LAM), rtol=1e-8)

    def test_unit_discount_rejected(self):
        m = StoppingModel(UniformDeteriorationKernel(), ConstantReward(0.5), LinearReward(8.0, 0.0), discount=1.0)
        with pytest.raises(ValueError):
            value_iterate(m)


class TestExtractControlLimit:
    def test_wsc_example_never_transplants(self, wsc_model, wsc_vi):
        res = extract_control_limit(wsc_model, wsc_vi)
        assert res.theta == pytest.approx(1.0)
        assert res.structure_ok

    def test_zero_transplant_reward_gives_h(self, wsc_model):
        m = StoppingModel(UniformDeteriorationKernel(), ConstantReward(0.5), ConstantReward(0.0))
        v = value_iterate(m, num_nodes=257)
        assert extract_control_limit(m, v).theta == pytest.approx(1.0)

    def test_dominant_transplant_reward_gives_zero(self):
        m = StoppingModel(UniformDeteriorationKernel(), ConstantReward(0.5), ConstantReward(300.0))
        v = value_iterate(m, num_nodes=257)
        res = extract_control_limit(m, v)
        assert res.theta == pytest.approx(0.0)
        assert res.structure_ok


class TestPolicyValue:
    def test_zero_threshold_is_immediate_transplant(self, wsc_model):
        assert policy_value(wsc_model, 0.0, 0.3, num_nodes=129).value == pytest.approx(8.0 * 0.7)

    def test_start_above_threshold(self, wsc_model):
        assert policy_value(wsc_model, 0.5, 0.6, num_nodes=129).value == pytest.approx(3.2)

    @pytest.mark.parametrize("theta", [0.2, 0.5, 0.8])
    def test_matches_closed_form(self, wsc_model, theta):
        pv = policy_value(wsc_model, theta, 0.0)
        assert pv.converged
        assert pv.value == pytest.approx(value_exact(theta, LAM), abs=5e-6)

    def test_never_transplant_is_waiting_perpetuity(self, wsc_model):
        pv = policy_value(wsc_model, 1.0, 0.0)
        assert pv.value == pytest.approx(0.5 / (1 - LAM), abs=1e-7)

    def test_monte_carlo_cross_check(self, wsc_model):
        pv = policy_value(wsc_model, 0.5, 0.0)
        mean, se = estimate_value(wsc_model, 0.5, 0.0, 200, 100_000, ReplicationStreams(2024))
        assert abs(mean - pv.value) <= 3.9 * se

    def test_monte_carlo_cross_check_with_death(self):
        m = StoppingModel(UniformDeteriorationKernel(), ConstantReward(0.5), LinearReward(8.0, 0.0), H_D=0.6)
        pv = policy_value(m, 0.4, 0.0)
        mean, se = estimate_value(m, 0.4, 0.0, 200, 100_000, ReplicationStreams(2025))
        assert abs(mean - pv.value) <= 3.9 * se

    def test_non_convergence_flagged(self, wsc_model):
        pv = policy_value(wsc_model, 1.0, 0.0, max_iter=3)
        assert not pv.converged

    def test_sweep_shares_grid_and_matches_single_solves(self, wsc_model):
        thetas = [0.2, 0.8, 1.0]
        swept = policy_value_sweep(wsc_model, thetas, 0.0, num_nodes=513)
        for th, res in zip(thetas, swept):
            single = policy_value(wsc_model, th, 0.0, num_nodes=513)
            assert res.value == pytest.approx(single.value, abs=2e-6)


class TestOracleDerivative:
    @pytest.mark.parametrize("theta", [0.2, 0.5, 0.8])
    def test_matches_closed_form(self, wsc_model, theta):
        d = oracle_derivative(wsc_model, theta, 0.0, num_nodes=1025)
        assert d == pytest.approx(derivative_exact(theta, LAM), rel=2e-4)

    def test_pattern_negative_and_ordered(self, wsc_model):
        d2 = oracle_derivative(wsc_model, 0.2, 0.0, num_nodes=1025)
        d5 = oracle_derivative(wsc_model, 0.5, 0.0, num_nodes=1025)
        d8 = oracle_derivative(wsc_model, 0.8, 0.0, num_nodes=1025)
        assert d2 < d5 < d8 < 0.0
        assert d5 == pytest.approx(-3.0, abs=0.15)
        assert abs(d8) < abs(d2)

    def test_tiny_step_survives_grid_snapping(self, wsc_model):
        # Both evaluation points become grid nodes, so even a step far below
        # the node spacing yields the true slope rather than zero.
        d = oracle_derivative(wsc_model, 0.5, 0.0, dtheta=1e-6, num_nodes=513)
        assert d == pytest.approx(derivative_exact(0.5, LAM), rel=1e-3)

    def test_domain_validation(self, wsc_model):
        with pytest.raises(Exception):
            oracle_derivative(wsc_model, 0.0004, 0.0, dtheta=1e-3)

    def test_nonconvergence_propagates(self, wsc_model):
        with pytest.raises(ConvergenceError):
            oracle_derivative(wsc_model, 0.5, 0.0, num_nodes=257, max_iter=2)
