import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from spherical_ot.errors import ArgumentError, InfeasibleError, NoFinitePlanError
from spherical_ot.kernels import kernel_from_name
from spherical_ot.solver import (
    TransportPlan,
    _decimal_scale,
    brute_force_kantorovich,
    centered_duals,
    monge_cost,
    solve_kantorovich,
)
from spherical_ot.sphere import DiscreteMeasure, random_points

from .helpers import random_instance


def test_circle_instance_pairs_antipodes(log_kernel, circle_pair):
    mu, nu = circle_pair
    solution = solve_kantorovich(log_kernel, mu, nu)
    assert [(i, j) for i, j, _ in solution.plan.pairs] == [(0, 0), (1, 1)]
    assert_allclose([w for _, _, w in solution.plan.pairs], [0.5, 0.5], atol=1e-15)
    assert solution.total_cost == pytest.approx(-math.log(2.0), abs=1e-12)
    plan, duals, cost = solution
    assert cost == solution.total_cost


def test_matches_permutation_oracle(rng):
    """50 random uniform instances up to 8 atoms per side against enumeration."""
    kernels = [kernel_from_name("log"), kernel_from_name("power:1")]
    for trial in range(50):
        kernel = kernels[trial % 2]
        n = int(rng.integers(2, 9))
        mu, nu = random_instance(rng, n, n)
        solution = solve_kantorovich(kernel, mu, nu, backend="network_simplex")
        oracle = brute_force_kantorovich(kernel, mu, nu)
        assert solution.total_cost == pytest.approx(oracle, abs=1e-9)
        cert = solution.duals.certificate(kernel, solution.plan)
        assert cert["duality_gap"] <= 1e-9
        assert cert["max_violation"] <= 1e-9
        assert cert["max_slack"] <= 1e-9


def test_matches_lp_oracle_with_unequal_weights(rng, log_kernel):
    for _ in range(20):
        n, m = int(rng.integers(2, 9)), int(rng.integers(2, 9))
        mu, nu = random_instance(rng, n, m, uniform=False)
        solution = solve_kantorovich(log_kernel, mu, nu)
        assert solution.total_cost == pytest.approx(brute_force_kantorovich(log_kernel, mu, nu), abs=1e-9)
        assert solution.plan.marginal_error() <= 1e-10


def test_backends_agree(rng, log_kernel):
    mu, nu = random_instance(rng, 30, 25, uniform=False)
    simplex = solve_kantorovich(log_kernel, mu, nu, backend="network_simplex")
    highs = solve_kantorovich(log_kernel, mu, nu, backend="highs")
    assert simplex.total_cost == pytest.approx(highs.total_cost, abs=1e-9)
    assert highs.duals.certificate(log_kernel, highs.plan)["max_violation"] <= 1e-9


def test_decimal_masses_are_solved_in_integer_units(rng, log_kernel):
    mu = DiscreteMeasure(random_points(4, 2, rng), np.array([0.1, 0.2, 0.3, 0.4]))
    nu = DiscreteMeasure(random_points(3, 2, rng), np.array([0.25, 0.35, 0.4]))
    assert _decimal_scale(mu.weights, nu.weights) == 100.0
    solution = solve_kantorovich(log_kernel, mu, nu, backend="network_simplex")
    cents = solution.plan.mass * 100.0
    assert_allclose(cents, np.round(cents), atol=1e-9)
    assert solution.plan.marginal_error() <= 1e-14
    highs = solve_kantorovich(log_kernel, mu, nu, backend="highs")
    assert solution.total_cost == pytest.approx(highs.total_cost, abs=1e-9)


def test_decimal_scale_falls_back_for_repeating_fractions(rng):
    assert _decimal_scale(np.full(3, 1.0 / 3.0), np.full(3, 1.0 / 3.0)) is None
    assert _decimal_scale(np.array([2.0, 1.0]), np.array([3.0])) == 1.0
    assert _decimal_scale(rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5))) is None


def test_large_instances_use_highs(rng, log_kernel):
    mu, nu = random_instance(rng, 150, 150)
    solution = solve_kantorovich(log_kernel, mu, nu)
    assert solution.backend == "highs"
    assert solution.plan.marginal_error() <= 1e-10


def test_solution_is_deterministic(rng, log_kernel):
    mu, nu = random_instance(rng, 12, 9, uniform=False)
    first = solve_kantorovich(log_kernel, mu, nu)
    second = solve_kantorovich(log_kernel, mu, nu)
    assert first.plan.pairs == second.plan.pairs
    assert np.array_equal(first.duals.u, second.duals.u)


def test_zero_mass_atoms_get_feasible_duals(log_kernel, rng):
    X, Y = random_points(4, 2, rng), random_points(3, 2, rng)
    mu = DiscreteMeasure(X, np.array([0.5, 0.0, 0.25, 0.25]))
    nu = DiscreteMeasure(Y, np.array([0.4, 0.6, 0.0]))
    solution = solve_kantorovich(log_kernel, mu, nu)
    assert np.all(np.isfinite(solution.duals.u)) and np.all(np.isfinite(solution.duals.v))
    assert solution.duals.certificate(log_kernel, solution.plan)["max_violation"] <= 1e-9


def test_imbalanced_masses_are_infeasible(log_kernel, rng):
    mu = DiscreteMeasure(random_points(2, 2, rng), np.array([0.5, 0.5]), probability=False)
    nu = DiscreteMeasure(random_points(2, 2, rng), np.array([0.5, 0.25]), probability=False)
    with pytest.raises(InfeasibleError):
        solve_kantorovich(log_kernel, mu, nu)


@pytest.mark.parametrize("backend", ["network_simplex", "highs"])
def test_no_finite_plan(log_kernel, backend):
    a, b = np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0])
    mu = DiscreteMeasure.dirac(a)
    nu = DiscreteMeasure(np.stack([a, b]), np.array([0.5, 0.5]))
    with pytest.raises(NoFinitePlanError):
        solve_kantorovich(log_kernel, mu, nu, backend=backend)


def test_shared_atoms_avoided_when_possible(log_kernel):
    a, b = np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, -1.0])
    both = DiscreteMeasure(np.stack([a, b]), np.array([0.5, 0.5]))
    solution = solve_kantorovich(log_kernel, both, both)
    assert sorted((i, j) for i, j, _ in solution.plan.pairs) == [(0, 1), (1, 0)]
    assert solution.plan.min_separation() == pytest.approx(2.0)


def test_centered_duals_are_strictly_complementary(rng, log_kernel):
    mu, nu = random_instance(rng, 7, 7)
    solution = solve_kantorovich(log_kernel, mu, nu)
    duals = centered_duals(log_kernel, solution.plan)
    cert = duals.certificate(log_kernel, solution.plan)
    assert cert["max_violation"] <= 1e-9
    assert cert["max_slack"] <= 1e-9
    C = log_kernel.cost_matrix(mu.points, nu.points)
    slack = C - duals.u[:, None] - duals.v[None, :]
    off_support = np.ones(C.shape, dtype=bool)
    off_support[solution.plan.rows, solution.plan.cols] = False
    assert slack[off_support].min() > 1e-9


def test_monge_cost_of_optimal_permutation(rng, log_kernel):
    mu, nu = random_instance(rng, 6, 6)
    solution = solve_kantorovich(log_kernel, mu, nu)
    T = solution.plan.as_map()
    assert T is not None
    assert monge_cost(log_kernel, T, mu, nu) == pytest.approx(solution.total_cost, abs=1e-12)
    with pytest.raises(InfeasibleError):
        monge_cost(log_kernel, np.zeros(6, dtype=int), mu, nu)


def test_plan_validation(log_kernel, circle_pair):
    mu, nu = circle_pair
    TransportPlan.from_pairs(mu, nu, [[0, 1, 0.5], [1, 0, 0.5]])
    with pytest.raises(InfeasibleError):
        TransportPlan.from_pairs(mu, nu, [[0, 0, 0.5], [1, 0, 0.5]])
    with pytest.raises(ArgumentError):
        TransportPlan.from_pairs(mu, nu, [[0, 2, 0.5], [1, 0, 0.5]])
    with pytest.raises(ArgumentError):
        TransportPlan.from_pairs(mu, mu, [[0, 0, 0.5], [1, 1, 0.5]])
    plan = TransportPlan.from_pairs(mu, nu, [[0, 0, 0.5], [1, 1, 0.5]])
    assert plan.dense().sum() == pytest.approx(1.0)
    assert plan.to_dict() == {"pairs": [[0, 0, 0.5], [1, 1, 0.5]]}
