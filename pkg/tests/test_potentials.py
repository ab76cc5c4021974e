import numpy as np
import pytest
from numpy.testing import assert_allclose

from spherical_ot.errors import ArgumentError, MonotonicityViolation
from spherical_ot.potentials import (
    PotentialFn,
    c_transform,
    chain_potential,
    double_c_transform,
    shortest_paths,
    superdifferential,
)
from spherical_ot.solver import solve_kantorovich
from spherical_ot.sphere import make_grid

from .helpers import random_instance


@pytest.fixture
def optimal_pairs(rng, kernel):
    mu, nu = random_instance(rng, 10, 10)
    return solve_kantorovich(kernel, mu, nu).plan.support_points()


def test_chain_potential_is_zero_at_base(kernel, optimal_pairs):
    X, Y = optimal_pairs
    for base in (0, len(X) - 1):
        psi = chain_potential(kernel, X, Y, base=base)
        assert psi(X[base:base + 1])[0] == 0.0


def test_chain_potential_supports_every_pair(kernel, optimal_pairs):
    X, Y = optimal_pairs
    psi = chain_potential(kernel, X, Y)
    sd = superdifferential(psi, X, Y)
    found = set(zip(sd.rows.tolist(), sd.cols.tolist()))
    assert all((i, i) in found for i in range(len(X)))
    assert sd.delta > 0


def test_chain_potential_is_c_concave(kernel, optimal_pairs):
    X, Y = optimal_pairs
    psi = chain_potential(kernel, X, Y)
    points = np.concatenate([make_grid("fibonacci", 1000).nodes, X])
    psi_cc = double_c_transform(psi, points)
    assert_allclose(psi_cc(points), psi(points), atol=1e-9, rtol=0)


def test_chain_potential_rejects_non_monotone_pairs(log_kernel):
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    Y = np.array([[0.0, -1.0], [-1.0, 0.0]])
    with pytest.raises(MonotonicityViolation):
        chain_potential(log_kernel, X, Y)


def test_chain_potential_rejects_bad_base(log_kernel, optimal_pairs):
    with pytest.raises(ArgumentError):
        chain_potential(log_kernel, *optimal_pairs, base=len(optimal_pairs[0]))


def test_fenchel_inequality(kernel, rng):
    mu, nu = random_instance(rng, 6, 6)
    psi = PotentialFn(kernel, nu.points, rng.normal(size=6))
    X = make_grid("random_uniform", 400, seed=1).nodes
    psi_c = c_transform(psi, X)
    Y = make_grid("fibonacci", 300).nodes
    C = kernel.cost_matrix(X, Y)
    assert np.all(psi(X)[:, None] + psi_c(Y)[None, :] <= C + 1e-12 * np.maximum(1.0, np.abs(C)))


def test_argmin_reports_ties(log_kernel):
    poles = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
    psi = PotentialFn(log_kernel, poles, np.zeros(2))
    index, unique = psi.argmin(np.array([[1.0, 0.0, 0.0], [0.0, 0.6, 0.8]]))
    assert not unique[0]
    # near the north pole the south branch is the cheaper one
    assert unique[1] and index[1] == 1


def test_potential_validation(log_kernel):
    with pytest.raises(ArgumentError):
        PotentialFn(log_kernel, np.array([[0.0, 1.0]]), np.array([0.0, 1.0]))
    with pytest.raises(ArgumentError):
        PotentialFn(log_kernel, np.array([[0.0, 1.0]]), np.array([np.nan]))


def test_shortest_paths():
    W = np.array([[np.inf, 2.0, 5.0], [np.inf, np.inf, 1.0], [np.inf, np.inf, np.inf]])
    assert shortest_paths(W, 0).tolist() == [0.0, 2.0, 3.0]
    with pytest.raises(MonotonicityViolation):
        shortest_paths(np.array([[np.inf, -1.0], [-1.0, np.inf]]), 0)
