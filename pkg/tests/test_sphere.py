import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from spherical_ot.errors import ArgumentError
from spherical_ot.sphere import (
    DiscreteMeasure,
    TangentVector,
    UnitVector,
    geodesic,
    make_grid,
    named_directions,
    pairwise_half_sq_dist,
    random_points,
    slab_mass,
    sphere_area,
    tangent_basis,
    tangential_project,
)


def test_unit_vector_is_renormalized():
    u = UnitVector([3.0, 4.0])
    assert_allclose(u.coords, [0.6, 0.8], atol=1e-15)
    assert u.dim == 1
    assert abs(np.linalg.norm(u.coords) - 1.0) <= 1e-12


def test_unit_vector_rejects_zero_and_scalars():
    with pytest.raises(ArgumentError):
        UnitVector([0.0, 0.0, 0.0])
    with pytest.raises(ArgumentError):
        UnitVector([2.0])


def test_tangent_vector_requires_tangency():
    TangentVector(base=np.array([0.0, 0.0, 1.0]), vec=np.array([1.0, 2.0, 0.0]))
    with pytest.raises(ArgumentError):
        TangentVector(base=np.array([0.0, 0.0, 1.0]), vec=np.array([0.0, 0.0, 1.0]))


def test_tangential_project_is_tangent(rng):
    X = random_points(500, 2, rng)
    Y = random_points(500, 2, rng)
    proj = tangential_project(Y, X)
    assert np.max(np.abs(np.sum(proj.vec * X, axis=1))) <= 1e-12


def test_tangent_basis_is_orthonormal_and_tangent():
    x = np.array([1.0, 2.0, 2.0]) / 3.0
    basis = tangent_basis(x)
    assert basis.shape == (2, 3)
    assert_allclose(basis @ basis.T, np.eye(2), atol=1e-14)
    assert_allclose(basis @ x, 0.0, atol=1e-14)


def test_geodesic_stays_on_sphere_and_reaches_antipode():
    x = np.array([0.0, 0.0, 1.0])
    v = np.array([1.0, 0.0, 0.0])
    assert_allclose(geodesic(x, v, math.pi / 2), [1.0, 0.0, 0.0], atol=1e-15)
    assert_allclose(geodesic(x, v, math.pi), -x, atol=1e-15)


def test_sphere_area():
    assert sphere_area(1) == pytest.approx(2 * math.pi)
    assert sphere_area(2) == pytest.approx(4 * math.pi)
    assert sphere_area(3) == pytest.approx(2 * math.pi ** 2)


def test_pairwise_half_sq_dist_matches_one_minus_dot(rng):
    X = random_points(40, 2, rng)
    Y = random_points(30, 2, rng)
    assert_allclose(pairwise_half_sq_dist(X, Y), 1.0 - X @ Y.T, atol=1e-14)
    assert_allclose(pairwise_half_sq_dist(X, X).diagonal(), 0.0, atol=0)


@pytest.mark.parametrize("kind", ["fibonacci", "random_uniform"])
@pytest.mark.parametrize("dim", [1, 2])
def test_grid_weights_sum_to_area(kind, dim):
    grid = make_grid(kind, 1000, seed=3, dim=dim)
    assert len(grid) == 1000
    assert grid.area == pytest.approx(sphere_area(dim), rel=1e-3)
    assert_allclose(np.linalg.norm(grid.nodes, axis=1), 1.0, atol=1e-12)


def test_fibonacci_grid_integrates_smooth_functions():
    grid = make_grid("fibonacci", 2000)
    z = grid.nodes[:, 2]
    assert grid.integrate(z ** 2) == pytest.approx(4 * math.pi / 3, rel=1e-5)
    assert abs(grid.integrate(grid.nodes[:, 0])) <= 1e-2 * 4 * math.pi


def test_grid_is_deterministic():
    a = make_grid("random_uniform", 50, seed=7)
    b = make_grid("random_uniform", 50, seed=7)
    assert np.array_equal(a.nodes, b.nodes)


def test_grid_rejects_tiny_or_unsupported():
    with pytest.raises(ArgumentError):
        make_grid("fibonacci", 3)
    with pytest.raises(ArgumentError):
        make_grid("fibonacci", 100, dim=3)


def test_triangulation_is_closed_and_outward():
    grid = make_grid("fibonacci", 200)
    faces = grid.triangulation()
    assert faces.shape == (2 * len(grid) - 4, 3)
    a, b, c = (grid.nodes[faces[:, k]] for k in range(3))
    assert np.all(np.sum(np.cross(b - a, c - a) * (a + b + c), axis=1) > 0)


def test_circle_triangulation_is_a_closed_polyline():
    grid = make_grid("fibonacci", 12, dim=1)
    segments = grid.triangulation()
    assert segments.shape == (12, 2)
    assert sorted(segments[:, 0].tolist()) == list(range(12))
    assert sorted(segments[:, 1].tolist()) == list(range(12))


def test_measure_merges_duplicates():
    m = DiscreteMeasure(np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]),
                        np.array([0.25, 0.25, 0.5]))
    assert len(m) == 2
    assert_allclose(m.weights, [0.5, 0.5])


def test_probability_measure_must_be_normalized():
    points = np.array([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(ArgumentError):
        DiscreteMeasure(points, np.array([0.5, 0.6]))
    loose = DiscreteMeasure(points, np.array([0.5, 0.6]), probability=False)
    assert loose.total_mass == pytest.approx(1.1)
    assert loose.normalized().total_mass == pytest.approx(1.0)


def test_measure_rejects_negative_weights():
    with pytest.raises(ArgumentError):
        DiscreteMeasure(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([1.5, -0.5]))


def test_measure_dict_form():
    m = DiscreteMeasure.uniform(named_directions("tetrahedron"))
    data = m.to_dict()
    assert data["dim"] == 2
    back = DiscreteMeasure.from_dict(data)
    assert_allclose(back.points, m.points)
    with pytest.raises(ArgumentError):
        DiscreteMeasure.from_dict({"dim": 1, "points": data["points"], "weights": data["weights"]})


def test_slab_mass():
    m = DiscreteMeasure(np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0]]),
                        np.array([0.5, 0.25, 0.25]))
    assert slab_mass(m, 0.0, 1.0) == pytest.approx(0.75)
    assert slab_mass(m, -1.0, -0.5) == pytest.approx(0.25)
    with pytest.raises(ArgumentError):
        slab_mass(m, 0.5, 0.0)


def at_latitudes(z: np.ndarray) -> np.ndarray:
    return np.stack([np.sqrt(1.0 - z**2), np.zeros_like(z), z], axis=1)


def test_slab_mass_counts_atoms_by_latitude():
    m = DiscreteMeasure.uniform(at_latitudes(np.array([-0.9, -0.3, 0.3, 0.9])))
    assert slab_mass(m, 0.0, 1.0) == pytest.approx(0.5)
    assert slab_mass(m, -1.0, 1.0) == pytest.approx(1.0)


def test_slab_mass_is_monotone_and_additive(rng):
    m = DiscreteMeasure(random_points(300, 2, rng), rng.dirichlet(np.ones(300)))
    bounds = np.linspace(-1.0, 1.0, 41)
    masses = [slab_mass(m, -1.0, b) for b in bounds]
    assert np.all(np.diff(masses) >= 0)
    cut = 0.123456789
    assert not np.any(m.heights == cut)
    assert slab_mass(m, -0.7, cut) + slab_mass(m, cut, 0.8) == pytest.approx(slab_mass(m, -0.7, 0.8), abs=1e-12)


def test_named_directions():
    tetra = named_directions("tetrahedron")
    assert tetra.shape == (4, 3)
    assert_allclose(tetra.sum(axis=0), 0.0, atol=1e-15)
    assert named_directions("cube").shape == (8, 3)
    assert named_directions("octahedron").shape == (6, 3)
    ring = named_directions("circle", count=4, dim=1, offset=math.pi)
    assert_allclose(ring[0], [-1.0, 0.0], atol=1e-15)
    assert_allclose(ring[1], [0.0, -1.0], atol=1e-15)
    with pytest.raises(ArgumentError):
        named_directions("tetrahedron", dim=1)
