import numpy as np
import pytest
from numpy.testing import assert_allclose

from spherical_ot.errors import ArgumentError, ConvergenceError, InfeasibleError
from spherical_ot.reflector import (
    ConstantFocal,
    EnvelopeFocal,
    Reflector,
    duality_bridge,
    energy_masses,
    envelope_radius,
    focal_gradient,
    intensity_values,
    paraboloid_normal,
    quasipotential_position,
    ray_trace_verify,
    reflector_map,
    reflector_mesh,
    snell_reflect,
    solve_weak_reflector,
)
from spherical_ot.sphere import DiscreteMeasure, make_grid, named_directions, random_points

NORTH = np.array([0.0, 0.0, 1.0])
SOUTH = np.array([0.0, 0.0, -1.0])


def poles(north_mass: float) -> DiscreteMeasure:
    return DiscreteMeasure(np.stack([NORTH, SOUTH]), np.array([north_mass, 1.0 - north_mass]))


def solve_on(targets: DiscreteMeasure, n: int, **kwargs) -> Reflector:
    grid = make_grid("fibonacci", n)
    return solve_weak_reflector(targets, grid, intensity_values("uniform", grid), **kwargs)


@pytest.fixture(scope="module")
def symmetric_reflector() -> Reflector:
    return solve_on(poles(0.5), 2000)


def test_symmetric_targets_get_equal_parameters(symmetric_reflector):
    p1, p2 = symmetric_reflector.focal_params
    assert p1 / p2 == pytest.approx(1.0, abs=1e-9)
    assert symmetric_reflector.focal_params.max() == 1.0


def test_unequal_targets_move_the_cell_boundary():
    reflector = solve_on(poles(0.75), 20_000, tol=1e-3)
    p1, p2 = reflector.focal_params
    # rays below this height reflect north
    boundary = (p2 - p1) / (p1 + p2)
    assert boundary == pytest.approx(0.5, abs=1e-3)
    assert p1 < p2


def test_tetrahedral_targets_share_energy_equally():
    grid = make_grid("fibonacci", 10_000)
    intensity = intensity_values("uniform", grid)
    targets = DiscreteMeasure.uniform(named_directions("tetrahedron"))
    reflector = solve_weak_reflector(targets, grid, intensity, tol=2e-3)
    cells = energy_masses(reflector, grid, intensity)
    assert np.max(np.abs(cells.masses - 0.25)) <= 1e-3
    assert cells.total == pytest.approx(1.0, abs=1e-12)


@pytest.mark.slow
def test_tetrahedral_targets_on_a_fine_grid():
    grid = make_grid("fibonacci", 100_000)
    intensity = intensity_values("uniform", grid)
    targets = DiscreteMeasure.uniform(named_directions("tetrahedron"))
    reflector = solve_weak_reflector(targets, grid, intensity, tol=1e-3)
    assert np.max(np.abs(energy_masses(reflector, grid, intensity).masses - 0.25)) <= 2.5e-4


def test_reflected_rays_reach_their_targets(symmetric_reflector, rng):
    report = ray_trace_verify(symmetric_reflector, random_points(1000, 2, rng))
    assert report.passed
    assert report.max_deviation <= 1e-8
    assert report.max_surface_residual <= 1e-12
    assert report.traced + report.ties_skipped == 1000


def test_reflector_map_picks_the_supporting_paraboloid(symmetric_reflector):
    # a ray heading down lies in the cell of the northern target
    assert_allclose(reflector_map(symmetric_reflector, [0.0, 0.6, -0.8]), [NORTH])
    rho, active = envelope_radius(symmetric_reflector, [1.0, 0.0, 0.0])
    assert active == [0, 1]
    assert rho == pytest.approx(1.0)


@pytest.mark.parametrize("factor", [0.25, 3.0])
def test_scaling_focal_parameters_scales_the_envelope(factor, rng):
    reflector = Reflector(named_directions("tetrahedron"), np.array([1.0, 0.5, 0.8, 0.6]))
    scaled = reflector.scaled(factor)
    assert_allclose(scaled.focal_params, factor * reflector.focal_params)
    for x in random_points(50, 2, rng):
        rho, active = envelope_radius(reflector, x)
        scaled_rho, scaled_active = envelope_radius(scaled, x)
        assert scaled_rho == pytest.approx(factor * rho, rel=1e-14)
        assert scaled_active == active
        assert_allclose(reflector_map(scaled, x), reflector_map(reflector, x))


def test_snell_reflection_is_an_involution(rng):
    X = random_points(500, 2, rng)
    N = random_points(500, 2, rng)
    Y = snell_reflect(X, N)
    assert_allclose(np.linalg.norm(Y, axis=1), 1.0, atol=1e-14)
    assert_allclose(snell_reflect(Y, N), X, atol=1e-14)
    # equal angles with the normal, in the plane spanned by x and n
    assert_allclose(np.sum(Y * N, axis=1), -np.sum(X * N, axis=1), atol=1e-14)
    assert_allclose(np.einsum("ij,ij->i", np.cross(X, N), Y), 0.0, atol=1e-14)


def test_snell_reflection_special_incidences():
    assert_allclose(snell_reflect(NORTH, NORTH), SOUTH)
    grazing = np.array([1.0, 0.0, 0.0])
    assert_allclose(snell_reflect(grazing, NORTH), grazing)


def test_sphere_sends_every_ray_back_through_the_source(rng):
    X = random_points(200, 2, rng)
    # the normal of a sphere centred at the source is the ray direction itself
    assert_allclose(snell_reflect(X, X), -X, atol=1e-15)


def test_paraboloid_reflects_every_ray_along_its_axis(rng):
    y = np.array([1.0, 2.0, 2.0]) / 3.0
    X = random_points(200, 2, rng)
    X = X[X @ y < 0.99]
    assert_allclose(snell_reflect(X, paraboloid_normal(X, y)), np.broadcast_to(y, X.shape), atol=1e-12)


def test_sphere_is_recovered_from_a_constant_focal_function():
    rho0 = 1.5
    focal = ConstantFocal(2.0 * rho0)
    for y in (NORTH, np.array([0.6, 0.0, 0.8]), np.array([1.0, 2.0, 2.0]) / 3.0):
        assert_allclose(quasipotential_position(focal, y), -rho0 * y, atol=1e-12)


def test_envelope_focal_function_returns_focal_parameters(symmetric_reflector):
    focal = EnvelopeFocal(symmetric_reflector, make_grid("fibonacci", 2000).nodes)
    assert_allclose(focal(symmetric_reflector.directions), symmetric_reflector.focal_params, rtol=1e-12)


def test_focal_gradient_rejects_degenerate_stencils():
    with pytest.raises(ArgumentError):
        focal_gradient(ConstantFocal(1.0), NORTH, stencil=[[1e-6, 0.0], [2e-6, 0.0]])
    with pytest.raises(ArgumentError):
        ConstantFocal(0.0)


def test_duality_bridge_holds_on_the_grid(symmetric_reflector):
    report = duality_bridge(symmetric_reflector, make_grid("fibonacci", 2000).nodes)
    assert report.passed
    assert report.max_violation <= 1e-9


def test_iteration_limit_raises_with_residuals():
    with pytest.raises(ConvergenceError) as info:
        solve_on(poles(0.75), 2000, max_iter=1)
    assert len(info.value.residuals) == 2


def test_energy_mismatch_is_infeasible():
    grid = make_grid("fibonacci", 500)
    with pytest.raises(InfeasibleError):
        solve_weak_reflector(poles(0.5), grid, 2.0 * intensity_values("uniform", grid))


def test_mesh_has_one_vertex_per_node(symmetric_reflector):
    grid = make_grid("fibonacci", 2000)
    vertices, faces = reflector_mesh(symmetric_reflector, grid)
    assert vertices.shape == (2000, 3)
    assert faces.shape == (2 * 2000 - 4, 3)
    rho = np.linalg.norm(vertices, axis=1)
    assert np.all(rho > 0) and np.all(np.isfinite(rho))


def test_intensity_profiles():
    grid = make_grid("fibonacci", 1000)
    for name in ("uniform", "north_cap", "cosine"):
        assert grid.integrate(intensity_values(name, grid)) == pytest.approx(1.0)
    assert np.all(intensity_values("north_cap", grid)[grid.nodes[:, 2] < 0] == 0)
    with pytest.raises(ArgumentError):
        intensity_values("laser", grid)


def test_reflector_validation():
    with pytest.raises(ArgumentError):
        Reflector(np.stack([NORTH, SOUTH]), np.array([1.0]))
    with pytest.raises(ArgumentError):
        Reflector(np.stack([NORTH, SOUTH]), np.array([1.0, -1.0]))
    reflector = Reflector.from_dict({"directions": [[0, 0, 2]], "focal_params": [0.5]})
    assert_allclose(reflector.directions, [NORTH])
