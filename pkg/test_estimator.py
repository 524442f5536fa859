import math

import numpy as np
import pytest

from errors import TopologyError
from estimator import compute_indicators, facet_residual, residual_r1, residual_r2
from fem_assembly import ProblemSpec, Solution, assemble, build_dofmaps, dirichlet, neumann
from mesh import FacetClass, Mesh, build_topology
from problems import manufactured
from solver import solve_saddle


def unit_square(boundary_tags=None) -> Mesh:
    outline = [[0, 1], [1, 3], [2, 3], [0, 2]]
    return Mesh.from_cells(2, [[0, 0], [1, 0], [0, 1], [1, 1]], [[0, 1, 3], [0, 3, 2]], None, outline, boundary_tags)


def make_solution(mesh, spec, velocity_fn=None, pressure_fn=None):
    topology = build_topology(mesh, spec.bc_classes())
    dofmaps = build_dofmaps(mesh, topology, spec)
    velocity = np.zeros(dofmaps.n_velocity)
    if velocity_fn is not None:
        nodal = velocity_fn(dofmaps.node_coords)
        for c in range(mesh.dim):
            velocity[c * dofmaps.n_nodes : (c + 1) * dofmaps.n_nodes] = nodal[:, c]
    pressure = np.zeros(dofmaps.n_pressure)
    if pressure_fn is not None:
        pressure[:] = pressure_fn(mesh.vertices)
    return Solution(mesh=mesh, dofmaps=dofmaps, velocity=velocity, pressure=pressure), topology


def solve(problem):
    mesh, spec = problem.mesh, problem.spec
    topology = build_topology(mesh, spec.bc_classes())
    dofmaps = build_dofmaps(mesh, topology, spec)
    solution, _ = solve_saddle(assemble(mesh, topology, dofmaps, spec))
    return solution, topology


def ramp(x):
    # u = (max(x - y, 0), 0), piecewise linear across the diagonal
    return np.stack([np.maximum(x[:, 0] - x[:, 1], 0.0), np.zeros(len(x))], axis=1)


def test_single_element_with_constant_force():
    mesh = Mesh.from_cells(2, [[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    spec = ProblemSpec(dim=2, mu=1.0, mu_star=1.0, regions={0: 0.0}, bc={1: dirichlet(0.0)}, body_force=(1.0, 2.0))
    solution, topology = make_solution(mesh, spec)
    indicators = compute_indicators(solution, spec, mesh, topology)
    # h^2 |f|^2 |T| = 2 * 5 * 0.5
    assert indicators.eta[0] ** 2 == pytest.approx(5.0, rel=1e-12)
    assert indicators.r2_sum == 0.0
    assert indicators.jump_sum == 0.0
    assert indicators.global_estimate == pytest.approx(math.sqrt(5.0), rel=1e-12)


def test_interior_jump_of_normal_stress():
    spec = ProblemSpec(dim=2, mu=1.0, mu_star=1.0, regions={0: 0.0}, bc={1: dirichlet(0.0)})
    solution, topology = make_solution(unit_square(), spec, ramp)
    diagonal = int(topology.facets_of_class(FacetClass.INTERIOR)[0])
    values = facet_residual(solution, spec, topology, diagonal)
    expected = np.tile([-math.sqrt(2) / 2, 0.0], (len(values), 1))
    np.testing.assert_allclose(values, expected, atol=1e-13)


def test_jump_contributes_to_both_neighbours():
    spec = ProblemSpec(dim=2, mu=1.0, mu_star=1.0, regions={0: 0.0}, bc={1: dirichlet(0.0)})
    mesh = unit_square()
    solution, topology = make_solution(mesh, spec, ramp)
    indicators = compute_indicators(solution, spec, mesh, topology)
    # h = sqrt(2), ||R_E||^2 = 0.5 * sqrt(2) on the diagonal
    np.testing.assert_allclose(indicators.jump_part, [1.0, 1.0], rtol=1e-12)
    np.testing.assert_allclose(indicators.r2_part, [0.5, 0.0], rtol=1e-12, atol=1e-15)


def test_neumann_facet_residual_is_traction_mismatch():
    mesh = unit_square(boundary_tags=[1, 2, 1, 1])
    spec = ProblemSpec(
        dim=2, mu=1.0, mu_star=1.0, regions={0: 0.0}, bc={1: dirichlet(0.0), 2: neumann((3.0, -1.0))}
    )
    solution, topology = make_solution(mesh, spec)
    right = int(topology.facets_of_class(FacetClass.NEUMANN)[0])
    np.testing.assert_allclose(facet_residual(solution, spec, topology, right), [[3.0, -1.0]] * 3, atol=1e-14)
    for facet in topology.facets_of_class(FacetClass.DIRICHLET).tolist():
        assert np.abs(facet_residual(solution, spec, topology, facet)).max() == 0.0


def test_continuous_pressure_has_no_jump_without_viscosity():
    problem = manufactured(2, "trig", 0.25)
    spec = ProblemSpec(dim=2, mu=1.0, mu_star=0.0, regions={1: 1.0}, bc={1: dirichlet(0.0)})
    rng = np.random.default_rng(3)
    solution, topology = make_solution(
        problem.mesh,
        spec,
        lambda x: rng.normal(size=x.shape),
        lambda x: rng.normal(size=len(x)),
    )
    indicators = compute_indicators(solution, spec, problem.mesh, topology)
    assert indicators.jump_sum == pytest.approx(0.0, abs=1e-20)


def test_element_order_does_not_change_indicators():
    problem = manufactured(2, "trig", 0.5)
    mesh = problem.mesh
    reversed_mesh = Mesh.from_cells(
        2, mesh.vertices, mesh.elements[::-1], mesh.regions[::-1], mesh.boundary_facets, mesh.boundary_tags
    )
    first, topology = solve(problem)
    problem_reversed = type(problem)(name=problem.name, mesh=reversed_mesh, spec=problem.spec, exact=problem.exact)
    second, topology_reversed = solve(problem_reversed)
    eta = compute_indicators(first, problem.spec, mesh, topology).eta
    eta_reversed = compute_indicators(second, problem.spec, reversed_mesh, topology_reversed).eta
    np.testing.assert_allclose(eta_reversed[::-1], eta, rtol=1e-8)


def test_exact_discrete_solution_has_zero_estimate():
    problem = manufactured(2, "quad", 0.5)
    solution, topology = solve(problem)
    indicators = compute_indicators(solution, problem.spec, problem.mesh, topology)
    assert indicators.global_estimate < 1e-8


def test_estimate_decreases_under_uniform_refinement():
    estimates = []
    for h in (0.5, 0.25):
        problem = manufactured(2, "trig", h)
        solution, topology = solve(problem)
        estimates.append(compute_indicators(solution, problem.spec, problem.mesh, topology).global_estimate)
    assert estimates[1] < estimates[0] / 2


def test_parts_add_up():
    problem = manufactured(2, "trig", 0.5)
    solution, topology = solve(problem)
    indicators = compute_indicators(solution, problem.spec, problem.mesh, topology)
    total = indicators.r1_sum + indicators.r2_sum + indicators.jump_sum
    assert indicators.global_estimate**2 == pytest.approx(total, rel=1e-12)
    assert (indicators.eta >= 0).all()


def test_pointwise_residuals():
    spec = ProblemSpec(
        dim=2, mu=1.0, mu_star=1.0, regions={0: 0.0}, bc={1: dirichlet(0.0)}, body_force=(1.0, 2.0), mass_source=0.5
    )
    solution, _ = make_solution(unit_square(), spec, ramp)
    # the lower triangle carries u = (x - y, 0): no Laplacian, div u = 1
    np.testing.assert_allclose(residual_r1(solution, spec, 0, (0.2, 0.3)), [1.0, 2.0], atol=1e-13)
    assert residual_r2(solution, 0, (0.2, 0.3)) == pytest.approx(-1.0)
    assert residual_r2(solution, 0, (0.2, 0.3), spec) == pytest.approx(-0.5)
    assert residual_r2(solution, 1, (0.2, 0.3)) == pytest.approx(0.0, abs=1e-14)


def test_out_of_range_queries():
    spec = ProblemSpec(dim=2, mu=1.0, mu_star=1.0, regions={0: 0.0}, bc={1: dirichlet(0.0)})
    solution, topology = make_solution(unit_square(), spec)
    with pytest.raises(IndexError):
        residual_r1(solution, spec, 2, (0.1, 0.1))
    with pytest.raises(IndexError):
        residual_r2(solution, -1, (0.1, 0.1))
    with pytest.raises(TopologyError):
        facet_residual(solution, spec, topology, topology.n_facets)


def test_jump_does_not_depend_on_which_neighbour_comes_first():
    spec = ProblemSpec(dim=2, mu=1.0, mu_star=1.0, regions={0: 0.0}, bc={1: dirichlet(0.0)})
    outline = [[0, 1], [1, 3], [2, 3], [0, 2]]
    swapped = Mesh.from_cells(2, [[0, 0], [1, 0], [0, 1], [1, 1]], [[0, 3, 2], [0, 1, 3]], None, outline)
    first, topology = make_solution(unit_square(), spec, ramp)
    second, topology_swapped = make_solution(swapped, spec, ramp)
    diagonal = int(topology.facets_of_class(FacetClass.INTERIOR)[0])
    diagonal_swapped = int(topology_swapped.facets_of_class(FacetClass.INTERIOR)[0])
    # the lower triangle leads in one mesh and follows in the other
    assert topology.facet_elements[diagonal].tolist() == [0, 1]
    assert topology_swapped.facet_elements[diagonal_swapped].tolist() == [0, 1]
    values = facet_residual(first, spec, topology, diagonal)
    values_swapped = facet_residual(second, spec, topology_swapped, diagonal_swapped)
    np.testing.assert_allclose(values_swapped, values, atol=1e-12)
    jump = compute_indicators(first, spec, unit_square(), topology).jump_part
    jump_swapped = compute_indicators(second, spec, swapped, topology_swapped).jump_part
    np.testing.assert_allclose(jump_swapped[::-1], jump, rtol=1e-12)


@pytest.mark.parametrize("dim", [2, 3])
def test_element_residual_part_scales_with_the_mesh(dim):
    reference = np.vstack([np.zeros(dim), np.eye(dim)])
    force = tuple(float(k + 1) for k in range(dim))
    spec = ProblemSpec(dim=dim, mu=1.0, mu_star=1.0, regions={0: 0.0}, bc={1: dirichlet(0.0)}, body_force=force)
    parts = []
    for scale in (1.0, 3.0):
        mesh = Mesh.from_cells(dim, scale * reference, [list(range(dim + 1))])
        solution, topology = make_solution(mesh, spec)
        parts.append(compute_indicators(solution, spec, mesh, topology).r1_part[0])
    # h^2 |T| grows like s^(2 + d)
    assert parts[1] / parts[0] == pytest.approx(3.0 ** (2 + dim), rel=1e-12)
