from dataclasses import replace

import numpy as np
import pytest
from scipy import linalg, sparse

from errors import NumericalFailure, SolverError
from fem_assembly import ProblemSpec, assemble, build_dofmaps, dirichlet
from mesh import Mesh, block_mesh, build_topology
from problems import error_norms, manufactured
from solver import solve_saddle


def assemble_problem(mesh, spec):
    topology = build_topology(mesh, spec.bc_classes())
    dofmaps = build_dofmaps(mesh, topology, spec)
    return assemble(mesh, topology, dofmaps, spec)


def test_quadratic_solution_is_reproduced_exactly():
    problem = manufactured(2, "quad", 0.5)
    solution, report = solve_saddle(assemble_problem(problem.mesh, problem.spec))
    err_u, err_p = error_norms(solution, problem.exact)
    assert err_u < 1e-9
    assert err_p < 1e-9
    assert report.residual_norm_rel <= 1e-8


def test_quadratic_solution_is_reproduced_in_3d():
    problem = manufactured(3, "quad", 0.5)
    solution, _ = solve_saddle(assemble_problem(problem.mesh, problem.spec))
    err_u, err_p = error_norms(solution, problem.exact)
    assert err_u < 1e-9
    assert err_p < 1e-9


def test_matches_dense_solve():
    problem = manufactured(2, "trig", 0.5)
    system = assemble_problem(problem.mesh, problem.spec)
    solution, report = solve_saddle(system)
    dense = linalg.lu_solve(linalg.lu_factor(system.matrix().toarray()), system.rhs())
    n_free = len(system.free_dofs)
    np.testing.assert_allclose(solution.velocity[system.free_dofs], dense[:n_free], atol=1e-10)
    np.testing.assert_allclose(solution.pressure, dense[n_free : n_free + len(system.g_vec)], atol=1e-10)
    assert report.n_unknowns == system.n_unknowns


def test_dirichlet_values_are_placed_in_velocity():
    problem = manufactured(2, "trig", 0.5)
    system = assemble_problem(problem.mesh, problem.spec)
    solution, _ = solve_saddle(system)
    dofmaps = system.dofmaps
    np.testing.assert_array_equal(solution.velocity[dofmaps.dirichlet_dofs], dofmaps.dirichlet_values)


def test_discrete_velocity_is_divergence_free():
    problem = manufactured(2, "trig", 0.25)
    system = assemble_problem(problem.mesh, problem.spec)
    solution, _ = solve_saddle(system)
    np.testing.assert_allclose(system.B @ solution.velocity, system.g_vec, atol=1e-10)
    # zero-mean constraint
    assert solution.pressure @ system.pressure_mass == pytest.approx(0.0, abs=1e-12)


def test_zero_data_gives_zero_solution():
    mesh = block_mesh(2, [((0, 0), (1, 1), 1)], 0.25, lambda c: 1)
    spec = ProblemSpec(dim=2, mu=1.0, mu_star=1.0, regions={1: 10.0}, bc={1: dirichlet(0.0)})
    solution, report = solve_saddle(assemble_problem(mesh, spec))
    assert np.abs(solution.velocity).max() == 0.0
    assert np.abs(solution.pressure).max() == 0.0
    assert report.residual_norm_abs == 0.0


def test_element_order_does_not_change_the_solution():
    problem = manufactured(2, "trig", 0.25)
    mesh = problem.mesh
    shuffled = Mesh.from_cells(
        2,
        mesh.vertices,
        mesh.elements[::-1],
        mesh.regions[::-1],
        mesh.boundary_facets,
        mesh.boundary_tags,
    )
    first, _ = solve_saddle(assemble_problem(mesh, problem.spec))
    second, _ = solve_saddle(assemble_problem(shuffled, problem.spec))
    np.testing.assert_allclose(error_norms(first, problem.exact), error_norms(second, problem.exact), rtol=1e-8)
    np.testing.assert_allclose(first.vertex_velocity(), second.vertex_velocity(), atol=1e-10)


def test_singular_matrix_raises_solver_error():
    problem = manufactured(2, "quad", 0.5)
    system = assemble_problem(problem.mesh, problem.spec)
    broken = replace(
        system,
        A=sparse.csr_matrix(system.A.shape),
        g_vec=np.zeros(0),
        g_lifted=np.zeros(0),
        zero_mean_pressure=False,
    )
    with pytest.raises(SolverError, match="singular"):
        solve_saddle(broken)


def test_non_finite_solution_raises_numerical_failure():
    problem = manufactured(2, "quad", 0.5)
    system = assemble_problem(problem.mesh, problem.spec)
    poisoned = system.f_lifted.copy()
    poisoned[0] = np.nan
    with pytest.raises(NumericalFailure) as info:
        solve_saddle(replace(system, f_lifted=poisoned))
    assert info.value.report is not None
    assert info.value.report.n_unknowns == system.n_unknowns
