import json

import meshio
import numpy as np
import pytest

from amr_driver import run_amr, run_uniform
from errors import MeshFormatError
from marking import MarkParams
from mesh import Mesh, block_mesh, build_topology, refine
from mesh_io import read_log_csv, read_mesh, read_solution, write_log_csv, write_mesh, write_solution, write_vtk
from problems import manufactured


def test_mesh_round_trip(tmp_path):
    mesh = refine(block_mesh(2, [((0, 0), (1, 1), 4)], 0.5, lambda c: 1 if c[0] < 1e-12 else 2), [0, 3])
    path = str(tmp_path / "mesh.json")
    write_mesh(mesh, path)
    loaded = read_mesh(path)
    assert loaded.dim == 2
    np.testing.assert_array_equal(loaded.vertices, mesh.vertices)
    np.testing.assert_array_equal(loaded.elements, mesh.elements)
    np.testing.assert_array_equal(loaded.regions, mesh.regions)
    np.testing.assert_array_equal(loaded.boundary_facets, mesh.boundary_facets)
    np.testing.assert_array_equal(loaded.boundary_tags, mesh.boundary_tags)
    np.testing.assert_array_equal(loaded.refinement_edge, mesh.refinement_edge)


def test_vertices_survive_bit_exact(tmp_path):
    vertices = [[0.1, 1 / 3], [2 / 3, 1e-17], [np.pi, np.e]]
    mesh = Mesh.from_cells(2, vertices, [[0, 1, 2]])
    path = str(tmp_path / "mesh.json")
    write_mesh(mesh, path)
    assert read_mesh(path).vertices.tolist() == mesh.vertices.tolist()


def test_tetrahedral_round_trip_keeps_facet_tags(tmp_path):
    mesh = block_mesh(3, [((0, 0, 0), (1, 1, 1), 1)], 1.0, lambda c: 1 + int(np.argmax(np.abs(c - 0.5))))
    path = str(tmp_path / "cube.json")
    write_mesh(mesh, path)
    loaded = read_mesh(path)
    bc = {1: "dirichlet", 2: "dirichlet", 3: "neumann"}
    original, reloaded = build_topology(mesh, bc), build_topology(loaded, bc)
    np.testing.assert_array_equal(original.facet_tags, reloaded.facet_tags)
    np.testing.assert_array_equal(original.facet_class, reloaded.facet_class)


def test_missing_region_names_element(tmp_path):
    document = {
        "dim": 2,
        "vertices": [[0, 0], [1, 0], [0, 1], [1, 1]],
        "elements": [{"v": [0, 1, 3], "region": 1}, {"v": [0, 3, 2]}],
    }
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(document))
    with pytest.raises(MeshFormatError, match="element 1 has no 'region' key") as info:
        read_mesh(str(path))
    assert str(path) in str(info.value)


def test_raw_cells_without_refinement_edges(tmp_path):
    document = {
        "dim": 2,
        "vertices": [[0, 0], [1, 0], [0, 1]],
        "elements": [{"v": [0, 2, 1], "region": 5}],
        "boundary": [{"v": [0, 1], "tag": 1}, {"v": [1, 2], "tag": 2}, {"v": [0, 2], "tag": 1}],
    }
    path = tmp_path / "raw.json"
    path.write_text(json.dumps(document))
    mesh = read_mesh(str(path))
    assert mesh.volumes()[0] == pytest.approx(0.5)
    assert mesh.regions.tolist() == [5]
    assert sorted(mesh.boundary_tags.tolist()) == [1, 1, 2]


def test_unused_vertex_is_rejected(tmp_path):
    document = {
        "dim": 2,
        "vertices": [[0, 0], [1, 0], [0, 1], [1, 1], [5, 5]],
        "elements": [{"v": [0, 1, 3], "region": 1}, {"v": [0, 3, 2], "region": 1}],
    }
    path = tmp_path / "stray.json"
    path.write_text(json.dumps(document))
    with pytest.raises(MeshFormatError, match="vertex 4 is not used"):
        read_mesh(str(path))


@pytest.mark.parametrize(
    "content",
    [
        "{not json",
        json.dumps({"vertices": [], "elements": []}),
        json.dumps({"dim": 4, "vertices": [], "elements": []}),
        json.dumps({"dim": 2, "vertices": [[0, 0], [1, 0], [2, 0]], "elements": [{"v": [0, 1, 2], "region": 1}]}),
    ],
)
def test_malformed_documents(tmp_path, content):
    path = tmp_path / "mesh.json"
    path.write_text(content)
    with pytest.raises(MeshFormatError):
        read_mesh(str(path))


def test_solution_round_trip(tmp_path):
    result = run_amr(manufactured(2, "trig", 0.5), MarkParams(), max_iters=0)
    path = str(tmp_path / "solution.json")
    write_solution(result.solution, path)
    mesh, velocity, pressure = read_solution(path)
    np.testing.assert_array_equal(mesh.elements, result.mesh.elements)
    np.testing.assert_array_equal(velocity, result.solution.velocity)
    np.testing.assert_array_equal(pressure, result.solution.pressure)


def test_vtk_mesh_only(tmp_path):
    mesh = block_mesh(3, [((0, 0, 0), (1, 1, 1), 2)], 0.5, lambda c: 1)
    path = tmp_path / "mesh.vtk"
    write_vtk(mesh, str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 4.2"
    assert f"CELLS {mesh.n_elements} {mesh.n_elements * 5}" in lines
    assert not any(line.startswith("POINT_DATA") for line in lines)
    grid = meshio.read(str(path))
    assert [block.type for block in grid.cells] == ["tetra"]
    np.testing.assert_array_equal(grid.cells[0].data, mesh.elements)
    np.testing.assert_array_equal(grid.points, mesh.vertices)
    assert grid.cell_data["region_id"][0].tolist() == [2] * mesh.n_elements


def test_vtk_with_solution_and_indicators(tmp_path):
    problem = manufactured(2, "trig", 0.5)
    result = run_amr(problem, MarkParams(), max_iters=0)
    path = tmp_path / "iter_0.vtk"
    write_vtk(result.mesh, str(path), result.solution, result.indicators, problem.spec)
    grid = meshio.read(str(path))
    ne, nv = result.mesh.n_elements, result.mesh.n_vertices
    assert grid.cells[0].type == "triangle"
    assert len(grid.cells[0].data) == ne
    eta = grid.cell_data["eta"][0]
    assert np.sum(eta**2) == pytest.approx(result.indicators.global_estimate**2, rel=1e-12)
    np.testing.assert_allclose(grid.cell_data["k_inverse_norm"][0], np.sqrt(2.0))
    velocity = grid.point_data["velocity"]
    assert velocity.shape == (nv, 3)
    np.testing.assert_allclose(velocity[:, :2], result.solution.vertex_velocity(), rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(velocity[:, 2], 0.0)
    np.testing.assert_allclose(grid.point_data["pressure"], result.solution.pressure[:nv], rtol=1e-12, atol=1e-15)


def test_vtk_is_deterministic(tmp_path):
    problem = manufactured(2, "quad", 0.5)
    result = run_amr(problem, MarkParams(), max_iters=0)
    first, second = tmp_path / "a.vtk", tmp_path / "b.vtk"
    write_vtk(result.mesh, str(first), result.solution, result.indicators, problem.spec)
    write_vtk(result.mesh, str(second), result.solution, result.indicators, problem.spec)
    assert first.read_bytes() == second.read_bytes()


def test_log_csv_round_trip(tmp_path):
    result = run_uniform(manufactured(2, "trig", 0.5), n_refines=1)
    path = str(tmp_path / "runs" / "log.csv")
    write_log_csv(result.log, path)
    rows = read_log_csv(path)
    assert len(rows) == 2
    assert list(rows[0]) == list(result.log.columns)
    assert rows[1]["estimate"] == result.log.rows[1].estimate
    assert rows[1]["n_dofs"] == result.log.rows[1].n_dofs
