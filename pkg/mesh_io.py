"""Files: JSON meshes and solution dumps, VTK legacy output, CSV convergence logs."""

import csv
import json
import logging
import os

import meshio
import numpy as np

from errors import MeshError, MeshFormatError
from mesh import Mesh

logger = logging.getLogger(__name__)

MESHIO_CELL_TYPES = {2: "triangle", 3: "tetra"}


def _ensure_parent(path: str):
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def mesh_to_document(mesh: Mesh) -> dict:
    return {
        "dim": mesh.dim,
        "vertices": mesh.vertices.tolist(),
        "elements": [
            {"v": verts, "region": region, "ref_edge": edge}
            for verts, region, edge in zip(
                mesh.elements.tolist(), mesh.regions.tolist(), mesh.refinement_edge.tolist()
            )
        ],
        "boundary": [{"v": verts, "tag": tag} for verts, tag in zip(mesh.boundary_facets.tolist(), mesh.boundary_tags.tolist())],
    }


def _require(entry: dict, key: str, where: str, path: str):
    if not isinstance(entry, dict) or key not in entry:
        raise MeshFormatError(f"{path}: {where} has no '{key}' key")
    return entry[key]


def mesh_from_document(document: dict, path: str = "<document>") -> Mesh:
    dim = _require(document, "dim", "mesh document", path)
    if dim not in (2, 3):
        raise MeshFormatError(f"{path}: unsupported dimension {dim}")
    vertices = _require(document, "vertices", "mesh document", path)
    elements, regions, ref_edges = [], [], []
    for index, entry in enumerate(_require(document, "elements", "mesh document", path)):
        elements.append(_require(entry, "v", f"element {index}", path))
        regions.append(_require(entry, "region", f"element {index}", path))
        ref_edges.append(entry.get("ref_edge"))
    facets, tags = [], []
    for index, entry in enumerate(document.get("boundary", [])):
        facets.append(_require(entry, "v", f"boundary facet {index}", path))
        tags.append(_require(entry, "tag", f"boundary facet {index}", path))

    try:
        if elements and all(edge is not None for edge in ref_edges):
            return Mesh(
                dim=dim,
                vertices=np.asarray(vertices, dtype=float).reshape(-1, dim),
                elements=np.asarray(elements, dtype=np.int64).reshape(-1, dim + 1),
                regions=regions,
                boundary_facets=np.asarray(facets, dtype=np.int64).reshape(-1, dim),
                boundary_tags=tags,
                refinement_edge=ref_edges,
            )
        return Mesh.from_cells(dim, vertices, elements, regions, facets or None, tags or None)
    except (MeshError, ValueError, TypeError) as e:
        raise MeshFormatError(f"{path}: invalid mesh: {e}") from e


def read_mesh(path: str) -> Mesh:
    try:
        with open(path) as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise MeshFormatError(f"{path}: not valid JSON ({e})") from e
    return mesh_from_document(document, path)


def write_mesh(mesh: Mesh, path: str):
    _ensure_parent(path)
    with open(path, "w") as f:
        json.dump(mesh_to_document(mesh), f)
    logger.debug("mesh written to %s", path)


def write_solution(solution, path: str):
    """Full P2 velocity and P1 pressure coefficients plus the mesh."""
    _ensure_parent(path)
    document = {
        "mesh": mesh_to_document(solution.mesh),
        "n_nodes": solution.dofmaps.n_nodes,
        "velocity": solution.velocity.tolist(),
        "pressure": solution.pressure.tolist(),
    }
    with open(path, "w") as f:
        json.dump(document, f)


def read_solution(path: str) -> tuple[Mesh, np.ndarray, np.ndarray]:
    with open(path) as f:
        try:
            document = json.load(f)
        except json.JSONDecodeError as e:
            raise MeshFormatError(f"{path}: not valid JSON ({e})") from e
    mesh = mesh_from_document(_require(document, "mesh", "solution document", path), path)
    velocity = np.asarray(_require(document, "velocity", "solution document", path), dtype=float)
    pressure = np.asarray(_require(document, "pressure", "solution document", path), dtype=float)
    return mesh, velocity, pressure


def _format(value) -> str:
    return repr(float(value))


def write_vtk(mesh: Mesh, path: str, solution=None, indicators=None, spec=None):
    """Legacy ASCII unstructured grid, written by meshio.

    Cell data: region_id, k_inverse_norm and log10_k_inverse (with a problem
    spec), eta (with indicators). Point data: velocity and pressure sampled at
    the vertices (with a solution).
    """
    _ensure_parent(path)
    cell_data = {"region_id": [mesh.regions.astype(np.int32)]}
    if spec is not None:
        norms = np.linalg.norm(spec.k_inverse(mesh.regions), axis=(1, 2))
        cell_data["k_inverse_norm"] = [norms]
        cell_data["log10_k_inverse"] = [np.log10(np.maximum(norms, 1e-300))]
    if indicators is not None:
        cell_data["eta"] = [np.asarray(indicators.eta, dtype=float)]

    point_data = {}
    if solution is not None:
        velocity = np.zeros((mesh.n_vertices, 3))
        velocity[:, : mesh.dim] = solution.vertex_velocity()
        point_data["velocity"] = velocity
        point_data["pressure"] = np.asarray(solution.pressure[: mesh.n_vertices], dtype=float)

    points = np.zeros((mesh.n_vertices, 3))
    points[:, : mesh.dim] = mesh.vertices
    grid = meshio.Mesh(
        points=points,
        cells=[(MESHIO_CELL_TYPES[mesh.dim], mesh.elements)],
        point_data=point_data,
        cell_data=cell_data,
    )
    try:
        meshio.write(path, grid, file_format="vtk42", binary=False)
    except OSError as e:
        raise MeshFormatError(f"{path}: cannot write vtk file: {e}") from e
    logger.debug("vtk written to %s (%d cells)", path, mesh.n_elements)


def write_log_csv(log, path: str):
    _ensure_parent(path)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(log.columns))
        writer.writeheader()
        for row in log.as_dicts():
            writer.writerow({key: _format(value) if isinstance(value, float) else value for key, value in row.items()})


def read_log_csv(path: str) -> list[dict]:
    with open(path, newline="") as f:
        return [
            {key: float(value) if value not in ("", "None") else None for key, value in row.items()}
            for row in csv.DictReader(f)
        ]
