"""Simplicial meshes (triangles and tetrahedra) with region and boundary tags.

Refinement is done by bisection: newest-vertex bisection in 2D and
longest-edge bisection in 3D, both closed recursively so that the refined
mesh stays conforming without hanging nodes.
"""

import logging
import math
from collections import defaultdict, deque
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property
from itertools import permutations

import numpy as np

from errors import ConfigError, MeshError, TopologyError

logger = logging.getLogger(__name__)

# In 2D, edge i is opposite vertex i (newest-vertex bisection relies on it).
LOCAL_EDGES = {
    2: ((1, 2), (0, 2), (0, 1)),
    3: ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)),
}


def local_facets(dim: int) -> tuple[tuple[int, ...], ...]:
    """Facet i of a simplex is the one opposite local vertex i."""
    return tuple(tuple(j for j in range(dim + 1) if j != i) for i in range(dim + 1))


def _read_only(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def _longest_edge(verts, coords) -> int:
    """Local index of the longest edge, ties broken by the smallest sorted vertex pair."""
    best_key, best_index = None, 0
    for index, (i, j) in enumerate(LOCAL_EDGES[len(verts) - 1]):
        a, b = sorted((verts[i], verts[j]))
        length = sum((x - y) ** 2 for x, y in zip(coords[b], coords[a]))
        key = (-length, a, b)
        if best_key is None or key < best_key:
            best_key, best_index = key, index
    return best_index


def _signed_volumes(vertices: np.ndarray, elements: np.ndarray, dim: int) -> np.ndarray:
    coords = vertices[elements]
    jac = coords[:, 1:, :] - coords[:, :1, :]
    return np.linalg.det(jac) / math.factorial(dim)


@dataclass(frozen=True, eq=False)
class Mesh:
    dim: int
    vertices: np.ndarray
    elements: np.ndarray
    regions: np.ndarray
    boundary_facets: np.ndarray
    boundary_tags: np.ndarray
    refinement_edge: np.ndarray

    def __post_init__(self):
        dim = self.dim
        if dim not in (2, 3):
            raise MeshError(f"unsupported dimension {dim}")

        def store(name, value, dtype, shape):
            array = np.array(value, dtype=dtype).reshape(shape)
            object.__setattr__(self, name, _read_only(array))

        store("vertices", self.vertices, float, (-1, dim))
        store("elements", self.elements, np.int64, (-1, dim + 1))
        store("regions", self.regions, np.int64, (-1,))
        store("boundary_facets", self.boundary_facets, np.int64, (-1, dim))
        store("boundary_tags", self.boundary_tags, np.int64, (-1,))
        store("refinement_edge", self.refinement_edge, np.int64, (-1,))
        self._validate()

    def _validate(self):
        n_vertices, n_elements = self.n_vertices, self.n_elements
        if len(self.regions) != n_elements or len(self.refinement_edge) != n_elements:
            raise MeshError("regions and refinement_edge need one entry per element")
        if len(self.boundary_tags) != len(self.boundary_facets):
            raise MeshError("boundary_tags needs one entry per boundary facet")
        if n_elements == 0:
            return
        if self.elements.min() < 0 or self.elements.max() >= n_vertices:
            bad = int(np.flatnonzero((self.elements < 0).any(1) | (self.elements >= n_vertices).any(1))[0])
            raise MeshError(f"element {bad} references a vertex out of range")
        unused = np.setdiff1d(np.arange(n_vertices), self.elements)
        if len(unused):
            raise MeshError(f"vertex {int(unused[0])} is not used by any element")
        ordered = np.sort(self.elements, axis=1)
        repeated = (ordered[:, 1:] == ordered[:, :-1]).any(axis=1)
        if repeated.any():
            raise MeshError(f"element {int(np.flatnonzero(repeated)[0])} repeats a vertex")
        volumes = _signed_volumes(self.vertices, self.elements, self.dim)
        if (volumes <= 0).any():
            bad = int(np.flatnonzero(volumes <= 0)[0])
            raise MeshError(f"element {bad} has non-positive orientation ({volumes[bad]:.3e})")
        if len(self.boundary_facets) and (
            self.boundary_facets.min() < 0 or self.boundary_facets.max() >= n_vertices
        ):
            raise MeshError("boundary facet references a vertex out of range")
        if (self.boundary_tags <= 0).any():
            raise MeshError("boundary tags must be positive integers")
        n_edges = len(LOCAL_EDGES[self.dim])
        if (self.refinement_edge < 0).any() or (self.refinement_edge >= n_edges).any():
            raise MeshError("refinement edge index out of range")

    @classmethod
    def from_cells(
        cls,
        dim: int,
        vertices,
        elements,
        regions=None,
        boundary_facets=None,
        boundary_tags=None,
    ) -> "Mesh":
        """Build a mesh from raw cells, fixing orientation and assigning refinement edges.

        Args:
            dim: 2 for triangles, 3 for tetrahedra.
            vertices: (n, dim) coordinates.
            elements: (m, dim + 1) vertex indices, any orientation.
            regions: region id per element (default 0).
            boundary_facets: facet vertex tuples; defaults to every exterior facet.
            boundary_tags: tag per boundary facet (default 1).
        """
        vertices = np.asarray(vertices, dtype=float).reshape(-1, dim)
        elements = np.array(elements, dtype=np.int64).reshape(-1, dim + 1)
        if len(elements) and (elements.min() < 0 or elements.max() >= len(vertices)):
            bad = int(np.flatnonzero((elements < 0).any(1) | (elements >= len(vertices)).any(1))[0])
            raise MeshError(f"element {bad} references a vertex out of range")
        if len(elements):
            volumes = _signed_volumes(vertices, elements, dim)
            if (volumes == 0.0).any():
                bad = int(np.flatnonzero(volumes == 0.0)[0])
                raise MeshError(f"element {bad} is degenerate (zero volume)")
            flip = volumes < 0
            elements[flip, 0], elements[flip, 1] = elements[flip, 1], elements[flip, 0].copy()
        if regions is None:
            regions = np.zeros(len(elements), dtype=np.int64)
        if boundary_facets is None:
            boundary_facets = exterior_facets(dim, elements)
        boundary_facets = np.sort(np.asarray(boundary_facets, dtype=np.int64).reshape(-1, dim), axis=1)
        if boundary_tags is None:
            boundary_tags = np.ones(len(boundary_facets), dtype=np.int64)
        coords = vertices.tolist()
        refinement_edge = [_longest_edge(row, coords) for row in elements.tolist()]
        return cls(dim, vertices, elements, regions, boundary_facets, boundary_tags, refinement_edge)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @cached_property
    def element_coords(self) -> np.ndarray:
        """(n_elements, dim + 1, dim) vertex coordinates per element."""
        return _read_only(self.vertices[self.elements])

    def volumes(self) -> np.ndarray:
        return np.abs(_signed_volumes(self.vertices, self.elements, self.dim))

    def measure(self) -> float:
        return float(self.volumes().sum())

    def with_vertices(self, vertices) -> "Mesh":
        """Same connectivity and tags on moved vertices (used for scaling checks)."""
        return Mesh(
            self.dim,
            vertices,
            self.elements,
            self.regions,
            self.boundary_facets,
            self.boundary_tags,
            self.refinement_edge,
        )

    def __str__(self):
        return f"{self.dim}D mesh with {self.n_vertices} vertices and {self.n_elements} elements"


def exterior_facets(dim: int, elements: np.ndarray) -> np.ndarray:
    """Sorted facets that belong to exactly one element."""
    elements = np.asarray(elements, dtype=np.int64).reshape(-1, dim + 1)
    lf = np.array(local_facets(dim))
    all_facets = np.sort(elements[:, lf], axis=2).reshape(-1, dim)
    facets, counts = np.unique(all_facets, axis=0, return_counts=True)
    return facets[counts == 1]


class FacetClass(IntEnum):
    INTERIOR = 0
    DIRICHLET = 1
    NEUMANN = 2


@dataclass(frozen=True, eq=False)
class Topology:
    facets: np.ndarray  # (n_facets, dim), sorted vertex indices, lexicographic order
    facet_elements: np.ndarray  # (n_facets, 2), lower element first, -1 on the boundary
    facet_local: np.ndarray  # (n_facets, 2), local facet index in each element
    element_facets: np.ndarray  # (n_elements, dim + 1)
    facet_class: np.ndarray  # (n_facets,) FacetClass values
    facet_tags: np.ndarray  # (n_facets,) boundary tag, 0 for interior facets
    edges: np.ndarray  # (n_edges, 2)
    element_edges: np.ndarray  # (n_elements, n_local_edges)

    @property
    def n_facets(self) -> int:
        return len(self.facets)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def facets_of_class(self, facet_class: FacetClass) -> np.ndarray:
        return np.flatnonzero(self.facet_class == facet_class)


def _unique_with_inverse(rows: np.ndarray):
    unique, inverse, counts = np.unique(rows, axis=0, return_inverse=True, return_counts=True)
    return unique, np.asarray(inverse).reshape(-1), counts


def _parse_bc_class(tag: int, value) -> FacetClass:
    if isinstance(value, FacetClass):
        return value
    try:
        return FacetClass[str(value).upper()]
    except KeyError:
        raise ConfigError(f"boundary tag {tag}: unknown condition kind '{value}'") from None


def build_topology(mesh: Mesh, bc_classes: dict) -> Topology:
    """Derive facets, edges and facet classes.

    Args:
        mesh: a valid mesh.
        bc_classes: boundary tag -> "dirichlet" | "neumann".
    """
    if mesh.n_elements == 0:
        raise MeshError("empty mesh")
    dim = mesh.dim
    n_local = dim + 1
    lf = np.array(local_facets(dim))
    all_facets = np.sort(mesh.elements[:, lf], axis=2).reshape(-1, dim)
    facets, inverse, counts = _unique_with_inverse(all_facets)

    if (counts > 2).any():
        bad = int(np.flatnonzero(counts > 2)[0])
        raise TopologyError(f"facet {tuple(facets[bad].tolist())} is shared by {counts[bad]} elements")

    order = np.argsort(inverse, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    first = order[starts]
    second = np.where(counts == 2, order[np.minimum(starts + 1, len(order) - 1)], -1)
    facet_elements = np.stack([first // n_local, np.where(second >= 0, second // n_local, -1)], axis=1)
    facet_local = np.stack([first % n_local, np.where(second >= 0, second % n_local, -1)], axis=1)

    lookup = {tuple(f): i for i, f in enumerate(facets.tolist())}
    facet_tags = np.zeros(len(facets), dtype=np.int64)
    for facet, tag in zip(np.sort(mesh.boundary_facets, axis=1).tolist(), mesh.boundary_tags.tolist()):
        index = lookup.get(tuple(facet))
        if index is None:
            raise TopologyError(f"boundary facet {tuple(facet)} is not a facet of any element")
        if counts[index] != 1:
            raise TopologyError(f"boundary facet {tuple(facet)} is shared by {counts[index]} elements")
        facet_tags[index] = tag
    untagged = (counts == 1) & (facet_tags == 0)
    if untagged.any():
        bad = tuple(facets[np.flatnonzero(untagged)[0]].tolist())
        raise TopologyError(f"facet {bad} has a single element but no boundary tag (non-conforming mesh)")

    facet_class = np.full(len(facets), FacetClass.INTERIOR, dtype=np.int64)
    for tag in np.unique(facet_tags[facet_tags > 0]).tolist():
        if tag not in bc_classes:
            raise ConfigError(f"boundary tag {tag} has no boundary condition")
        facet_class[facet_tags == tag] = _parse_bc_class(tag, bc_classes[tag])

    le = np.array(LOCAL_EDGES[dim])
    all_edges = np.sort(mesh.elements[:, le], axis=2).reshape(-1, 2)
    edges, edge_inverse, _ = _unique_with_inverse(all_edges)

    return Topology(
        facets=_read_only(facets),
        facet_elements=_read_only(facet_elements),
        facet_local=_read_only(facet_local),
        element_facets=_read_only(inverse.reshape(-1, n_local)),
        facet_class=_read_only(facet_class),
        facet_tags=_read_only(facet_tags),
        edges=_read_only(edges),
        element_edges=_read_only(edge_inverse.reshape(-1, len(le))),
    )


def check_conformity(mesh: Mesh) -> bool:
    """Combinatorial conformity test: every facet has 1 or 2 elements, and the
    single-element facets are exactly the tagged boundary facets."""
    if mesh.n_elements == 0:
        return False
    dim = mesh.dim
    lf = np.array(local_facets(dim))
    all_facets = np.sort(mesh.elements[:, lf], axis=2).reshape(-1, dim)
    facets, counts = np.unique(all_facets, axis=0, return_counts=True)
    if (counts > 2).any():
        return False
    if len(np.unique(np.sort(mesh.elements, axis=1), axis=0)) != mesh.n_elements:
        return False
    exterior = {tuple(f) for f in facets[counts == 1].tolist()}
    boundary = {tuple(f) for f in np.sort(mesh.boundary_facets, axis=1).tolist()}
    return exterior == boundary and len(boundary) == len(mesh.boundary_facets)


def diameters(mesh: Mesh) -> np.ndarray:
    coords = mesh.element_coords
    lengths = [np.linalg.norm(coords[:, j] - coords[:, i], axis=1) for i, j in LOCAL_EDGES[mesh.dim]]
    return np.max(lengths, axis=0)


def element_diameter(mesh: Mesh, t: int) -> float:
    """Longest vertex-to-vertex distance of element t."""
    if not 0 <= t < mesh.n_elements:
        raise MeshError(f"element index {t} out of range [0, {mesh.n_elements})")
    coords = mesh.element_coords[t]
    return max(float(np.linalg.norm(coords[j] - coords[i])) for i, j in LOCAL_EDGES[mesh.dim])


def shape_regularity(mesh: Mesh) -> np.ndarray:
    """Per-element ratio h_T / rho_T with rho_T the inradius."""
    coords = mesh.element_coords
    if mesh.dim == 2:
        surface = sum(np.linalg.norm(coords[:, j] - coords[:, i], axis=1) for i, j in LOCAL_EDGES[2])
    else:
        surface = 0.0
        for a, b, c in local_facets(3):
            normal = np.cross(coords[:, b] - coords[:, a], coords[:, c] - coords[:, a])
            surface = surface + 0.5 * np.linalg.norm(normal, axis=1)
    inradius = mesh.dim * mesh.volumes() / surface
    return diameters(mesh) / inradius


def _element_facet_tags(mesh: Mesh) -> list[list[int]]:
    tags = {tuple(f): t for f, t in zip(np.sort(mesh.boundary_facets, axis=1).tolist(), mesh.boundary_tags.tolist())}
    lf = local_facets(mesh.dim)
    return [[tags.get(tuple(sorted(row[k] for k in facet)), 0) for facet in lf] for row in mesh.elements.tolist()]


class _Bisector:
    """Conforming bisection with recursive closure.

    An element is hanging when one of its edges already carries a midpoint;
    hanging elements are bisected along their refinement edge until none is
    left. Children replace their parent in place (first child) or are
    appended (second child), which keeps the element order deterministic.
    """

    def __init__(self, mesh: Mesh):
        self.dim = mesh.dim
        self.local_edges = LOCAL_EDGES[mesh.dim]
        self.vertices = [tuple(p) for p in mesh.vertices.tolist()]
        self.elements = mesh.elements.tolist()
        self.regions = mesh.regions.tolist()
        self.ref_edge = mesh.refinement_edge.tolist()
        self.facet_tags = _element_facet_tags(mesh)
        self.midpoints: dict[tuple[int, int], int] = {}
        self.edge_elements: dict[tuple[int, int], set[int]] = defaultdict(set)
        self.queue: deque[int] = deque()
        self.n_bisections = 0
        for e in range(len(self.elements)):
            self._attach(e)

    def _edges_of(self, verts):
        return [(min(verts[i], verts[j]), max(verts[i], verts[j])) for i, j in self.local_edges]

    def _attach(self, e):
        for edge in self._edges_of(self.elements[e]):
            self.edge_elements[edge].add(e)

    def _detach(self, e):
        for edge in self._edges_of(self.elements[e]):
            self.edge_elements[edge].discard(e)

    def _midpoint(self, edge) -> int:
        m = self.midpoints.get(edge)
        if m is None:
            a, b = edge
            m = len(self.vertices)
            self.vertices.append(tuple(0.5 * (x + y) for x, y in zip(self.vertices[a], self.vertices[b])))
            self.midpoints[edge] = m
            self.queue.extend(sorted(self.edge_elements[edge]))
        return m

    def _is_hanging(self, e) -> bool:
        return any(edge in self.midpoints for edge in self._edges_of(self.elements[e]))

    def _child_ref_edge(self, verts, replaced: int) -> int:
        if self.dim == 2:
            # newest vertex sits at position `replaced`; edge `replaced` is opposite it
            return replaced
        return _longest_edge(verts, self.vertices)

    def _bisect(self, e):
        verts = self.elements[e]
        i, j = self.local_edges[self.ref_edge[e]]
        m = self._midpoint((min(verts[i], verts[j]), max(verts[i], verts[j])))

        # replacing one endpoint by the midpoint keeps the orientation
        first, second = list(verts), list(verts)
        first[j], second[i] = m, m
        first_tags, second_tags = list(self.facet_tags[e]), list(self.facet_tags[e])
        first_tags[i], second_tags[j] = 0, 0

        self._detach(e)
        new = len(self.elements)
        self.elements[e] = first
        self.elements.append(second)
        self.regions.append(self.regions[e])
        self.ref_edge[e] = self._child_ref_edge(first, j)
        self.ref_edge.append(self._child_ref_edge(second, i))
        self.facet_tags[e] = first_tags
        self.facet_tags.append(second_tags)
        self._attach(e)
        self._attach(new)
        self.queue.extend((e, new))
        self.n_bisections += 1

    def run(self, marked: list[int]) -> Mesh:
        for t in marked:
            verts = self.elements[t]
            i, j = self.local_edges[self.ref_edge[t]]
            self._midpoint((min(verts[i], verts[j]), max(verts[i], verts[j])))
        while self.queue:
            e = self.queue.popleft()
            if self._is_hanging(e):
                self._bisect(e)

        lf = local_facets(self.dim)
        boundary = sorted(
            (tuple(sorted(verts[k] for k in lf[f])), tag)
            for verts, tags in zip(self.elements, self.facet_tags)
            for f, tag in enumerate(tags)
            if tag
        )
        return Mesh(
            self.dim,
            self.vertices,
            self.elements,
            self.regions,
            [facet for facet, _ in boundary],
            [tag for _, tag in boundary],
            self.ref_edge,
        )


def refine(mesh: Mesh, marked) -> Mesh:
    """Bisect every marked element, then close the mesh to conformity."""
    if mesh.n_elements == 0:
        raise MeshError("cannot refine an empty mesh")
    marked = sorted({int(t) for t in marked})
    if marked and (marked[0] < 0 or marked[-1] >= mesh.n_elements):
        raise MeshError(f"marked element index out of range [0, {mesh.n_elements})")
    if not marked:
        return mesh
    bisector = _Bisector(mesh)
    refined = bisector.run(marked)
    logger.debug(
        "refine: %d marked, %d bisections, %d -> %d elements",
        len(marked),
        bisector.n_bisections,
        mesh.n_elements,
        refined.n_elements,
    )
    return refined


def uniform_refine(mesh: Mesh) -> Mesh:
    return refine(mesh, range(mesh.n_elements))


# Corner numbering for lattice cells: bit k of the index is the offset along axis k.
_SQUARE_SPLIT = ((0, 1, 3), (0, 3, 2))
_KUHN_SPLIT = tuple(
    (0, 1 << p[0], (1 << p[0]) | (1 << p[1]), 7) for p in permutations(range(3))
)


def block_mesh(dim: int, boxes, h: float, tag_fn, unit: float = 1.0) -> Mesh:
    """Structured simplicial mesh of a union of axis-aligned boxes.

    Args:
        dim: 2 or 3.
        boxes: sequence of (lower corner, upper corner, region id); a lattice cell
            takes the region of the first box containing its center, cells in no
            box are left out.
        h: target cell size; the actual size is unit / ceil(unit / h).
        tag_fn: callable mapping a facet centroid to its boundary tag.
        unit: length every box coordinate is an integer multiple of.
    """
    if h <= 0:
        raise MeshError(f"target mesh size must be positive, got {h}")
    lows = np.array([box[0] for box in boxes], dtype=float)
    highs = np.array([box[1] for box in boxes], dtype=float)
    origin, top = lows.min(axis=0), highs.max(axis=0)
    cell = unit / max(1, math.ceil(unit / h - 1e-9))
    shape = tuple(int(n) for n in np.rint((top - origin) / cell))

    lattice = np.indices(shape).reshape(dim, -1).T
    centers = origin + (lattice + 0.5) * cell
    region = np.zeros(len(lattice), dtype=np.int64)
    assigned = np.zeros(len(lattice), dtype=bool)
    for low, high, region_id in reversed(list(boxes)):
        inside = np.all((centers > np.asarray(low)) & (centers < np.asarray(high)), axis=1)
        region[inside] = region_id
        assigned |= inside
    lattice, region = lattice[assigned], region[assigned]

    offsets = np.array([[(c >> k) & 1 for k in range(dim)] for c in range(2**dim)])
    split = _SQUARE_SPLIT if dim == 2 else _KUHN_SPLIT
    point_shape = tuple(n + 1 for n in shape)
    corners = np.stack(
        [np.ravel_multi_index((lattice + offset).T, point_shape) for offset in offsets], axis=1
    )
    elements = np.concatenate([corners[:, list(s)] for s in split])
    regions = np.concatenate([region for _ in split])

    used, elements = np.unique(elements, return_inverse=True)
    elements = elements.reshape(-1, dim + 1)
    vertices = origin + np.stack(np.unravel_index(used, point_shape), axis=1) * cell

    facets = exterior_facets(dim, elements)
    tags = [int(tag_fn(vertices[f].mean(axis=0))) for f in facets]
    return Mesh.from_cells(dim, vertices, elements, regions, facets, tags)
