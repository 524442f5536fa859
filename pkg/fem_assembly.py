"""Taylor-Hood P2/P1 discretization of the Stokes-Brinkman equations.

Element kernels are vectorized over all elements at once: reference
integrals are computed once per dimension and scaled by the element
geometry (barycentric gradients and Jacobian determinants).
"""

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import sparse
from scipy.special import roots_jacobi

from errors import AssemblyError, ConfigError
from mesh import LOCAL_EDGES, FacetClass, Mesh, Topology, local_facets

logger = logging.getLogger(__name__)

# quadrature degrees: A (P2 x P2 mass term), B and volume loads (exact for quadratic data), boundary terms
DEGREE_A = 4
DEGREE_LOAD = 4
DEGREE_FACET = 4


def _read_only(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@lru_cache(maxsize=None)
def quadrature(dim: int, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss-Jacobi rule on the reference simplex.

    Returns (points, weights) with points of shape (n, dim); the rule is exact
    for polynomials of total degree `degree` and the weights sum to 1 / dim!.
    """
    if not 0 <= degree <= 6:
        raise ValueError(f"quadrature degree must be in [0, 6], got {degree}")
    n = max(1, math.ceil((degree + 1) / 2))
    x_leg, w_leg = np.polynomial.legendre.leggauss(n)
    r, w_r = (x_leg + 1) / 2, w_leg / 2
    if dim == 1:
        points, weights = r[:, None], w_r
    elif dim == 2:
        x_s, w_s = roots_jacobi(n, 1, 0)
        s, w_s = (x_s + 1) / 2, w_s / 4
        S, T = np.meshgrid(s, r, indexing="ij")
        points = np.stack([S, (1 - S) * T], axis=-1).reshape(-1, 2)
        weights = np.outer(w_s, w_r).reshape(-1)
    elif dim == 3:
        x_s, w_s = roots_jacobi(n, 2, 0)
        x_t, w_t = roots_jacobi(n, 1, 0)
        s, w_s = (x_s + 1) / 2, w_s / 8
        t, w_t = (x_t + 1) / 2, w_t / 4
        S, T, R = np.meshgrid(s, t, r, indexing="ij")
        points = np.stack([S, (1 - S) * T, (1 - S) * (1 - T) * R], axis=-1).reshape(-1, 3)
        weights = np.einsum("i,j,k->ijk", w_s, w_t, w_r).reshape(-1)
    else:
        raise ValueError(f"unsupported dimension {dim}")
    return _read_only(np.ascontiguousarray(points)), _read_only(weights)


def barycentric(points: np.ndarray) -> np.ndarray:
    """Reference coordinates (..., dim) -> barycentric coordinates (..., dim + 1)."""
    points = np.asarray(points, dtype=float)
    return np.concatenate([1 - points.sum(axis=-1, keepdims=True), points], axis=-1)


def n_basis(dim: int, family: str) -> int:
    return dim + 1 if family == "P1" else dim + 1 + len(LOCAL_EDGES[dim])


def basis_barycentric(dim: int, family: str, lam: np.ndarray):
    """Lagrange basis in barycentric form.

    Returns values (..., nb) and derivatives with respect to each barycentric
    coordinate (..., nb, dim + 1). P2 nodes are the vertices followed by the
    midpoints of LOCAL_EDGES[dim].
    """
    lam = np.asarray(lam, dtype=float)
    lead = lam.shape[:-1]
    if family == "P1":
        return lam.copy(), np.broadcast_to(np.eye(dim + 1), lead + (dim + 1, dim + 1)).copy()
    if family != "P2":
        raise ValueError(f"unknown element family {family}")
    edges = LOCAL_EDGES[dim]
    nb = dim + 1 + len(edges)
    values = np.empty(lead + (nb,))
    derivs = np.zeros(lead + (nb, dim + 1))
    for i in range(dim + 1):
        values[..., i] = lam[..., i] * (2 * lam[..., i] - 1)
        derivs[..., i, i] = 4 * lam[..., i] - 1
    for k, (i, j) in enumerate(edges):
        node = dim + 1 + k
        values[..., node] = 4 * lam[..., i] * lam[..., j]
        derivs[..., node, i] = 4 * lam[..., j]
        derivs[..., node, j] = 4 * lam[..., i]
    return values, derivs


@lru_cache(maxsize=None)
def p2_hessian(dim: int) -> np.ndarray:
    """Constant second derivatives of the P2 basis in barycentric coordinates, (nb, d+1, d+1)."""
    edges = LOCAL_EDGES[dim]
    hessian = np.zeros((dim + 1 + len(edges), dim + 1, dim + 1))
    for i in range(dim + 1):
        hessian[i, i, i] = 4.0
    for k, (i, j) in enumerate(edges):
        hessian[dim + 1 + k, i, j] = hessian[dim + 1 + k, j, i] = 4.0
    return _read_only(hessian)


def reference_basis(dim: int, family: str, point) -> tuple[np.ndarray, np.ndarray]:
    """Values and reference-coordinate gradients of the P1 or P2 basis at one point."""
    point = np.asarray(point, dtype=float).reshape(dim)
    lam = barycentric(point)
    if (lam < -1e-12).any() or (lam > 1 + 1e-12).any():
        raise ValueError(f"point {point.tolist()} lies outside the reference simplex")
    values, derivs = basis_barycentric(dim, family, lam)
    # lambda_k = x_k for k >= 1 and lambda_0 = 1 - sum(x)
    gradients = derivs[:, 1:] - derivs[:, :1]
    return values, gradients


def element_geometry(mesh: Mesh, elements=None) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric gradients (ne, d+1, d) and |det J| (ne,) per element."""
    coords = mesh.element_coords if elements is None else mesh.element_coords[elements]
    edges = coords[:, 1:, :] - coords[:, :1, :]
    det = np.linalg.det(edges)
    if (np.abs(det) <= 0).any():
        bad = int(np.flatnonzero(np.abs(det) <= 0)[0])
        raise AssemblyError(f"element {bad} is degenerate (zero volume)")
    grad = np.empty(coords.shape)
    grad[:, 1:, :] = np.linalg.inv(edges).transpose(0, 2, 1)
    grad[:, 0, :] = -grad[:, 1:, :].sum(axis=1)
    return grad, np.abs(det)


def physical_points(mesh: Mesh, lam: np.ndarray, elements=None) -> np.ndarray:
    """Map barycentric points (nq, d+1) into every (or the given) element: (ne, nq, d)."""
    coords = mesh.element_coords if elements is None else mesh.element_coords[elements]
    return np.einsum("qk,ekd->eqd", lam, coords)


# ---------------------------------------------------------------------------
# Problem description

Field = Callable[[np.ndarray], np.ndarray] | float | list | tuple | np.ndarray | dict


def evaluate_field(value, points: np.ndarray, regions=None, shape: tuple = ()) -> np.ndarray:
    """Evaluate a constant, callable or per-region field at points (..., d).

    Per-region fields are dicts region id -> field and need `regions`, one id
    per entry of the first axis of `points`.
    """
    points = np.asarray(points, dtype=float)
    lead = points.shape[:-1]
    if isinstance(value, dict):
        if regions is None:
            raise ConfigError("per-region field evaluated without region ids")
        regions = np.asarray(regions)
        out = np.zeros(lead + shape)
        for region in np.unique(regions).tolist():
            if region not in value:
                raise ConfigError(f"region {region} has no value for a per-region field")
            mask = regions == region
            out[mask] = evaluate_field(value[region], points[mask], None, shape)
        return out
    if callable(value):
        value = value(points)
    return np.broadcast_to(np.asarray(value, dtype=float), lead + shape).copy()


@dataclass(frozen=True)
class BoundaryCondition:
    kind: str  # "dirichlet" or "neumann"
    value: Field = 0.0

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann"):
            raise ConfigError(f"unknown boundary condition kind '{self.kind}'")


def dirichlet(value: Field = 0.0) -> BoundaryCondition:
    return BoundaryCondition("dirichlet", value)


def neumann(value: Field = 0.0) -> BoundaryCondition:
    return BoundaryCondition("neumann", value)


@dataclass(frozen=True)
class ProblemSpec:
    dim: int
    mu: float
    mu_star: float
    regions: dict  # region id -> K^-1 (d x d)
    bc: dict  # boundary tag -> BoundaryCondition
    body_force: Field = 0.0
    mass_source: Field = 0.0

    def __post_init__(self):
        if self.mu <= 0:
            raise ConfigError(f"viscosity mu must be positive, got {self.mu}")
        if self.mu_star < 0:
            raise ConfigError(f"effective viscosity mu_star must be non-negative, got {self.mu_star}")
        tensors = {}
        for region, k_inverse in self.regions.items():
            tensor = np.asarray(k_inverse, dtype=float)
            if tensor.ndim == 0:
                tensor = tensor * np.eye(self.dim)
            if tensor.shape != (self.dim, self.dim):
                raise ConfigError(f"region {region}: K^-1 must be a scalar or a {self.dim}x{self.dim} matrix")
            if not np.allclose(tensor, tensor.T, rtol=0, atol=1e-12 * max(1.0, np.abs(tensor).max())):
                raise ConfigError(f"region {region}: K^-1 is not symmetric")
            if np.linalg.eigvalsh(tensor).min() < -1e-12 * max(1.0, np.abs(tensor).max()):
                raise ConfigError(f"region {region}: K^-1 is not positive semidefinite")
            tensors[int(region)] = _read_only(tensor)
        object.__setattr__(self, "regions", tensors)
        if not any(bc.kind == "dirichlet" for bc in self.bc.values()):
            raise ConfigError("at least one boundary tag must carry a Dirichlet condition")

    def bc_classes(self) -> dict[int, str]:
        return {tag: bc.kind for tag, bc in self.bc.items()}

    def check_mesh(self, mesh: Mesh):
        missing = sorted(set(np.unique(mesh.regions).tolist()) - set(self.regions))
        if missing:
            raise ConfigError(f"regions {missing} have no inverse permeability")
        if mesh.dim != self.dim:
            raise ConfigError(f"problem is {self.dim}D but the mesh is {mesh.dim}D")

    def k_inverse(self, regions: np.ndarray) -> np.ndarray:
        """(n, d, d) tensor per region id."""
        table = np.stack([self.regions[r] for r in sorted(self.regions)])
        index = np.searchsorted(sorted(self.regions), regions)
        return table[index]


# ---------------------------------------------------------------------------
# Degrees of freedom


@dataclass(frozen=True, eq=False)
class DofMaps:
    dim: int
    n_nodes: int
    node_coords: np.ndarray  # (n_nodes, d): vertices, then edge midpoints
    element_nodes: np.ndarray  # (ne, nb2)
    velocity_dofs: np.ndarray  # (ne, d * nb2), component-major
    pressure_dofs: np.ndarray  # (ne, d + 1)
    node_tags: np.ndarray  # (n_nodes,) Dirichlet tag of each node, 0 when free
    dirichlet_dofs: np.ndarray
    dirichlet_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_velocity(self) -> int:
        return self.dim * self.n_nodes

    @property
    def n_pressure(self) -> int:
        return len(np.unique(self.pressure_dofs)) if self.pressure_dofs.size else 0

    @property
    def free_dofs(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n_velocity), self.dirichlet_dofs)


def _facet_edges(dim: int) -> list[list[int]]:
    """Local edges lying on each local facet."""
    return [[k for k, (i, j) in enumerate(LOCAL_EDGES[dim]) if opposite not in (i, j)] for opposite in range(dim + 1)]


def build_dofmaps(mesh: Mesh, topology: Topology, spec: ProblemSpec) -> DofMaps:
    dim, nv = mesh.dim, mesh.n_vertices
    n_nodes = nv + topology.n_edges
    edges = topology.edges
    node_coords = np.concatenate([mesh.vertices, 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])])
    element_nodes = np.concatenate([mesh.elements, nv + topology.element_edges], axis=1)
    velocity_dofs = np.concatenate([c * n_nodes + element_nodes for c in range(dim)], axis=1)

    node_tags = np.zeros(n_nodes, dtype=np.int64)
    facet_edges = _facet_edges(dim)
    for f in topology.facets_of_class(FacetClass.DIRICHLET).tolist():
        e, k = topology.facet_elements[f, 0], topology.facet_local[f, 0]
        nodes = np.concatenate([topology.facets[f], nv + topology.element_edges[e, facet_edges[k]]])
        # nodes shared by several Dirichlet tags take the largest tag
        np.maximum.at(node_tags, nodes, topology.facet_tags[f])
    constrained = np.flatnonzero(node_tags)
    dirichlet_dofs = np.sort(np.concatenate([c * n_nodes + constrained for c in range(dim)]))

    dofmaps = DofMaps(
        dim=dim,
        n_nodes=n_nodes,
        node_coords=_read_only(node_coords),
        element_nodes=_read_only(element_nodes),
        velocity_dofs=_read_only(velocity_dofs),
        pressure_dofs=_read_only(mesh.elements.copy()),
        node_tags=_read_only(node_tags),
        dirichlet_dofs=_read_only(dirichlet_dofs),
    )
    return replace(dofmaps, dirichlet_values=_read_only(interpolate_dirichlet(mesh, dofmaps, spec)))


def interpolate_dirichlet(mesh: Mesh, dofmaps: DofMaps, spec: ProblemSpec) -> np.ndarray:
    """u_D sampled at the Dirichlet nodes, ordered like dofmaps.dirichlet_dofs."""
    dim, n_nodes = dofmaps.dim, dofmaps.n_nodes
    nodal = np.zeros((n_nodes, dim))
    for tag in np.unique(dofmaps.node_tags[dofmaps.node_tags > 0]).tolist():
        condition = spec.bc.get(tag)
        if condition is None or condition.kind != "dirichlet":
            raise ConfigError(f"boundary tag {tag} is not a Dirichlet boundary")
        nodes = np.flatnonzero(dofmaps.node_tags == tag)
        nodal[nodes] = evaluate_field(condition.value, dofmaps.node_coords[nodes], shape=(dim,))
    dofs = dofmaps.dirichlet_dofs
    return nodal[dofs % n_nodes, dofs // n_nodes]


# ---------------------------------------------------------------------------
# Assembly


@lru_cache(maxsize=None)
def _reference_integrals(dim: int):
    points, weights = quadrature(dim, DEGREE_A)
    v2, d2 = basis_barycentric(dim, "P2", barycentric(points))
    mass = np.einsum("q,qi,qj->ij", weights, v2, v2)
    stiffness = np.einsum("q,qik,qjl->ikjl", weights, d2, d2)
    points, weights = quadrature(dim, DEGREE_LOAD)
    lam = barycentric(points)
    _, d2 = basis_barycentric(dim, "P2", lam)
    coupling = np.einsum("q,qm,qjk->mjk", weights, lam, d2)
    return mass, stiffness, coupling


def _scatter(rows, cols, values, shape):
    rows = np.broadcast_to(rows[:, :, None], values.shape).reshape(-1)
    cols = np.broadcast_to(cols[:, None, :], values.shape).reshape(-1)
    return sparse.coo_matrix((values.reshape(-1), (rows, cols)), shape=shape).tocsr()


@dataclass(frozen=True, eq=False)
class SaddleSystem:
    mesh: Mesh
    A: sparse.csr_matrix  # (n_v, n_v), before constraints
    B: sparse.csr_matrix  # (n_p, n_v)
    f_vec: np.ndarray
    g_vec: np.ndarray
    dofmaps: DofMaps
    free_dofs: np.ndarray
    f_lifted: np.ndarray  # f restricted to free dofs, Dirichlet lifting subtracted
    g_lifted: np.ndarray
    pressure_mass: np.ndarray  # integral of each P1 basis function
    zero_mean_pressure: bool
    lifting_applied: bool = True

    @property
    def n_unknowns(self) -> int:
        return len(self.free_dofs) + len(self.g_vec) + int(self.zero_mean_pressure)

    def matrix(self) -> sparse.csc_matrix:
        """Constrained saddle point matrix [[A_ff, B_f^T], [B_f, 0]] (+ zero-mean row)."""
        a_ff = self.A[self.free_dofs][:, self.free_dofs]
        n_p = len(self.g_vec)
        if n_p == 0:
            return sparse.csc_matrix(a_ff)
        b_f = self.B[:, self.free_dofs]
        zero = sparse.csr_matrix((n_p, n_p))
        if not self.zero_mean_pressure:
            return sparse.bmat([[a_ff, b_f.T], [b_f, zero]], format="csc")
        mean = sparse.csr_matrix(self.pressure_mass[None, :])
        blocks = [
            [a_ff, b_f.T, None],
            [b_f, zero, mean.T],
            [None, mean, sparse.csr_matrix((1, 1))],
        ]
        return sparse.bmat(blocks, format="csc")

    def rhs(self) -> np.ndarray:
        parts = [self.f_lifted, self.g_lifted]
        if self.zero_mean_pressure:
            parts.append(np.zeros(1))
        return np.concatenate(parts)


def _neumann_load(mesh: Mesh, topology: Topology, dofmaps: DofMaps, spec: ProblemSpec) -> np.ndarray:
    dim = mesh.dim
    load = np.zeros(dofmaps.n_velocity)
    facets = topology.facets_of_class(FacetClass.NEUMANN)
    if not len(facets):
        return load
    ref_points, ref_weights = quadrature(dim - 1, DEGREE_FACET)
    mu_facet = barycentric(ref_points)
    lf = local_facets(dim)
    for k in range(dim + 1):
        group = facets[topology.facet_local[facets, 0] == k]
        if not len(group):
            continue
        elements = topology.facet_elements[group, 0]
        lam = np.zeros((len(ref_weights), dim + 1))
        lam[:, list(lf[k])] = mu_facet
        values, _ = basis_barycentric(dim, "P2", lam)
        coords = mesh.element_coords[elements][:, list(lf[k]), :]
        points = np.einsum("qm,fmd->fqd", mu_facet, coords)
        weights = ref_weights[None, :] * facet_measure(coords)[:, None] * math.factorial(dim - 1)
        traction = np.zeros(points.shape)
        for tag in np.unique(topology.facet_tags[group]).tolist():
            mask = topology.facet_tags[group] == tag
            traction[mask] = evaluate_field(spec.bc[tag].value, points[mask], shape=(dim,))
        local = np.einsum("fq,fqa,qi->fai", weights, traction, values).reshape(len(group), -1)
        np.add.at(load, dofmaps.velocity_dofs[elements], local)
    return load


def facet_measure(coords: np.ndarray) -> np.ndarray:
    """Length (2D) or area (3D) of facets given their vertex coordinates (nf, d, d)."""
    if coords.shape[1] == 2:
        return np.linalg.norm(coords[:, 1] - coords[:, 0], axis=1)
    return 0.5 * np.linalg.norm(np.cross(coords[:, 1] - coords[:, 0], coords[:, 2] - coords[:, 0]), axis=1)


def assemble(mesh: Mesh, topology: Topology, dofmaps: DofMaps, spec: ProblemSpec) -> SaddleSystem:
    """Assemble A, B and the loads, then move the Dirichlet lifting to the right-hand side."""
    spec.check_mesh(mesh)
    dim, ne = mesh.dim, mesh.n_elements
    nb = n_basis(dim, "P2")
    n_v, n_p = dofmaps.n_velocity, mesh.n_vertices
    grad, det = element_geometry(mesh)
    mass_ref, stiffness_ref, coupling_ref = _reference_integrals(dim)

    gram = np.einsum("ekd,eld->ekl", grad, grad)
    stiffness = det[:, None, None] * np.einsum("ikjl,ekl->eij", stiffness_ref, gram)
    stiffness = 0.5 * (stiffness + stiffness.transpose(0, 2, 1))
    mass = det[:, None, None] * mass_ref[None]
    k_inverse = spec.k_inverse(mesh.regions)
    eye = np.eye(dim)
    local_a = spec.mu_star * np.einsum("ab,eij->eaibj", eye, stiffness) + spec.mu * np.einsum(
        "eab,eij->eaibj", k_inverse, mass
    )
    local_a = local_a.reshape(ne, dim * nb, dim * nb)
    local_b = -det[:, None, None, None] * np.einsum("mjk,eka->emaj", coupling_ref, grad)
    local_b = local_b.reshape(ne, dim + 1, dim * nb)

    A = _scatter(dofmaps.velocity_dofs, dofmaps.velocity_dofs, local_a, (n_v, n_v))
    A = (0.5 * (A + A.T)).tocsr()
    B = _scatter(dofmaps.pressure_dofs, dofmaps.velocity_dofs, local_b, (n_p, n_v))

    points, weights = quadrature(dim, DEGREE_LOAD)
    lam = barycentric(points)
    v2, _ = basis_barycentric(dim, "P2", lam)
    xq = physical_points(mesh, lam)
    force = evaluate_field(spec.body_force, xq, mesh.regions, (dim,))
    source = evaluate_field(spec.mass_source, xq, mesh.regions)
    local_f = np.einsum("e,q,eqa,qi->eai", det, weights, force, v2).reshape(ne, -1)
    local_g = -np.einsum("e,q,eq,qm->em", det, weights, source, lam)

    f_vec = np.zeros(n_v)
    np.add.at(f_vec, dofmaps.velocity_dofs, local_f)
    f_vec += _neumann_load(mesh, topology, dofmaps, spec)
    g_vec = np.zeros(n_p)
    np.add.at(g_vec, dofmaps.pressure_dofs, local_g)
    pressure_mass = np.zeros(n_p)
    np.add.at(pressure_mass, dofmaps.pressure_dofs, np.repeat(det[:, None] / math.factorial(dim + 1), dim + 1, axis=1))

    free = dofmaps.free_dofs
    fixed, values = dofmaps.dirichlet_dofs, dofmaps.dirichlet_values
    f_lifted = f_vec[free] - A[free][:, fixed] @ values
    g_lifted = g_vec - B[:, fixed] @ values
    zero_mean = not (topology.facet_class == FacetClass.NEUMANN).any()

    logger.debug(
        "assemble: %d elements, %d velocity dofs (%d free), %d pressure dofs%s",
        ne,
        n_v,
        len(free),
        n_p,
        ", zero-mean pressure" if zero_mean else "",
    )
    return SaddleSystem(
        mesh=mesh,
        A=A,
        B=B,
        f_vec=f_vec,
        g_vec=g_vec,
        dofmaps=dofmaps,
        free_dofs=free,
        f_lifted=f_lifted,
        g_lifted=g_lifted,
        pressure_mass=pressure_mass,
        zero_mean_pressure=zero_mean,
    )


@dataclass(frozen=True, eq=False)
class Solution:
    mesh: Mesh
    dofmaps: DofMaps
    velocity: np.ndarray  # (n_velocity,), Dirichlet values included
    pressure: np.ndarray  # (n_pressure,)

    def local_velocity(self, elements=None) -> np.ndarray:
        """(ne, d, nb) P2 coefficients per element and component."""
        dofs = self.dofmaps.velocity_dofs if elements is None else self.dofmaps.velocity_dofs[elements]
        return self.velocity[dofs].reshape(len(dofs), self.dofmaps.dim, -1)

    def local_pressure(self, elements=None) -> np.ndarray:
        dofs = self.dofmaps.pressure_dofs if elements is None else self.dofmaps.pressure_dofs[elements]
        return self.pressure[dofs]

    def nodal_velocity(self) -> np.ndarray:
        """(n_nodes, d) velocity at every P2 node."""
        return self.velocity.reshape(self.dofmaps.dim, -1).T

    def vertex_velocity(self) -> np.ndarray:
        return self.nodal_velocity()[: self.mesh.n_vertices]
