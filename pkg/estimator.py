"""Residual a posteriori error estimator.

For every element T

    eta_T^2 = h_T^2 ||R1||_T^2 + ||R2||_T^2 + h_T sum_{E in T} ||R_E||_E^2

with the strong-form residuals R1 = f + mu* lap(u_h) - mu K^-1 u_h - grad(p_h),
R2 = g - div(u_h) and the facet residuals R_E (half the normal stress jump on
interior facets, the traction mismatch on Neumann facets, zero on Dirichlet
facets).
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from errors import TopologyError
from fem_assembly import (
    ProblemSpec,
    Solution,
    barycentric,
    basis_barycentric,
    element_geometry,
    evaluate_field,
    facet_measure,
    p2_hessian,
    quadrature,
)
from mesh import FacetClass, Mesh, Topology, diameters

logger = logging.getLogger(__name__)

DEGREE_ELEMENT = 4
DEGREE_FACET = 4


@dataclass(frozen=True, eq=False)
class IndicatorField:
    eta: np.ndarray
    r1_part: np.ndarray
    r2_part: np.ndarray
    jump_part: np.ndarray
    global_estimate: float

    @property
    def r1_sum(self) -> float:
        return float(self.r1_part.sum())

    @property
    def r2_sum(self) -> float:
        return float(self.r2_part.sum())

    @property
    def jump_sum(self) -> float:
        return float(self.jump_part.sum())


def _element_residuals(solution: Solution, spec: ProblemSpec | None, elements: np.ndarray, lam: np.ndarray):
    """R1 (ne, nq, d) and R2 (ne, nq) at barycentric points lam (nq, d+1) of the given elements."""
    mesh = solution.mesh
    dim = mesh.dim
    grad, _ = element_geometry(mesh, elements)
    coeffs = solution.local_velocity(elements)  # (ne, d, nb)
    values, derivs = basis_barycentric(dim, "P2", lam)
    gram = np.einsum("ekc,elc->ekl", grad, grad)

    u = np.einsum("eai,qi->eqa", coeffs, values)
    grad_u = np.einsum("eai,qik,ekc->eqac", coeffs, derivs, grad)
    laplacian = np.einsum("eai,ikl,ekl->ea", coeffs, p2_hessian(dim), gram)
    grad_p = np.einsum("em,emc->ec", solution.local_pressure(elements), grad)

    if spec is None:
        r2 = -np.trace(grad_u, axis1=2, axis2=3)
        return None, r2
    points = np.einsum("qk,ekd->eqd", lam, mesh.element_coords[elements])
    regions = mesh.regions[elements]
    force = evaluate_field(spec.body_force, points, regions, (dim,))
    source = evaluate_field(spec.mass_source, points, regions)
    k_inverse = spec.k_inverse(regions)
    r1 = (
        force
        + spec.mu_star * laplacian[:, None, :]
        - spec.mu * np.einsum("eab,eqb->eqa", k_inverse, u)
        - grad_p[:, None, :]
    )
    r2 = source - np.trace(grad_u, axis1=2, axis2=3)
    return r1, r2


def _check_element(solution: Solution, element: int):
    if not 0 <= element < solution.mesh.n_elements:
        raise IndexError(f"element {element} out of range [0, {solution.mesh.n_elements})")


def residual_r1(solution: Solution, spec: ProblemSpec, element: int, point) -> np.ndarray:
    """Momentum residual at a point given in reference coordinates of the element."""
    _check_element(solution, element)
    lam = barycentric(np.asarray(point, dtype=float).reshape(1, -1))
    r1, _ = _element_residuals(solution, spec, np.array([element]), lam)
    return r1[0, 0]


def residual_r2(solution: Solution, element: int, point, spec: ProblemSpec | None = None) -> float:
    """Mass residual g - div(u_h); g is taken as zero without a problem spec."""
    _check_element(solution, element)
    lam = barycentric(np.asarray(point, dtype=float).reshape(1, -1))
    _, r2 = _element_residuals(solution, spec, np.array([element]), lam)
    return float(r2[0, 0])


def _normal_stress(solution: Solution, spec: ProblemSpec, elements, facet_vertices, mu_facet, normals):
    """mu* du/dn - p n of each element at the facet points, (nf, nq, d)."""
    mesh = solution.mesh
    dim = mesh.dim
    # barycentric coordinates of the facet points inside each element
    match = (mesh.elements[elements][:, None, :] == facet_vertices[:, :, None]).astype(float)
    lam = np.einsum("qm,fmk->fqk", mu_facet, match)
    _, derivs = basis_barycentric(dim, "P2", lam)
    grad, _ = element_geometry(mesh, elements)
    grad_u = np.einsum("fai,fqik,fkc->fqac", solution.local_velocity(elements), derivs, grad)
    pressure = np.einsum("fqk,fk->fq", lam, solution.local_pressure(elements))
    return spec.mu_star * np.einsum("fqac,fc->fqa", grad_u, normals) - pressure[..., None] * normals[:, None, :]


def _facet_residuals(solution: Solution, spec: ProblemSpec, topology: Topology, facets: np.ndarray, ref_points):
    """R_E at facet reference points for the given facets: (points (nf, nq, d), values (nf, nq, d))."""
    mesh = solution.mesh
    dim = mesh.dim
    mu_facet = barycentric(ref_points)
    facet_vertices = topology.facets[facets]
    points = np.einsum("qm,fmd->fqd", mu_facet, mesh.vertices[facet_vertices])
    values = np.zeros(points.shape)

    first = topology.facet_elements[facets, 0]
    grad, _ = element_geometry(mesh, first)
    # outward normal of the lower-index element
    normals = -grad[np.arange(len(facets)), topology.facet_local[facets, 0]]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)

    classes = topology.facet_class[facets]
    interior = np.flatnonzero(classes == FacetClass.INTERIOR)
    if len(interior):
        second = topology.facet_elements[facets[interior], 1]
        stress_1 = _normal_stress(solution, spec, first[interior], facet_vertices[interior], mu_facet, normals[interior])
        stress_2 = _normal_stress(solution, spec, second, facet_vertices[interior], mu_facet, normals[interior])
        values[interior] = 0.5 * (stress_1 - stress_2)
    neumann = np.flatnonzero(classes == FacetClass.NEUMANN)
    if len(neumann):
        stress = _normal_stress(solution, spec, first[neumann], facet_vertices[neumann], mu_facet, normals[neumann])
        tags = topology.facet_tags[facets[neumann]]
        traction = np.zeros(stress.shape)
        for tag in np.unique(tags).tolist():
            mask = tags == tag
            traction[mask] = evaluate_field(spec.bc[tag].value, points[neumann][mask], shape=(dim,))
        values[neumann] = traction - stress
    return points, values


def facet_residual(solution: Solution, spec: ProblemSpec, topology: Topology, facet: int, points=None) -> np.ndarray:
    """R_E of one facet at facet reference points (default: the facet quadrature points), (nq, d)."""
    if not 0 <= facet < topology.n_facets:
        raise TopologyError(f"facet {facet} is not part of the topology ({topology.n_facets} facets)")
    dim = solution.mesh.dim
    if points is None:
        points, _ = quadrature(dim - 1, DEGREE_FACET)
    points = np.asarray(points, dtype=float).reshape(-1, dim - 1)
    _, values = _facet_residuals(solution, spec, topology, np.array([facet]), points)
    return values[0]


def compute_indicators(solution: Solution, spec: ProblemSpec, mesh: Mesh, topology: Topology) -> IndicatorField:
    dim, ne = mesh.dim, mesh.n_elements
    h = diameters(mesh)
    _, det = element_geometry(mesh)

    points, weights = quadrature(dim, DEGREE_ELEMENT)
    r1, r2 = _element_residuals(solution, spec, np.arange(ne), barycentric(points))
    r1_norm = det * np.einsum("q,eqa->e", weights, r1**2)
    r2_norm = det * np.einsum("q,eq->e", weights, r2**2)

    facet_points, facet_weights = quadrature(dim - 1, DEGREE_FACET)
    facets = np.arange(topology.n_facets)
    _, residual = _facet_residuals(solution, spec, topology, facets, facet_points)
    measure = facet_measure(mesh.vertices[topology.facets]) * math.factorial(dim - 1)
    facet_norm = measure * np.einsum("q,fqa->f", facet_weights, residual**2)

    jump = np.zeros(ne)
    np.add.at(jump, topology.facet_elements[:, 0], facet_norm)
    shared = topology.facet_elements[:, 1] >= 0
    np.add.at(jump, topology.facet_elements[shared, 1], facet_norm[shared])

    r1_part = h**2 * r1_norm
    r2_part = r2_norm
    jump_part = h * jump
    eta_squared = r1_part + r2_part + jump_part
    estimate = float(np.sqrt(eta_squared.sum()))
    logger.debug("estimator: %d elements, %d facets, estimate %.4e", ne, topology.n_facets, estimate)
    return IndicatorField(
        eta=np.sqrt(eta_squared),
        r1_part=r1_part,
        r2_part=r2_part,
        jump_part=jump_part,
        global_estimate=estimate,
    )
