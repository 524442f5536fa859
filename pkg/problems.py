"""Built-in flow problems and manufactured solutions.

Initial meshes are structured simplicial grids of the polygonal domains
(see `mesh.block_mesh`); `target_h` sets the grid spacing.
"""

from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from errors import ConfigError
from fem_assembly import (
    ProblemSpec,
    Solution,
    barycentric,
    basis_barycentric,
    dirichlet,
    element_geometry,
    neumann,
    physical_points,
    quadrature,
)
from mesh import Mesh, block_mesh, diameters

MU = 1e-3

# boundary tags; walls come last so that no-slip wins at shared nodes
INFLOW, OUTFLOW, WALL = 1, 2, 3


@dataclass(frozen=True)
class ExactSolution:
    velocity: Callable  # (..., d) -> (..., d)
    velocity_gradient: Callable  # (..., d) -> (..., d, d), [a, c] = du_a/dx_c
    pressure: Callable  # (..., d) -> (...)
    velocity_laplacian: Callable | None = None
    pressure_gradient: Callable | None = None


@dataclass(frozen=True, eq=False)
class BuiltinProblem:
    name: str
    mesh: Mesh
    spec: ProblemSpec
    exact: ExactSolution | None = None
    description: str = ""
    reentrant_corners: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    domain_measure: float | None = None


def _stack(*components) -> np.ndarray:
    return np.stack(np.broadcast_arrays(*components), axis=-1)


def _matrix(*rows) -> np.ndarray:
    return np.stack([_stack(*row) for row in rows], axis=-2)


def _tagger(inflow: Callable, outflow: Callable) -> Callable:
    def tag(center):
        if inflow(center):
            return INFLOW
        if outflow(center):
            return OUTFLOW
        return WALL

    return tag


def _flow_bcs(inflow_value) -> dict:
    return {INFLOW: dirichlet(inflow_value), OUTFLOW: neumann(0.0), WALL: dirichlet(0.0)}


def nonconvex_2d(target_h: float = 0.25) -> BuiltinProblem:
    """Darcy channel (0,3)x(0,1) with a Stokes pocket above and a Darcy pocket below its middle third."""
    channel, stokes, pocket = 1, 2, 3
    boxes = [
        ((0.0, 0.0), (3.0, 1.0), channel),
        ((1.0, 1.0), (2.0, 2.0), stokes),
        ((1.0, -1.0), (2.0, 0.0), pocket),
    ]
    tag = _tagger(lambda c: np.isclose(c[0], 0.0), lambda c: np.isclose(c[0], 3.0))
    mesh = block_mesh(2, boxes, target_h, tag)

    def inflow(x):
        y = x[..., 1]
        return _stack(y * (1 - y), 0.0 * y)

    spec = ProblemSpec(
        dim=2,
        mu=MU,
        mu_star=MU,
        regions={channel: 1 / 5e-4, stokes: 0.0, pocket: 1 / 5e-2},
        bc=_flow_bcs(inflow),
    )
    return BuiltinProblem(
        name="nonconvex2d",
        mesh=mesh,
        spec=spec,
        description="plus-shaped channel with a Stokes pocket and a Darcy pocket, parabolic inflow",
        reentrant_corners=np.array([[1.0, 0.0], [2.0, 0.0], [1.0, 1.0], [2.0, 1.0]]),
        domain_measure=5.0,
    )


def obstacle_2d(target_h: float = 0.2) -> BuiltinProblem:
    """Square (-2,2)^2 around an impermeable obstacle (-0.4,0.4)x(-1,1)."""
    ambient, stokes, darcy = 1, 2, 3
    boxes = [
        ((-1.2, 0.0), (-0.4, 1.0), stokes),
        ((0.4, 0.0), (1.2, 1.0), stokes),
        ((-1.2, -1.0), (-0.4, 0.0), darcy),
        ((0.4, -1.0), (1.2, 0.0), darcy),
        ((-2.0, -2.0), (-0.4, 2.0), ambient),
        ((0.4, -2.0), (2.0, 2.0), ambient),
        ((-0.4, 1.0), (0.4, 2.0), ambient),
        ((-0.4, -2.0), (0.4, -1.0), ambient),
    ]
    tag = _tagger(lambda c: np.isclose(c[0], -2.0), lambda c: np.isclose(c[0], 2.0))
    mesh = block_mesh(2, boxes, target_h, tag, unit=0.2)
    spec = ProblemSpec(
        dim=2,
        mu=MU,
        mu_star=MU,
        regions={ambient: 1 / 5e-4, stokes: 0.0, darcy: 1 / 5e-2},
        bc=_flow_bcs((0.25, 0.0)),
    )
    corners = np.array([[-0.4, -1.0], [0.4, -1.0], [0.4, 1.0], [-0.4, 1.0]])
    return BuiltinProblem(
        name="obstacle2d",
        mesh=mesh,
        spec=spec,
        description="flow around a rectangular obstacle flanked by Stokes and Darcy pockets",
        reentrant_corners=corners,
        domain_measure=16.0 - 0.8 * 2.0,
    )


# permeability of each unit cube, keyed by its lower corner, from 5e-5 to 500; the
# cubes with z in (1,2) form the channel from inflow to outflow and each channel cube
# with y in (0,1) sits on a pocket 1000 times less permeable
CUBE_PERMEABILITIES = {
    (2, 1, 0): 500.0,
    (2, 1, 1): 50.0,
    (2, 0, 1): 5.0,
    (0, 0, 1): 0.5,
    (1, 0, 1): 5e-2,
    (2, 0, 0): 5e-3,
    (0, 0, 0): 5e-4,
    (1, 0, 0): 5e-5,
}


def nonconvex_3d(target_h: float = 0.5) -> BuiltinProblem:
    """L-shaped slice (0,3)x(0,1) + (2,3)x(1,2) extruded over z in (0,2): eight unit cubes."""
    boxes = [
        (corner, tuple(c + 1.0 for c in corner), region)
        for region, corner in enumerate(CUBE_PERMEABILITIES, start=1)
    ]
    tag = _tagger(lambda c: np.isclose(c[1], 2.0), lambda c: np.isclose(c[0], 0.0))
    mesh = block_mesh(3, boxes, target_h, tag)

    def inflow(x):
        # bubble on the top face, peak magnitude 1 at its center
        profile = 4 * (x[..., 0] - 2) * (3 - x[..., 0]) * x[..., 2] * (2 - x[..., 2])
        return _stack(0.0 * profile, -profile, 0.0 * profile)

    spec = ProblemSpec(
        dim=3,
        mu=MU,
        mu_star=MU,
        regions={region: 1 / k for region, k in enumerate(CUBE_PERMEABILITIES.values(), start=1)},
        bc=_flow_bcs(inflow),
    )
    return BuiltinProblem(
        name="nonconvex3d",
        mesh=mesh,
        spec=spec,
        description="eight unit cubes in an L-shaped prism, permeabilities 5e-5 to 500",
        reentrant_corners=np.array([[2.0, 1.0, 0.0], [2.0, 1.0, 1.0], [2.0, 1.0, 2.0]]),
        domain_measure=8.0,
    )


def _quadratic_2d() -> tuple[ExactSolution, Callable]:
    def velocity(x):
        return _stack(x[..., 0] ** 2, -2 * x[..., 0] * x[..., 1])

    def gradient(x):
        X, Y = x[..., 0], x[..., 1]
        return _matrix((2 * X, 0.0 * X), (-2 * Y, -2 * X))

    def pressure(x):
        return x[..., 0] + x[..., 1] - 1

    def laplacian(x):
        return _stack(2.0 + 0 * x[..., 0], 0.0 * x[..., 0])

    def pressure_gradient(x):
        return _stack(1.0 + 0 * x[..., 0], 1.0 + 0 * x[..., 0])

    def force(x, mu_star, mu_k):
        X, Y = x[..., 0], x[..., 1]
        return _stack(-2 * mu_star + mu_k * X**2 + 1, -2 * mu_k * X * Y + 1)

    return ExactSolution(velocity, gradient, pressure, laplacian, pressure_gradient), force


def _trig_2d() -> tuple[ExactSolution, Callable]:
    pi = np.pi

    def velocity(x):
        X, Y = pi * x[..., 0], pi * x[..., 1]
        return _stack(np.sin(X) * np.cos(Y), -np.cos(X) * np.sin(Y))

    def gradient(x):
        X, Y = pi * x[..., 0], pi * x[..., 1]
        return pi * _matrix(
            (np.cos(X) * np.cos(Y), -np.sin(X) * np.sin(Y)),
            (np.sin(X) * np.sin(Y), -np.cos(X) * np.cos(Y)),
        )

    def pressure(x):
        return np.cos(pi * x[..., 0]) * np.cos(pi * x[..., 1])

    def laplacian(x):
        return -2 * pi**2 * velocity(x)

    def pressure_gradient(x):
        X, Y = pi * x[..., 0], pi * x[..., 1]
        return -pi * _stack(np.sin(X) * np.cos(Y), np.cos(X) * np.sin(Y))

    def force(x, mu_star, mu_k):
        X, Y = pi * x[..., 0], pi * x[..., 1]
        c = 2 * pi**2 * mu_star + mu_k
        return _stack(
            c * np.sin(X) * np.cos(Y) - pi * np.sin(X) * np.cos(Y),
            -c * np.cos(X) * np.sin(Y) - pi * np.cos(X) * np.sin(Y),
        )

    return ExactSolution(velocity, gradient, pressure, laplacian, pressure_gradient), force


def _quadratic_3d() -> tuple[ExactSolution, Callable]:
    def velocity(x):
        X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
        return _stack(X**2, Y**2, -2 * (X + Y) * Z)

    def gradient(x):
        X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
        zero = 0.0 * X
        return _matrix((2 * X, zero, zero), (zero, 2 * Y, zero), (-2 * Z, -2 * Z, -2 * (X + Y)))

    def pressure(x):
        return x[..., 0] + x[..., 1] + x[..., 2] - 1.5

    def laplacian(x):
        zero = 0.0 * x[..., 0]
        return _stack(2.0 + zero, 2.0 + zero, zero)

    def pressure_gradient(x):
        one = 1.0 + 0 * x[..., 0]
        return _stack(one, one, one)

    def force(x, mu_star, mu_k):
        X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
        return _stack(
            -2 * mu_star + mu_k * X**2 + 1,
            -2 * mu_star + mu_k * Y**2 + 1,
            -2 * mu_k * (X + Y) * Z + 1,
        )

    return ExactSolution(velocity, gradient, pressure, laplacian, pressure_gradient), force


def _trig_3d() -> tuple[ExactSolution, Callable]:
    pi = np.pi

    def parts(x):
        X, Y, Z = pi * x[..., 0], pi * x[..., 1], pi * x[..., 2]
        return np.sin(X), np.cos(X), np.sin(Y), np.cos(Y), np.sin(Z), np.cos(Z)

    def velocity(x):
        sx, cx, sy, cy, sz, cz = parts(x)
        return _stack(2 * sx * cy * cz, -cx * sy * cz, -cx * cy * sz)

    def gradient(x):
        sx, cx, sy, cy, sz, cz = parts(x)
        return pi * _matrix(
            (2 * cx * cy * cz, -2 * sx * sy * cz, -2 * sx * cy * sz),
            (sx * sy * cz, -cx * cy * cz, cx * sy * sz),
            (sx * cy * sz, cx * sy * sz, -cx * cy * cz),
        )

    def pressure(x):
        _, cx, _, cy, _, cz = parts(x)
        return cx * cy * cz

    def laplacian(x):
        return -3 * pi**2 * velocity(x)

    def pressure_gradient(x):
        sx, cx, sy, cy, sz, cz = parts(x)
        return -pi * _stack(sx * cy * cz, cx * sy * cz, cx * cy * sz)

    def force(x, mu_star, mu_k):
        sx, cx, sy, cy, sz, cz = parts(x)
        c = 3 * pi**2 * mu_star + mu_k
        return _stack(
            2 * c * sx * cy * cz - pi * sx * cy * cz,
            -c * cx * sy * cz - pi * cx * sy * cz,
            -c * cx * cy * sz - pi * cx * cy * sz,
        )

    return ExactSolution(velocity, gradient, pressure, laplacian, pressure_gradient), force


MANUFACTURED = {
    (2, "quad"): _quadratic_2d,
    (2, "trig"): _trig_2d,
    (3, "quad"): _quadratic_3d,
    (3, "trig"): _trig_3d,
}


def manufactured(dim: int, case: str, target_h: float = 0.25, mu: float = 1.0, k_inverse: float = 1.0) -> BuiltinProblem:
    """Divergence-free exact velocity on the unit square/cube, Dirichlet data everywhere.

    The body force is -mu* lap(u) + mu K^-1 u + grad(p) with mu* = mu and
    K^-1 = k_inverse * I; g = 0.
    """
    if (dim, case) not in MANUFACTURED:
        raise ConfigError(f"no manufactured case '{case}' in {dim}D")
    exact, force = MANUFACTURED[dim, case]()
    lows, highs = (0.0,) * dim, (1.0,) * dim
    mesh = block_mesh(dim, [(lows, highs, 1)], target_h, lambda center: 1)
    spec = ProblemSpec(
        dim=dim,
        mu=mu,
        mu_star=mu,
        regions={1: k_inverse},
        bc={1: dirichlet(exact.velocity)},
        body_force=lambda x: force(x, mu, mu * k_inverse),
        mass_source=0.0,
    )
    return BuiltinProblem(
        name=f"mms{dim}d-{case}",
        mesh=mesh,
        spec=spec,
        exact=exact,
        description=f"manufactured {'quadratic/linear' if case == 'quad' else 'trigonometric'} solution on the unit {'square' if dim == 2 else 'cube'}",
        domain_measure=1.0,
    )


def error_norms(solution: Solution, exact: ExactSolution, degree: int = 6) -> tuple[float, float]:
    """H1 norm of u - u_h and L2 norm of p - p_h."""
    if exact is None:
        raise ConfigError("error norms need an exact solution")
    mesh = solution.mesh
    dim = mesh.dim
    points, weights = quadrature(dim, degree)
    lam = barycentric(points)
    values, derivs = basis_barycentric(dim, "P2", lam)
    grad, det = element_geometry(mesh)
    coeffs = solution.local_velocity()

    x = physical_points(mesh, lam)
    u_error = exact.velocity(x) - np.einsum("eai,qi->eqa", coeffs, values)
    gradient_error = exact.velocity_gradient(x) - np.einsum("eai,qik,ekc->eqac", coeffs, derivs, grad)
    p_error = exact.pressure(x) - np.einsum("qm,em->eq", lam, solution.local_pressure())

    h1 = np.einsum("e,q,eqa->", det, weights, u_error**2) + np.einsum("e,q,eqac->", det, weights, gradient_error**2)
    l2 = np.einsum("e,q,eq->", det, weights, p_error**2)
    return float(np.sqrt(h1)), float(np.sqrt(l2))


def corner_refinement_ratio(mesh: Mesh, corners, radius: float = 0.1) -> float:
    """Largest ratio, over the corners, of the mean diameter of elements within
    `radius` of the corner to the global mean diameter."""
    h = diameters(mesh)
    coords = mesh.element_coords
    ratios = []
    for corner in np.atleast_2d(np.asarray(corners, dtype=float)):
        nearest = np.linalg.norm(coords - corner, axis=2).min(axis=1)
        near = nearest <= radius
        if near.any():
            ratios.append(h[near].mean() / h.mean())
    if not ratios:
        raise ValueError("no element lies near any of the given corners")
    return float(max(ratios))


PROBLEMS = {
    "nonconvex2d": nonconvex_2d,
    "obstacle2d": obstacle_2d,
    "nonconvex3d": nonconvex_3d,
    "mms2d-quad": lambda h=0.25: manufactured(2, "quad", h),
    "mms2d-trig": lambda h=0.25: manufactured(2, "trig", h),
    "mms3d-quad": lambda h=0.5: manufactured(3, "quad", h),
    "mms3d-trig": lambda h=0.25: manufactured(3, "trig", h),
}


def get_problem(name: str, target_h: float | None = None) -> BuiltinProblem:
    if name not in PROBLEMS:
        raise ConfigError(f"unknown problem '{name}' (available: {', '.join(PROBLEMS)})")
    builder = PROBLEMS[name]
    return builder() if target_h is None else builder(target_h)
