import logging
import time
from collections.abc import Callable
from dataclasses import asdict, dataclass, field

import numpy as np

from errors import AMRAborted, MeshError
from estimator import IndicatorField, compute_indicators
from fem_assembly import DofMaps, ProblemSpec, SaddleSystem, Solution, assemble, build_dofmaps
from marking import MarkParams, mark
from mesh import Mesh, Topology, build_topology, check_conformity, refine, uniform_refine
from problems import BuiltinProblem, error_norms
from solver import LinearSolveReport, solve_saddle

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("iter", "n_elements", "n_dofs", "estimate", "r1_sum", "r2_sum", "jump_sum", "wall_s")
ERROR_COLUMNS = ("err_u_h1", "err_p_l2", "effectivity")


@dataclass(frozen=True)
class LogRow:
    iter: int
    n_elements: int
    n_dofs: int
    estimate: float
    r1_sum: float
    r2_sum: float
    jump_sum: float
    wall_s: float
    err_u_h1: float | None = None
    err_p_l2: float | None = None
    effectivity: float | None = None


@dataclass
class ConvergenceLog:
    rows: list[LogRow] = field(default_factory=list)

    def append(self, row: LogRow):
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    @property
    def has_errors(self) -> bool:
        return any(row.err_u_h1 is not None for row in self.rows)

    @property
    def columns(self) -> tuple[str, ...]:
        return LOG_COLUMNS + ERROR_COLUMNS if self.has_errors else LOG_COLUMNS

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(row, name) for row in self.rows], dtype=float)

    def as_dicts(self) -> list[dict]:
        return [{key: value for key, value in asdict(row).items() if key in self.columns} for row in self.rows]


@dataclass(frozen=True, eq=False)
class Level:
    """Everything computed on one mesh."""

    mesh: Mesh
    topology: Topology
    dofmaps: DofMaps
    system: SaddleSystem
    solution: Solution
    report: LinearSolveReport
    indicators: IndicatorField

    @property
    def n_dofs(self) -> int:
        return len(self.system.free_dofs) + len(self.system.g_vec)


@dataclass(frozen=True, eq=False)
class AMRResult:
    log: ConvergenceLog
    mesh: Mesh
    solution: Solution
    indicators: IndicatorField


def solve_and_estimate(mesh: Mesh, spec: ProblemSpec) -> Level:
    topology = build_topology(mesh, spec.bc_classes())
    dofmaps = build_dofmaps(mesh, topology, spec)
    system = assemble(mesh, topology, dofmaps, spec)
    solution, report = solve_saddle(system)
    indicators = compute_indicators(solution, spec, mesh, topology)
    return Level(mesh, topology, dofmaps, system, solution, report, indicators)


def _log_row(iteration: int, level: Level, wall: float, problem: BuiltinProblem) -> LogRow:
    indicators = level.indicators
    errors = {}
    if problem.exact is not None:
        err_u, err_p = error_norms(level.solution, problem.exact)
        total = float(np.hypot(err_u, err_p))
        errors = dict(
            err_u_h1=err_u,
            err_p_l2=err_p,
            effectivity=indicators.global_estimate / total if total > 0 else float("inf"),
        )
    return LogRow(
        iter=iteration,
        n_elements=level.mesh.n_elements,
        n_dofs=level.n_dofs,
        estimate=indicators.global_estimate,
        r1_sum=indicators.r1_sum,
        r2_sum=indicators.r2_sum,
        jump_sum=indicators.jump_sum,
        wall_s=wall,
        **errors,
    )


def _refinement_loop(
    problem: BuiltinProblem,
    next_mesh: Callable[[Level], Mesh],
    max_iters: int,
    dof_cap: int | None,
    tol: float | None,
    on_iteration: Callable | None,
    label: str,
) -> AMRResult:
    if max_iters < 0:
        raise ValueError(f"max_iters must be non-negative, got {max_iters}")
    log = ConvergenceLog()
    mesh = problem.mesh
    iteration = 0
    start = time.perf_counter()
    while True:
        try:
            level = solve_and_estimate(mesh, problem.spec)
            row = _log_row(iteration, level, time.perf_counter() - start, problem)
        except Exception as e:
            raise AMRAborted(f"{label}: iteration {iteration} failed: {e}", log=log) from e
        log.append(row)
        logger.info("%s: iter %d, %d dofs, estimate %.4e", label, iteration, row.n_dofs, row.estimate)
        if on_iteration is not None:
            on_iteration(iteration, level)

        if iteration >= max_iters:
            break
        if dof_cap is not None and row.n_dofs > dof_cap:
            logger.info("%s: stopping, %d dofs exceed the cap of %d", label, row.n_dofs, dof_cap)
            break
        if tol is not None and row.estimate <= tol:
            logger.info("%s: stopping, estimate %.4e below tolerance %.1e", label, row.estimate, tol)
            break

        start = time.perf_counter()
        try:
            mesh = next_mesh(level)
            if not check_conformity(mesh):
                raise MeshError("refined mesh is not conforming")
        except Exception as e:
            raise AMRAborted(f"{label}: refinement after iteration {iteration} failed: {e}", log=log) from e
        iteration += 1

    return AMRResult(log=log, mesh=level.mesh, solution=level.solution, indicators=level.indicators)


def run_amr(
    problem: BuiltinProblem,
    params: MarkParams,
    max_iters: int = 10,
    dof_cap: int | None = None,
    tol: float | None = None,
    on_iteration: Callable | None = None,
) -> AMRResult:
    """Solve, estimate, mark and refine until max_iters refinements, the DOF cap or the tolerance is reached.

    `on_iteration(iteration, level)` is called after every solve, e.g. to write
    the mesh and solution of each step.
    """

    def adapt(level: Level) -> Mesh:
        return refine(level.mesh, mark(level.indicators.eta, params))

    return _refinement_loop(problem, adapt, max_iters, dof_cap, tol, on_iteration, label="amr")


def run_uniform(problem: BuiltinProblem, n_refines: int = 5, on_iteration: Callable | None = None) -> AMRResult:
    return _refinement_loop(
        problem, lambda level: uniform_refine(level.mesh), n_refines, None, None, on_iteration, label="uniform"
    )
