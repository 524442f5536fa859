import logging
import time
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import splu

from errors import NumericalFailure, SolverError
from fem_assembly import SaddleSystem, Solution

logger = logging.getLogger(__name__)

RESIDUAL_TOLERANCE = 1e-8


@dataclass(frozen=True)
class LinearSolveReport:
    residual_norm_abs: float
    residual_norm_rel: float
    n_unknowns: int
    factor_time: float
    solve_time: float


def solve_saddle(system: SaddleSystem, rtol: float = RESIDUAL_TOLERANCE) -> tuple[Solution, LinearSolveReport]:
    """Sparse LU (COLAMD ordering, partial pivoting) on the constrained saddle matrix."""
    matrix = system.matrix()
    rhs = system.rhs()

    start = time.perf_counter()
    try:
        lu = splu(matrix, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SolverError(f"saddle point matrix of size {matrix.shape[0]} is singular: {exc}") from exc
    factor_time = time.perf_counter() - start

    start = time.perf_counter()
    x = lu.solve(rhs)
    solve_time = time.perf_counter() - start

    residual = float(np.linalg.norm(matrix @ x - rhs))
    scale = float(np.linalg.norm(rhs))
    report = LinearSolveReport(
        residual_norm_abs=residual,
        residual_norm_rel=residual / scale if scale > 0 else residual,
        n_unknowns=matrix.shape[0],
        factor_time=factor_time,
        solve_time=solve_time,
    )
    if not np.isfinite(x).all() or not report.residual_norm_rel <= rtol:
        raise NumericalFailure(
            f"relative residual {report.residual_norm_rel:.3e} exceeds tolerance {rtol:.1e}", report=report
        )
    if report.residual_norm_rel > 1e-2 * rtol:
        logger.warning(
            "saddle solve residual %.2e is close to the tolerance %.1e", report.residual_norm_rel, rtol
        )
    logger.debug(
        "splu: %d unknowns, factor %.3fs, solve %.3fs, rel. residual %.2e",
        report.n_unknowns,
        factor_time,
        solve_time,
        report.residual_norm_rel,
    )

    dofmaps = system.dofmaps
    n_free = len(system.free_dofs)
    velocity = np.zeros(system.A.shape[0])
    velocity[system.free_dofs] = x[:n_free]
    velocity[dofmaps.dirichlet_dofs] = dofmaps.dirichlet_values
    pressure = x[n_free : n_free + len(system.g_vec)].copy()
    return Solution(mesh=system.mesh, dofmaps=dofmaps, velocity=velocity, pressure=pressure), report
