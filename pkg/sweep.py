"""Run the adaptive loop over the full (strategy, epsilon, theta) grid plus a uniform baseline."""

import csv
import logging
import os
from itertools import product

import numpy as np

from amr_driver import run_amr, run_uniform
from marking import STRATEGIES, MarkParams
from mesh_io import read_log_csv, write_log_csv
from problems import BuiltinProblem
from utils import slugify_name

logger = logging.getLogger(__name__)

EPSILONS = (0.0, 0.001, 0.01)
THETAS = (0.25, 0.5, 0.75)
SUMMARY_COLUMNS = ("point", "strategy", "epsilon", "theta", "iterations", "final_dofs", "final_estimate")


def sweep_point_name(strategy: str, epsilon: float, theta: float) -> str:
    return slugify_name(f"{strategy}_eps{epsilon:g}_theta{theta:g}")


def _summary(point: str, strategy: str, epsilon, theta, rows: list[dict]) -> dict:
    last = rows[-1]
    return {
        "point": point,
        "strategy": strategy,
        "epsilon": epsilon,
        "theta": theta,
        "iterations": len(rows),
        "final_dofs": int(last["n_dofs"]),
        "final_estimate": float(last["estimate"]),
    }


def run_sweep(
    problem: BuiltinProblem,
    out_dir: str,
    max_iters: int = 10,
    dof_cap: int | None = None,
    uniform_levels: int = 4,
    strategies=STRATEGIES,
    epsilons=EPSILONS,
    thetas=THETAS,
) -> list[dict]:
    """One directory with a log.csv per grid point; points that already have one are skipped."""
    os.makedirs(out_dir, exist_ok=True)
    points = [(strategy, epsilon, theta) for strategy, epsilon, theta in product(strategies, epsilons, thetas)]
    summaries = []

    for strategy, epsilon, theta in [("uniform", None, None)] + points:
        name = "uniform" if strategy == "uniform" else sweep_point_name(strategy, epsilon, theta)
        log_path = os.path.join(out_dir, name, "log.csv")

        if os.path.exists(log_path):
            print(f"Skipping '{name}' as log already exists.")
            summaries.append(_summary(name, strategy, epsilon, theta, read_log_csv(log_path)))
            continue

        try:
            if strategy == "uniform":
                result = run_uniform(problem, uniform_levels)
            else:
                params = MarkParams(strategy=strategy, theta=theta, epsilon=epsilon)
                result = run_amr(problem, params, max_iters=max_iters, dof_cap=dof_cap)
        except Exception as e:
            print(f"Failed to run '{name}': {e}\n")
            continue
        write_log_csv(result.log, log_path)
        summaries.append(_summary(name, strategy, epsilon, theta, result.log.as_dicts()))
        print(f"{name}: {len(result.log)} iterations, final estimate {result.log.rows[-1].estimate:.4e}")

    with open(os.path.join(out_dir, "sweep_summary.csv"), "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(SUMMARY_COLUMNS))
        writer.writeheader()
        writer.writerows(summaries)
    return summaries


def band_ratio(curves, n_samples: int = 50) -> float:
    """Largest max/min ratio between estimate-vs-DOF curves, interpolated in log-log
    space over the DOF range they all cover."""
    curves = [(np.asarray(dofs, dtype=float), np.asarray(estimates, dtype=float)) for dofs, estimates in curves]
    if len(curves) < 2:
        return 1.0
    low = max(dofs.min() for dofs, _ in curves)
    high = min(dofs.max() for dofs, _ in curves)
    if low > high:
        raise ValueError("curves do not share a common DOF range")
    grid = np.log(np.geomspace(low, high, n_samples))
    samples = []
    for dofs, estimates in curves:
        order = np.argsort(dofs)
        samples.append(np.interp(grid, np.log(dofs[order]), np.log(estimates[order])))
    samples = np.array(samples)
    return float(np.exp((samples.max(axis=0) - samples.min(axis=0)).max()))
