import argparse
import logging
import os
import sys

from dotenv import load_dotenv

from amr_driver import AMRResult, run_amr, run_uniform
from errors import AMRAborted, ConfigError, MeshFormatError
from marking import MarkParams
from mesh_io import write_log_csv, write_solution, write_vtk
from problem_config import load_problem_config
from problems import PROBLEMS, get_problem
from sweep import run_sweep
from utils import run_directory

# Load environment variables from .env file
load_dotenv()

STRATEGY_ALIASES = {"max": "maximum", "maximum": "maximum", "equilibration": "equilibration"}


class UsageError(Exception):
    pass


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError(message)


def build_parser() -> CliParser:
    parser = CliParser(description="Adaptive Taylor-Hood solver for the Stokes-Brinkman equations")
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    common = CliParser(add_help=False)
    source = common.add_mutually_exclusive_group()
    source.add_argument("--problem", help="Built-in problem name (see list-problems)")
    source.add_argument("--config", help="Path to a JSON problem config")
    common.add_argument("--h", type=float, default=None, help="Initial mesh size")
    common.add_argument("--out", help="Output directory (default: $OUT_DIR/<problem>/<command>)")
    common.add_argument("--seed", type=int, default=None, help="Reserved")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")

    marking = CliParser(add_help=False)
    marking.add_argument("--strategy", choices=sorted(STRATEGY_ALIASES), default="equilibration")
    marking.add_argument("--theta", type=float, default=0.25)
    marking.add_argument("--epsilon", type=float, default=0.0)
    marking.add_argument("--complement-stats", choices=("subset", "global"), default="subset")

    subparsers.add_parser("solve", parents=[common], help="Solve once and estimate the error")

    amr_parser = subparsers.add_parser("amr", parents=[common, marking], help="Adaptive refinement loop")
    amr_parser.add_argument("--iters", type=int, default=10, help="Number of refinements")
    amr_parser.add_argument("--dof-cap", type=int, default=None)
    amr_parser.add_argument("--tol", type=float, default=None, help="Stop once the estimate is below this")
    amr_parser.add_argument("--vtk-every", type=int, default=0, help="Write iter_k.vtk every N iterations")

    uniform_parser = subparsers.add_parser("uniform", parents=[common], help="Uniform refinement baseline")
    uniform_parser.add_argument("--iters", type=int, default=5, help="Number of uniform refinements")
    uniform_parser.add_argument("--vtk-every", type=int, default=0)

    sweep_parser = subparsers.add_parser("sweep", parents=[common], help="Full (strategy, epsilon, theta) grid")
    sweep_parser.add_argument("--iters", type=int, default=10)
    sweep_parser.add_argument("--dof-cap", type=int, default=None)
    sweep_parser.add_argument("--uniform-levels", type=int, default=4)

    subparsers.add_parser("list-problems", help="List the built-in problems")
    return parser


def load_problem(args):
    if args.config:
        return load_problem_config(args.config, args.h)
    if args.problem:
        return get_problem(args.problem, args.h)
    raise ConfigError("one of --problem or --config is required")


def vtk_writer(out_dir: str, spec, every: int):
    def write(iteration, level):
        if every > 0 and iteration % every == 0:
            path = os.path.join(out_dir, f"iter_{iteration}.vtk")
            write_vtk(level.mesh, path, level.solution, level.indicators, spec)

    return write


def save_result(result: AMRResult, out_dir: str, spec, command: str):
    write_log_csv(result.log, os.path.join(out_dir, "log.csv"))
    write_solution(result.solution, os.path.join(out_dir, "solution.json"))
    last = result.log.rows[-1]
    write_vtk(result.mesh, os.path.join(out_dir, f"iter_{last.iter}.vtk"), result.solution, result.indicators, spec)
    lines = [
        f"command: {command}",
        f"iterations: {len(result.log)}",
        f"elements: {last.n_elements}",
        f"dofs: {last.n_dofs}",
        f"estimate: {last.estimate:.6e}",
    ]
    if last.err_u_h1 is not None:
        lines += [f"err_u_h1: {last.err_u_h1:.6e}", f"err_p_l2: {last.err_p_l2:.6e}", f"effectivity: {last.effectivity:.4f}"]
    with open(os.path.join(out_dir, "summary.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    print(f"Results saved to: {out_dir}")


def run_command(args, problem, out_dir: str):
    spec = problem.spec
    if args.command == "solve":
        print(f"Solving '{problem.name}' ({problem.mesh.n_elements} elements)")
        result = run_amr(problem, MarkParams(), max_iters=0)
        save_result(result, out_dir, spec, args.command)
    elif args.command == "amr":
        params = MarkParams(
            strategy=STRATEGY_ALIASES[args.strategy],
            theta=args.theta,
            epsilon=args.epsilon,
            complement_stats=args.complement_stats,
        )
        print(f"Adaptive run on '{problem.name}': {params.strategy}, epsilon={params.epsilon:g}, theta={params.theta:g}")
        result = run_amr(
            problem,
            params,
            max_iters=args.iters,
            dof_cap=args.dof_cap,
            tol=args.tol,
            on_iteration=vtk_writer(out_dir, spec, args.vtk_every),
        )
        save_result(result, out_dir, spec, args.command)
    elif args.command == "uniform":
        print(f"Uniform refinement of '{problem.name}', {args.iters} levels")
        result = run_uniform(problem, args.iters, on_iteration=vtk_writer(out_dir, spec, args.vtk_every))
        save_result(result, out_dir, spec, args.command)
    elif args.command == "sweep":
        summaries = run_sweep(
            problem, out_dir, max_iters=args.iters, dof_cap=args.dof_cap, uniform_levels=args.uniform_levels
        )
        print(f"Sweep finished: {len(summaries)} runs, summary in {os.path.join(out_dir, 'sweep_summary.csv')}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return 1

    if args.command is None:
        parser.print_help()
        return 1

    if args.command == "list-problems":
        for name, builder in PROBLEMS.items():
            problem = builder()
            print(f"{name:<14} {problem.mesh.dim}D  {problem.description}")
        return 0

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        problem = load_problem(args)
    except (FileNotFoundError, ConfigError, MeshFormatError) as e:
        print(f"Error: {e}")
        return 1

    out_dir = args.out or run_directory(problem.name, args.command)
    os.makedirs(out_dir, exist_ok=True)
    try:
        run_command(args, problem, out_dir)
    except AMRAborted as e:
        print(f"Error: {e}")
        if e.log is not None and len(e.log):
            write_log_csv(e.log, os.path.join(out_dir, "log.csv"))
            print(f"Partial log saved to: {os.path.join(out_dir, 'log.csv')}")
        return 2
    except ConfigError as e:
        print(f"Error: {e}")
        return 1
    except Exception as e:
        print(f"Error: {e}")
        return 2
    return 0


if __name__ == "__main__":
    exit(main())
