"""Command-line entry point: ``polyfw solve | bench | plot``."""
import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional

import pandas as pd

from . import __version__, build_problem
from .experiment import (
    aggregate,
    expand_grid,
    load_curves,
    ordinal_claims,
    oversized_supports,
    persist,
    read_manifest,
    run_cell,
    summarize,
    summary_table,
)
from .exceptions import PolyfwError
from .matrixfile import read_matrix, read_vector
from .plotting import render_plot
from .solvers import (
    BUDGET_EXHAUSTED,
    KKT_CONVERGED,
    MAX_ITER,
    SOLVERS,
    SolverConfig,
    get_solver,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_STOPPED = 2

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

SOLVER_OPTIONS = ("delta", "eps0", "max_iter", "time_budget_s", "prune")


def _add_solver_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("solver options")
    group.add_argument("--delta", type=float, help="polyatomic selection slack")
    group.add_argument("--eps0", type=float, help="initial correction accuracy")
    group.add_argument("--max-iter", type=int, dest="max_iter")
    group.add_argument(
        "--budget-s", type=float, dest="time_budget_s", help="wall clock budget"
    )
    group.add_argument(
        "--no-prune",
        action="store_false",
        dest="prune",
        default=None,
        help="keep zeroed indices in the P-FW active set",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polyfw", description="Frank-Wolfe family LASSO solvers and benchmarks."
    )
    parser.add_argument("--version", action="version", version=__version__)
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="solve one LASSO problem")
    solve.add_argument("--config", type=Path, help="JSON file with default arguments")
    solve.add_argument("--matrix", type=Path, help="matrix A (binary or CSV)")
    solve.add_argument("--y", type=Path, help="observation vector (CSV or binary)")
    lam = solve.add_mutually_exclusive_group()
    lam.add_argument("--lambda", type=float, dest="lam")
    lam.add_argument("--lambda-factor", type=float, dest="lambda_factor")
    solve.add_argument("--solver", help="one of pfw, vfw, fcfw, fista (default pfw)")
    solve.add_argument("--out", type=Path, help="sparse solution CSV")
    _add_solver_flags(solve)
    solve.set_defaults(handler=cmd_solve)

    bench = sub.add_parser("bench", help="run a benchmark grid")
    bench.add_argument("config", type=Path, nargs="?", help="bench JSON file")
    bench.add_argument("--config", type=Path, dest="config_flag")
    bench.add_argument("--out", type=Path, help="results directory")
    bench.add_argument(
        "--solver", action="append", dest="solvers", help="restrict to this solver"
    )
    bench.add_argument("--trials", type=int, dest="n_trials")
    bench.add_argument("--seed", type=int, dest="base_seed")
    bench.add_argument(
        "--lambda-factor", type=float, dest="lambda_factor", help="lam / max|A^T y|"
    )
    bench.add_argument(
        "--parallel-trials",
        action="store_true",
        default=None,
        help="run trials concurrently (timings are not trustworthy)",
    )
    _add_solver_flags(bench)
    bench.set_defaults(handler=cmd_bench)

    plot = sub.add_parser("plot", help="re-render a persisted cell")
    plot.add_argument("results", type=Path, help="cell directory written by bench")
    plot.add_argument("--out", type=Path, help="SVG path, default <results>/figure.svg")
    plot.set_defaults(handler=cmd_plot)
    return parser


def load_config(path: Optional[Path]) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fp:
            config = json.load(fp)
    except FileNotFoundError as e:
        raise PolyfwError(f"{path}: no such file") from e
    except OSError as e:
        raise PolyfwError(f"{path}: cannot read ({e.strerror})") from e
    except json.JSONDecodeError as e:
        raise PolyfwError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(config, dict):
        raise PolyfwError(f"{path}: expected a JSON object")
    return config


def _flag_overrides(args, names) -> dict:
    return {
        name: getattr(args, name)
        for name in names
        if getattr(args, name, None) is not None
    }


def _solver_config(file_config: dict, args) -> SolverConfig:
    overrides = _flag_overrides(args, SOLVER_OPTIONS)
    return SolverConfig.from_dict({**file_config, **overrides})


def cmd_solve(args) -> int:
    config = load_config(args.config)
    settings = {
        "matrix": None,
        "y": None,
        "lambda": None,
        "lambda_factor": None,
        "solver": "pfw",
        "out": "solution.csv",
    }
    for key in settings:
        if key in config:
            settings[key] = config.pop(key)
    flags = {
        "matrix": args.matrix,
        "y": args.y,
        "lambda": args.lam,
        "lambda_factor": args.lambda_factor,
        "solver": args.solver,
        "out": args.out,
    }
    if args.lam is not None:
        settings["lambda_factor"] = None
    if args.lambda_factor is not None:
        settings["lambda"] = None
    settings.update({k: v for k, v in flags.items() if v is not None})

    solve_fn = get_solver(settings["solver"])
    solver_config = _solver_config(config, args)
    for key in ("matrix", "y"):
        if settings[key] is None:
            raise PolyfwError(f"solve needs --{key}")

    A = read_matrix(str(settings["matrix"]))
    y = read_vector(str(settings["y"]))
    problem = build_problem(
        A, y, lam=settings["lambda"], lambda_factor=settings["lambda_factor"]
    )
    start = time.perf_counter()
    x, trajectory = solve_fn(problem, solver_config)
    elapsed = time.perf_counter() - start
    final = trajectory.final

    out = Path(settings["out"])
    solution = pd.DataFrame({"index": x.support, "weight": x.weights})
    manifest = {
        "polyfw_version": __version__,
        "settings": {k: str(v) if isinstance(v, Path) else v for k, v in settings.items()},
        "solver_config": solver_config.asdict(),
        "lambda": problem.lam,
        "lambda_max": problem.lambda_max,
        "terminal_reason": trajectory.terminal_reason,
        "objective": final.objective,
        "certificate_linf": final.certificate_linf,
        "support_size": x.nnz,
        "iterations": trajectory.iterations,
        "solver_wall_time_s": final.wall_time_s,
        "elapsed_s": elapsed,
    }
    try:
        if out.parent != Path(""):
            out.parent.mkdir(parents=True, exist_ok=True)
        solution.to_csv(out, index=False)
        with open(out.with_suffix(".json"), "w") as fp:
            json.dump(manifest, fp, indent=2)
    except OSError as e:
        raise PolyfwError(f"{out}: cannot write solution ({e.strerror})") from e

    print(f"solver            {settings['solver']}")
    print(f"terminal reason   {trajectory.terminal_reason}")
    print(f"objective         {final.objective:.10g}")
    print(f"certificate linf  {final.certificate_linf:.6g}")
    print(f"support size      {x.nnz}")
    print(f"iterations        {trajectory.iterations}")
    print(f"wall time [s]     {final.wall_time_s:.4g}")
    if trajectory.terminal_reason == KKT_CONVERGED:
        return EXIT_OK
    if trajectory.terminal_reason in (BUDGET_EXHAUSTED, MAX_ITER):
        return EXIT_STOPPED
    return EXIT_ERROR


def cmd_bench(args) -> int:
    path = args.config if args.config is not None else args.config_flag
    if path is None:
        raise PolyfwError("bench needs a JSON description of the grid")
    config = load_config(path)
    out_root = Path(args.out or config.pop("out", "results"))
    config.update(
        _flag_overrides(args, ("n_trials", "base_seed", "lambda_factor", "parallel_trials"))
    )
    if args.solvers:
        for name in args.solvers:
            get_solver(name)
        config["solvers"] = args.solvers
    if args.time_budget_s is not None:
        config["budget_s"] = args.time_budget_s
    solver_overrides = _flag_overrides(args, ("delta", "eps0", "max_iter", "prune"))
    if solver_overrides:
        configs = dict(config.get("solver_configs", {}))
        for name in config.get("solvers", SOLVERS):
            configs[name] = {**configs.get(name, {}), **solver_overrides}
        config["solver_configs"] = configs

    specs = expand_grid(config)
    failed_cells = []
    summaries = {}
    for spec in specs:
        cell_dir = out_root / spec.cell_id
        logger.info("running %s (L=%d, N=%d)", spec.cell_id, spec.n_measurements, spec.n_features)
        start = time.perf_counter()
        records = run_cell(spec)
        summary = summarize(records)
        oversized = oversized_supports(records, spec.n_measurements)
        for r in oversized:
            logger.warning(
                "%s: %s seed %d converged with more than L=%d nonzeros",
                spec.cell_id,
                r.solver,
                r.seed,
                spec.n_measurements,
            )
        extra = {
            "resolved_config": config,
            "oversized_supports": [[r.solver, r.seed] for r in oversized],
        }
        try:
            curves = aggregate(records, budget_s=spec.budget_s)
        except PolyfwError as e:
            logger.error("%s: %s", spec.cell_id, e)
            extra["elapsed_s"] = time.perf_counter() - start
            persist(records, {}, cell_dir, spec, extra=extra)
            failed_cells.append(spec.cell_id)
            continue
        summaries[spec.cell_id] = summary
        cell_dir.mkdir(parents=True, exist_ok=True)
        extra["nonfinite_dropped"] = render_plot(
            curves, cell_dir / "figure.svg", title=spec.title
        )
        extra["elapsed_s"] = time.perf_counter() - start
        persist(records, curves, cell_dir, spec, extra=extra)
        print(f"{spec.cell_id} ({extra['elapsed_s']:.1f}s)")
        print(summary_table(summary).to_string())
        print()
    if summaries:
        claims = ordinal_claims(summaries)
        try:
            with open(out_root / "ordinal.json", "w") as fp:
                json.dump(claims, fp, indent=2)
        except OSError as e:
            raise PolyfwError(f"{out_root}: cannot write ordinal.json ({e.strerror})") from e
        logger.info(
            "pfw fastest FW variant in every cell: %s; ahead of fista in %d/%d cells",
            claims["all_cells_beat_fw"],
            claims["cells_beat_fast"],
            len(summaries),
        )
    if failed_cells:
        logger.error("cells without any completed run: %s", ", ".join(failed_cells))
        return EXIT_ERROR
    return EXIT_OK


def cmd_plot(args) -> int:
    curves = load_curves(args.results)
    manifest = read_manifest(args.results)
    title = None
    if manifest and manifest.get("spec"):
        spec = manifest["spec"]
        title = f"K={spec['sparsity']}, α={spec['alpha']:g}"
    out = args.out or Path(args.results) / "figure.svg"
    dropped = render_plot(curves, out, title=title)
    print(f"wrote {out} ({dropped} point(s) dropped)")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(level=level, format=LOG_FORMAT)
    try:
        return args.handler(args)
    except (PolyfwError, OSError) as e:
        print(f"polyfw: error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
