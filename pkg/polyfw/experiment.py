"""
Compressed-sensing benchmark harness.

An :class:`ExperimentSpec` describes one cell of the benchmark grid. Trials
draw a Gaussian sensing matrix, a sparse ground truth and white noise from a
seed, every solver of the cell races on the same instance under the wall
clock budget, and the resulting trajectories are aggregated into median and
interquartile curves on a logarithmic time grid.
"""
import itertools
import json
import logging
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .core import DesignMatrix, LassoProblem, SparseIterate
from .exceptions import PolyfwError, SpecError, UnknownSolverError
from .solvers import (
    FAILED,
    KKT_CONVERGED,
    SOLVERS,
    Sample,
    SolverConfig,
    Trajectory,
    get_solver,
)

__all__ = [
    "ExperimentSpec",
    "GeneratedInstance",
    "RunRecord",
    "AggregateCurve",
    "generate_instance",
    "empirical_psnr",
    "run_cell",
    "aggregate",
    "summarize",
    "time_to_target",
    "ordinal_claims",
    "oversized_supports",
    "persist",
    "load_records",
    "load_curves",
    "expand_grid",
]

logger = logging.getLogger(__name__)

RNG_DESCRIPTION = (
    "numpy.random.Generator(PCG64); SeedSequence(seed).spawn(3) feeds the "
    "matrix, the ground truth and the noise streams"
)
PSNR_DEFINITION = "psnr_db = 20*log10(max|A x0| / noise_sigma)"
LAMBDA_RULE = "lambda = lambda_factor * max|A^T y|"
MATRIX_MODEL = "A_ij ~ N(0, 1/L) i.i.d."
TRUTH_MODEL = "uniform random support of size K, N(0, 1) values"

RAW_COLUMNS = [
    "cell_id",
    "solver",
    "seed",
    "k",
    "wall_time_s",
    "objective",
    "support_size",
    "certificate_linf",
]
AGG_COLUMNS = ["cell_id", "solver", "time_s", "median", "p25", "p75"]

THREADS_ENV = "POLYFW_THREADS"


@dataclass(frozen=True)
class ExperimentSpec:
    """One cell of the benchmark grid and the protocol to run it."""

    sparsity: int
    alpha: float
    n_features: int = 16384
    psnr_db: float = 20.0
    lambda_factor: float = 0.1
    n_trials: int = 15
    budget_s: float = 4.0
    solvers: Tuple[str, ...] = ("pfw", "vfw", "fcfw", "fista")
    solver_configs: Mapping[str, SolverConfig] = field(default_factory=dict)
    base_seed: int = 0
    parallel_trials: bool = False

    def __post_init__(self):
        object.__setattr__(self, "solvers", tuple(self.solvers))
        configs = {}
        for name, config in dict(self.solver_configs).items():
            if not isinstance(config, SolverConfig):
                config = SolverConfig.from_dict(config)
            configs[name] = config
        object.__setattr__(self, "solver_configs", configs)

        if self.sparsity < 1:
            raise SpecError(f"sparsity must be at least 1, got {self.sparsity}")
        if self.sparsity > self.n_features:
            raise SpecError(
                f"sparsity {self.sparsity} exceeds the number of features "
                f"{self.n_features}"
            )
        if not self.alpha > 1:
            raise SpecError(f"oversampling factor must exceed 1, got {self.alpha}")
        if self.n_measurements >= self.n_features:
            raise SpecError(
                f"L = round(alpha * K) = {self.n_measurements} must be smaller than "
                f"N = {self.n_features}"
            )
        if self.n_trials < 1:
            raise SpecError(f"n_trials must be at least 1, got {self.n_trials}")
        if not self.budget_s > 0:
            raise SpecError(f"budget_s must be positive, got {self.budget_s}")
        if not 0 < self.lambda_factor < 1:
            raise SpecError(
                f"lambda_factor must lie in (0, 1), got {self.lambda_factor}"
            )
        if not self.solvers:
            raise SpecError("at least one solver is required")
        for name in itertools.chain(self.solvers, configs):
            if name not in SOLVERS:
                raise UnknownSolverError(name, SOLVERS)

    @property
    def n_measurements(self) -> int:
        return int(round(self.alpha * self.sparsity))

    @property
    def cell_id(self) -> str:
        return f"cell_K{self.sparsity}_a{self.alpha:g}"

    @property
    def title(self) -> str:
        return f"K={self.sparsity}, α={self.alpha:g}"

    @property
    def seeds(self) -> List[int]:
        return [self.base_seed + trial for trial in range(self.n_trials)]

    def config_for(self, solver: str) -> SolverConfig:
        """Solver configuration with the cell budget applied."""
        config = self.solver_configs.get(solver, SolverConfig())
        return config.updated(time_budget_s=self.budget_s)

    def to_dict(self) -> dict:
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data["solvers"] = list(self.solvers)
        # budget applied, every default filled in
        data["solver_configs"] = {
            name: self.config_for(name).asdict() for name in self.solvers
        }
        data["n_measurements"] = self.n_measurements
        return data

    @classmethod
    def from_dict(cls, mapping: Mapping) -> "ExperimentSpec":
        mapping = dict(mapping)
        mapping.pop("n_measurements", None)
        known = {f.name for f in fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise SpecError(f"unknown experiment option(s): {', '.join(sorted(unknown))}")
        return cls(**mapping)


def expand_grid(mapping: Mapping) -> List[ExperimentSpec]:
    """
    Expand a bench description into one spec per ``(sparsity, alpha)`` cell.

    ``sparsity`` and ``alpha`` may be scalars or lists; every other key is
    shared by all cells.
    """
    mapping = dict(mapping)
    if "sparsity" not in mapping or "alpha" not in mapping:
        raise SpecError("a bench description needs 'sparsity' and 'alpha'")
    sparsities = mapping.pop("sparsity")
    alphas = mapping.pop("alpha")
    if not isinstance(sparsities, (list, tuple)):
        sparsities = [sparsities]
    if not isinstance(alphas, (list, tuple)):
        alphas = [alphas]
    return [
        ExperimentSpec.from_dict({**mapping, "sparsity": k, "alpha": a})
        for k, a in itertools.product(sparsities, alphas)
    ]


@dataclass(eq=False)
class GeneratedInstance:
    problem: LassoProblem
    x0: SparseIterate
    noise_sigma: float
    seed: int
    noise: np.ndarray


def generate_instance(spec: ExperimentSpec, seed: int) -> GeneratedInstance:
    """
    Draw ``y = A x0 + w`` for one trial; fully determined by ``seed``.
    """
    n_rows, n_cols, k = spec.n_measurements, spec.n_features, spec.sparsity
    matrix_seq, truth_seq, noise_seq = np.random.SeedSequence(seed).spawn(3)

    entries = np.random.default_rng(matrix_seq).standard_normal((n_rows, n_cols))
    entries /= np.sqrt(n_rows)
    matrix = DesignMatrix(entries, copy=False)

    truth_rng = np.random.default_rng(truth_seq)
    support = np.sort(truth_rng.choice(n_cols, size=k, replace=False))
    x0 = SparseIterate(support, truth_rng.standard_normal(k), n_cols)

    clean = matrix.apply_sparse(x0)
    noise_sigma = float(np.max(np.abs(clean))) * 10.0 ** (-spec.psnr_db / 20.0)
    noise = np.random.default_rng(noise_seq).normal(0.0, noise_sigma, n_rows)
    y = clean + noise
    lam = spec.lambda_factor * float(np.max(np.abs(matrix.adjoint(y))))
    return GeneratedInstance(
        problem=LassoProblem(matrix, y, lam),
        x0=x0,
        noise_sigma=noise_sigma,
        seed=seed,
        noise=noise,
    )


def empirical_psnr(instance: GeneratedInstance) -> float:
    clean = instance.problem.matrix.apply_sparse(instance.x0)
    return 20.0 * np.log10(np.max(np.abs(clean)) / np.std(instance.noise))


@dataclass
class RunRecord:
    cell_id: str
    sparsity: int
    alpha: float
    solver: str
    seed: int
    trajectory: Trajectory
    error: Optional[str] = None
    solution: Optional[SparseIterate] = field(default=None, compare=False, repr=False)

    @property
    def terminal_reason(self) -> Optional[str]:
        return self.trajectory.terminal_reason

    @property
    def completed(self) -> bool:
        return self.error is None and len(self.trajectory) > 0

    @property
    def final_objective(self) -> float:
        return self.trajectory.final.objective if self.completed else float("nan")

    @property
    def final_support_size(self) -> int:
        return self.trajectory.final.support_size if self.completed else 0


def _run_one(spec: ExperimentSpec, instance: GeneratedInstance, solver: str) -> RunRecord:
    record = RunRecord(
        cell_id=spec.cell_id,
        sparsity=spec.sparsity,
        alpha=spec.alpha,
        solver=solver,
        seed=instance.seed,
        trajectory=Trajectory(),
    )
    try:
        x, trajectory = get_solver(solver)(instance.problem, spec.config_for(solver))
    except Exception as e:
        logger.warning(
            "%s: solver %s failed on seed %d: %s", spec.cell_id, solver, instance.seed, e
        )
        record.trajectory = Trajectory(terminal_reason=FAILED)
        record.error = f"{type(e).__name__}: {e}"
        return record
    record.trajectory = trajectory
    record.solution = x
    return record


def _run_trial(spec: ExperimentSpec, seed: int) -> List[RunRecord]:
    instance = generate_instance(spec, seed)
    return [_run_one(spec, instance, solver) for solver in spec.solvers]


def thread_limit() -> int:
    value = os.environ.get(THREADS_ENV)
    if value:
        try:
            return max(int(value), 1)
        except ValueError:
            logger.warning("ignoring %s=%r, expected an integer", THREADS_ENV, value)
    return os.cpu_count() or 1


def run_cell(spec: ExperimentSpec, parallel: Optional[bool] = None) -> List[RunRecord]:
    """
    Run every solver on every trial of the cell.

    Solvers of one trial share the same instance and run one after another.
    Trials run sequentially unless ``parallel`` (default
    ``spec.parallel_trials``) is set, in which case timings are not
    trustworthy. A failing run is recorded and does not abort the cell.
    """
    parallel = spec.parallel_trials if parallel is None else parallel
    start = time.perf_counter()
    if parallel:
        with ThreadPoolExecutor(max_workers=thread_limit()) as pool:
            trials = list(pool.map(lambda seed: _run_trial(spec, seed), spec.seeds))
    else:
        trials = [_run_trial(spec, seed) for seed in spec.seeds]
    records = [record for trial in trials for record in trial]
    failed = sum(1 for r in records if r.error is not None)
    logger.info(
        "%s: %d runs (%d failed) in %.1fs",
        spec.cell_id,
        len(records),
        failed,
        time.perf_counter() - start,
    )
    return records


@dataclass(eq=False)
class AggregateCurve:
    solver: str
    time: np.ndarray
    median: np.ndarray
    p25: np.ndarray
    p75: np.ndarray
    cell_id: str = ""


def step_values(trajectory: Trajectory, grid: np.ndarray) -> np.ndarray:
    """Last recorded objective at or before each grid time; NaN before the first sample."""
    times = np.array([s.wall_time_s for s in trajectory.samples])
    values = np.array([s.objective for s in trajectory.samples])
    pos = np.searchsorted(times, grid, side="right") - 1
    out = np.full(grid.shape, np.nan)
    defined = pos >= 0
    out[defined] = values[pos[defined]]
    return out


def time_grid(records: Sequence[RunRecord], grid_points: int, budget_s=None) -> np.ndarray:
    times = np.array(
        [s.wall_time_s for r in records for s in r.trajectory.samples], dtype=float
    )
    positive = times[times > 0]
    t_min = float(positive.min()) if positive.size else 1e-6
    t_max = float(budget_s) if budget_s else float(times.max(initial=0.0))
    if t_max <= t_min:
        t_max = 10.0 * t_min
    return np.geomspace(t_min, t_max, grid_points)


def aggregate(
    records: Sequence[RunRecord], grid_points: int = 200, budget_s: Optional[float] = None
) -> Dict[str, AggregateCurve]:
    """
    Median and interquartile objective curves per solver on a log-spaced grid.

    Runs that failed are left out; grid points before a run's first sample
    do not enter the percentiles.
    """
    completed = [r for r in records if r.completed]
    if not completed:
        raise PolyfwError("cannot aggregate an empty record set")
    grid = time_grid(completed, grid_points, budget_s)
    curves = {}
    for solver in dict.fromkeys(r.solver for r in completed):
        stacked = np.vstack(
            [step_values(r.trajectory, grid) for r in completed if r.solver == solver]
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            p25, median, p75 = np.nanpercentile(stacked, [25, 50, 75], axis=0)
        curves[solver] = AggregateCurve(
            solver=solver,
            time=grid.copy(),
            median=median,
            p25=p25,
            p75=p75,
            cell_id=completed[0].cell_id,
        )
    return curves


def first_time_below(trajectory: Trajectory, target: float) -> float:
    for sample in trajectory.samples:
        if sample.objective <= target:
            return sample.wall_time_s
    return float("inf")


def target_objective(records: Sequence[RunRecord], rel_tol: float = 1e-3) -> float:
    best = min(r.final_objective for r in records if r.completed)
    return best + rel_tol * abs(best)


def time_to_target(
    records: Sequence[RunRecord], rel_tol: float = 1e-3
) -> Dict[str, List[float]]:
    """
    Wall time at which each completed run first came within ``rel_tol`` of
    the best final objective of the cell; ``inf`` if it never did.
    """
    completed = [r for r in records if r.completed]
    if not completed:
        return {}
    target = target_objective(completed, rel_tol)
    times: Dict[str, List[float]] = {}
    for r in completed:
        times.setdefault(r.solver, []).append(first_time_below(r.trajectory, target))
    return times


def summarize(
    records: Sequence[RunRecord], rel_tol: float = 1e-3, reference: str = "pfw"
) -> dict:
    """
    Median time for each solver to come within ``rel_tol`` of the best
    objective any run of the cell reached, and the speedup of ``reference``.
    """
    completed = [r for r in records if r.completed]
    if not completed:
        return {"rel_tol": rel_tol, "best_objective": None, "solvers": {}}
    target = target_objective(completed, rel_tol)
    best = min(r.final_objective for r in completed)
    to_target = time_to_target(completed, rel_tol)
    solvers = {}
    for solver in dict.fromkeys(r.solver for r in records):
        runs = [r for r in completed if r.solver == solver]
        times = to_target.get(solver, [])
        solvers[solver] = {
            "runs": sum(1 for r in records if r.solver == solver),
            "failed": sum(1 for r in records if r.solver == solver and not r.completed),
            "kkt_converged": sum(1 for r in runs if r.terminal_reason == KKT_CONVERGED),
            "median_time_to_target_s": float(np.median(times)) if times else float("inf"),
        }
    if reference in solvers:
        ref_time = solvers[reference]["median_time_to_target_s"]
        for solver, entry in solvers.items():
            other = entry["median_time_to_target_s"]
            if np.isinf(ref_time) or ref_time == 0:
                speedup = float("nan") if np.isinf(ref_time) else float("inf")
            else:
                speedup = other / ref_time
            entry[f"{reference}_speedup"] = speedup
    return {
        "rel_tol": rel_tol,
        "best_objective": best,
        "target_objective": target,
        "solvers": solvers,
    }


def summary_table(summary: dict) -> pd.DataFrame:
    frame = pd.DataFrame.from_dict(summary.get("solvers", {}), orient="index")
    frame.index.name = "solver"
    return frame


def ordinal_claims(
    summaries: Mapping[str, dict],
    reference: str = "pfw",
    fw_rivals: Sequence[str] = ("vfw", "fcfw"),
    fast_rival: str = "fista",
    majority: float = 2.0 / 3.0,
) -> dict:
    """
    Check the time-to-target ordering across the cells of a grid.

    ``reference`` must be at least as fast as every present ``fw_rivals``
    solver in every cell, and at least as fast as ``fast_rival`` in
    ``ceil(majority * cells)`` of the cells where both ran.

    :param summaries: :func:`summarize` output keyed by cell id
    """
    cells = {}
    for cell_id, summary in summaries.items():
        solvers = summary.get("solvers", {})
        if reference not in solvers:
            cells[cell_id] = {"beats_fw": False, "beats_fast": None}
            continue
        ref_time = solvers[reference]["median_time_to_target_s"]
        beats_fw = all(
            ref_time <= solvers[name]["median_time_to_target_s"]
            for name in fw_rivals
            if name in solvers
        )
        beats_fast = None
        if fast_rival in solvers:
            beats_fast = bool(ref_time <= solvers[fast_rival]["median_time_to_target_s"])
        cells[cell_id] = {"beats_fw": bool(beats_fw), "beats_fast": beats_fast}
    compared = [c["beats_fast"] for c in cells.values() if c["beats_fast"] is not None]
    required = int(np.ceil(majority * len(compared) - 1e-9))
    beats_fast_count = sum(compared)
    all_beat_fw = all(c["beats_fw"] for c in cells.values())
    return {
        "reference": reference,
        "cells": cells,
        "all_cells_beat_fw": all_beat_fw,
        "cells_beat_fast": beats_fast_count,
        "cells_required_fast": required,
        "passed": bool(cells) and all_beat_fw and beats_fast_count >= required,
    }


def oversized_supports(
    records: Sequence[RunRecord], n_measurements: int, tol: float = 1e-9
) -> List[RunRecord]:
    """kkt-converged records whose solution has more than ``n_measurements`` entries above ``tol``."""
    return [
        r
        for r in records
        if r.terminal_reason == KKT_CONVERGED
        and r.solution is not None
        and int(np.count_nonzero(np.abs(r.solution.weights) > tol)) > n_measurements
    ]


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if np.isfinite(value) else None
    return value


def _raw_frame(records: Iterable[RunRecord]) -> pd.DataFrame:
    rows = [
        (r.cell_id, r.solver, r.seed) + tuple(sample)
        for r in records
        for sample in r.trajectory.samples
    ]
    return pd.DataFrame(rows, columns=RAW_COLUMNS)


def _agg_frame(curves: Mapping[str, AggregateCurve]) -> pd.DataFrame:
    frames = [
        pd.DataFrame(
            {
                "cell_id": curve.cell_id,
                "solver": curve.solver,
                "time_s": curve.time,
                "median": curve.median,
                "p25": curve.p25,
                "p75": curve.p75,
            },
            columns=AGG_COLUMNS,
        )
        for curve in curves.values()
    ]
    if not frames:
        return pd.DataFrame(columns=AGG_COLUMNS)
    return pd.concat(frames, ignore_index=True)


def persist(
    records: Sequence[RunRecord],
    curves: Mapping[str, AggregateCurve],
    out_dir,
    spec: Optional[ExperimentSpec] = None,
    extra: Optional[dict] = None,
) -> Dict[str, Path]:
    """
    Write ``raw.csv``, ``agg.csv`` and ``manifest.json`` into ``out_dir``.

    :return: mapping from artifact name to written path
    """
    from . import __version__

    out = Path(out_dir)
    paths = {
        "raw": out / "raw.csv",
        "agg": out / "agg.csv",
        "manifest": out / "manifest.json",
    }
    manifest = {
        "polyfw_version": __version__,
        "spec": spec.to_dict() if spec is not None else None,
        "rng": RNG_DESCRIPTION,
        "matrix_model": MATRIX_MODEL,
        "truth_model": TRUTH_MODEL,
        "psnr_definition": PSNR_DEFINITION,
        "lambda_rule": LAMBDA_RULE,
        "timing_fidelity": (
            "waived: trials ran in parallel"
            if spec is not None and spec.parallel_trials
            else "serialized timed runs"
        ),
        "runs": [
            {
                "cell_id": r.cell_id,
                "sparsity": r.sparsity,
                "alpha": r.alpha,
                "solver": r.solver,
                "seed": r.seed,
                "terminal_reason": r.terminal_reason,
                "iterations": r.trajectory.iterations,
                "final_objective": r.final_objective,
                "final_support_size": r.final_support_size,
                "error": r.error,
            }
            for r in records
        ],
        "summary": summarize(records),
    }
    manifest.update(extra or {})
    try:
        out.mkdir(parents=True, exist_ok=True)
        _raw_frame(records).to_csv(paths["raw"], index=False)
        _agg_frame(curves).to_csv(paths["agg"], index=False)
        with open(paths["manifest"], "w") as fp:
            json.dump(_jsonable(manifest), fp, indent=2)
    except OSError as e:
        raise PolyfwError(f"{e.filename or out}: cannot write results ({e.strerror})") from e
    return paths


def _read_csv(path: Path, columns: List[str]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(
            path,
            dtype={"cell_id": str, "solver": str},
            keep_default_na=False,
            na_values=[""],
            float_precision="round_trip",
        )
    except FileNotFoundError as e:
        raise PolyfwError(f"{path}: no such file") from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError, ValueError) as e:
        raise PolyfwError(f"{path}: corrupt CSV ({e})") from e
    if list(frame.columns) != columns:
        raise PolyfwError(f"{path}: expected columns {','.join(columns)}")
    return frame


def read_manifest(cell_dir) -> Optional[dict]:
    path = Path(cell_dir) / "manifest.json"
    if not path.exists():
        return None
    try:
        with open(path) as fp:
            return json.load(fp)
    except (OSError, json.JSONDecodeError) as e:
        raise PolyfwError(f"{path}: cannot read manifest ({e})") from e


def load_records(cell_dir) -> List[RunRecord]:
    """Rebuild the run records of a persisted cell from ``raw.csv`` and the manifest."""
    cell_dir = Path(cell_dir)
    raw = _read_csv(cell_dir / "raw.csv", RAW_COLUMNS)
    samples: Dict[Tuple[str, int], List[Sample]] = {}
    cells: Dict[Tuple[str, int], str] = {}
    for row in raw.itertuples(index=False):
        key = (row.solver, int(row.seed))
        samples.setdefault(key, []).append(
            Sample(
                int(row.k),
                float(row.wall_time_s),
                float(row.objective),
                int(row.support_size),
                float(row.certificate_linf),
            )
        )
        cells[key] = row.cell_id
    manifest = read_manifest(cell_dir)
    if manifest is None:
        return [
            RunRecord(cells[key], 0, float("nan"), key[0], key[1], Trajectory(rows))
            for key, rows in samples.items()
        ]
    records = []
    for run in manifest["runs"]:
        key = (run["solver"], int(run["seed"]))
        records.append(
            RunRecord(
                cell_id=run["cell_id"],
                sparsity=int(run["sparsity"]),
                alpha=run["alpha"],
                solver=run["solver"],
                seed=int(run["seed"]),
                trajectory=Trajectory(samples.get(key, []), run["terminal_reason"]),
                error=run.get("error"),
            )
        )
    return records


def load_curves(cell_dir) -> Dict[str, AggregateCurve]:
    """Rebuild the aggregate curves of a persisted cell from ``agg.csv``."""
    frame = _read_csv(Path(cell_dir) / "agg.csv", AGG_COLUMNS)
    if frame.empty:
        raise PolyfwError(f"{Path(cell_dir) / 'agg.csv'}: no curves")
    curves = {}
    for solver, group in frame.groupby("solver", sort=False):
        curves[solver] = AggregateCurve(
            solver=solver,
            time=group["time_s"].to_numpy(dtype=float),
            median=group["median"].to_numpy(dtype=float),
            p25=group["p25"].to_numpy(dtype=float),
            p75=group["p75"].to_numpy(dtype=float),
            cell_id=str(group["cell_id"].iloc[0]),
        )
    return curves
