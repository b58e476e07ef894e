"""
Frank-Wolfe family and FISTA solvers for the LASSO.

Every solver follows the same instrumented contract: it starts from the zero
vector, evaluates the dual certificate of its current iterate at the top of
each iteration, stops on the KKT test, the iteration cap or the wall-clock
budget, and records :class:`Sample` rows into a :class:`Trajectory`. Sample
``k`` describes the iterate entering iteration ``k``, so the first sample is
always the zero vector.

The wall clock only runs around solver work. Recording objectives, invoking
callbacks and the FISTA stopping test are bookkeeping and are not charged.
"""
import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Dict, List, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd

from ._typing import FloatArray, IndexArray
from .core import (
    Certificate,
    DesignMatrix,
    LassoProblem,
    SparseIterate,
    as_index_set,
    dual_certificate,
    gram_spectral_norm_sq,
    objective,
    soft_threshold,
    spectral_norm_sq,
    step_inflation,
)
from .exceptions import ContractViolation, UnknownSolverError

__all__ = [
    "SolverConfig",
    "LiftedIterate",
    "Atom",
    "ZERO_ATOM",
    "Sample",
    "Trajectory",
    "IterationInfo",
    "step_size_schedule",
    "select_atom",
    "polyatomic_indices",
    "exact_line_search",
    "partial_correction",
    "kkt_satisfied",
    "pfw_solve",
    "vfw_solve",
    "fcfw_solve",
    "fista_solve",
    "curvature_upper_bound",
    "SOLVERS",
    "get_solver",
]

logger = logging.getLogger(__name__)

KKT_CONVERGED = "kkt-converged"
BUDGET_EXHAUSTED = "budget-exhausted"
MAX_ITER = "max-iter"
FAILED = "failed"

CONE_SLACK = 1e-9


@dataclass(frozen=True)
class SolverConfig:
    """
    Tuning shared by all solvers.

    :param delta: approximation quality of the polyatomic selection.
    :param eps0: initial accuracy of the partial correction, scaled by the
        step size at every iteration.
    :param max_iter: cap on the number of updates.
    :param time_budget_s: cap on solver wall time, in seconds.
    :param kkt_tol: slack on the optimality test ``||eta||_inf <= 1``; on the
        support the certificate must match the signs within ``10 * kkt_tol``.
    :param record_every: trajectory sampling stride.
    :param prune: drop exact-zero indices from the active set after each
        correction; ``False`` keeps the active set growing monotonically.
    :param eps_full: accuracy of the fully-corrective re-optimization.
    """

    delta: float = 0.2
    eps0: float = 1e-2
    max_iter: int = 10_000
    time_budget_s: float = 60.0
    kkt_tol: float = 1e-4
    record_every: int = 1
    prune: bool = True
    eps_full: float = 1e-6

    def __post_init__(self):
        if not self.delta >= 0:
            raise ContractViolation(f"delta must be nonnegative, got {self.delta}")
        if not self.eps0 > 0:
            raise ContractViolation(f"eps0 must be positive, got {self.eps0}")
        if not self.eps_full > 0:
            raise ContractViolation(f"eps_full must be positive, got {self.eps_full}")
        if not self.kkt_tol > 0:
            raise ContractViolation(f"kkt_tol must be positive, got {self.kkt_tol}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ContractViolation(
                f"max_iter must be a positive integer, got {self.max_iter}"
            )
        if not self.time_budget_s > 0:
            raise ContractViolation(
                f"time_budget_s must be positive, got {self.time_budget_s}"
            )
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ContractViolation(
                f"record_every must be a positive integer, got {self.record_every}"
            )

    @classmethod
    def from_dict(cls, mapping: Optional[dict]) -> "SolverConfig":
        mapping = dict(mapping or {})
        known = {f.name for f in fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise ContractViolation(
                f"unknown solver option(s): {', '.join(sorted(unknown))}"
            )
        return cls(**mapping)

    def updated(self, **overrides) -> "SolverConfig":
        """Copy with every non-``None`` override applied."""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def asdict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LiftedIterate:
    """A point ``(t, x)`` of the lifted cone ``||x||_1 <= t <= M``."""

    x: SparseIterate
    t: float

    def in_cone(self, bound: float, slack: float = CONE_SLACK) -> bool:
        return self.x.l1 <= self.t + slack and -slack <= self.t <= bound + slack


@dataclass(frozen=True)
class Atom:
    """Extreme point ``(M, sign * M * e_index)`` of the cone, or its apex."""

    index: Optional[int]
    sign: int
    scale: float = 0.0

    @property
    def is_zero(self) -> bool:
        return self.index is None

    def lift(self, dimension: int) -> LiftedIterate:
        if self.is_zero:
            return LiftedIterate(SparseIterate.zero(dimension), 0.0)
        return LiftedIterate(
            SparseIterate([self.index], [self.sign * self.scale], dimension), self.scale
        )


ZERO_ATOM = Atom(index=None, sign=0)


class Sample(NamedTuple):
    k: int
    wall_time_s: float
    objective: float
    support_size: int
    certificate_linf: float


@dataclass
class Trajectory:
    samples: List[Sample] = field(default_factory=list)
    terminal_reason: Optional[str] = None

    def append(self, sample: Sample) -> None:
        if self.samples:
            last = self.samples[-1]
            if sample.k <= last.k:
                raise ContractViolation(
                    f"iteration {sample.k} recorded after iteration {last.k}"
                )
            if sample.wall_time_s < last.wall_time_s:
                raise ContractViolation("wall time must be nondecreasing")
        self.samples.append(sample)

    @property
    def final(self) -> Sample:
        return self.samples[-1]

    @property
    def iterations(self) -> int:
        return self.samples[-1].k if self.samples else 0

    def __len__(self):
        return len(self.samples)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.samples, columns=Sample._fields)


@dataclass
class IterationInfo:
    """What a solver did during iteration ``k``; handed to callbacks."""

    k: int
    certificate: Certificate
    x: SparseIterate
    x_next: SparseIterate
    gamma: Optional[float] = None
    indices: Optional[IndexArray] = None
    active: Optional[IndexArray] = None
    x_half: Optional[SparseIterate] = None
    epsilon: Optional[float] = None
    t: Optional[float] = None
    t_next: Optional[float] = None


Callback = Callable[[IterationInfo], None]


def step_size_schedule(k: int) -> float:
    """Open-loop step ``2 / (k + 2)``."""
    if k < 1:
        raise ContractViolation(f"iteration index must be >= 1, got {k}")
    return 2.0 / (k + 2.0)


def select_atom(cert: Certificate, bound: float) -> Atom:
    """
    Linear minimization over the lifted cone.

    Returns the signed extreme point on the coordinate of largest
    ``|eta_i|`` (smallest index on ties), or the apex when ``||eta||_inf <= 1``.
    """
    if len(cert) < 1:
        raise ContractViolation("empty certificate")
    if cert.linf <= 1.0:
        return ZERO_ATOM
    index = int(np.argmax(np.abs(cert.values)))
    sign = 1 if cert.values[index] > 0 else -1
    return Atom(index=index, sign=sign, scale=float(bound))


def polyatomic_indices(cert: Certificate, delta: float, gamma: float) -> IndexArray:
    """Every index with ``|eta_j| >= ||eta||_inf - delta * gamma``, ascending."""
    if delta < 0:
        raise ContractViolation(f"delta must be nonnegative, got {delta}")
    if not 0 < gamma <= 1:
        raise ContractViolation(f"gamma must lie in (0, 1], got {gamma}")
    threshold = cert.linf - delta * gamma
    return np.flatnonzero(np.abs(cert.values) >= threshold)


def exact_line_search(
    problem: LassoProblem,
    current: LiftedIterate,
    atom: LiftedIterate,
    ax: Optional[FloatArray] = None,
) -> float:
    """
    Minimize the lifted objective on the segment from ``current`` to ``atom``.

    ``g(gamma)`` is quadratic in ``gamma``; its minimizer is clipped to
    ``[0, 1]``. A direction with ``A d = 0`` yields 0.

    :param ax: ``A @ current.x`` if the caller already has it.
    """
    matrix = problem.matrix
    if ax is None:
        ax = matrix.apply_sparse(current.x)
    ad = matrix.apply_sparse(atom.x) - ax
    denom = float(ad @ ad)
    if denom == 0.0:
        return 0.0
    r = problem.y - ax
    num = float(ad @ r) - problem.lam * (atom.t - current.t)
    return float(np.clip(num / denom, 0.0, 1.0))


def partial_correction(
    problem: LassoProblem,
    x_init: SparseIterate,
    active,
    eps: float,
    deadline: Optional[float] = None,
    max_steps: Optional[int] = None,
) -> SparseIterate:
    """
    Warm-started ISTA on the LASSO restricted to the ``active`` columns.

    Runs until the relative change of the restricted iterate drops to
    ``eps`` (absolute change when the previous iterate is zero); at least
    one step is always taken. The step is ``1 / (1.01 * sigma_max(A_S)^2)``,
    which makes every step monotone, so the returned objective never exceeds
    the objective of ``x_init``.

    :param deadline: ``time.perf_counter()`` value after which the loop stops
        early; the result is still a valid monotone improvement.
    :param max_steps: optional cap on the number of ISTA steps.
    """
    if not eps > 0:
        raise ContractViolation(f"eps must be positive, got {eps}")
    n = problem.cols
    if x_init.dimension != n:
        raise ContractViolation(
            f"iterate has dimension {x_init.dimension}, problem has {n} features"
        )
    active = as_index_set(active, n)
    if active.size == 0:
        return SparseIterate.zero(n)
    if not x_init.is_within(active):
        raise ContractViolation("support of the initial iterate is not in the active set")

    a_s = problem.matrix.entries[:, active]
    y = problem.y
    use_gram = active.size <= problem.rows
    if use_gram:
        gram = a_s.T @ a_s
        aty = a_s.T @ y
        sigma_sq = gram_spectral_norm_sq(gram)
    else:
        sigma_sq = spectral_norm_sq(DesignMatrix(a_s, copy=False))
    if sigma_sq == 0.0:
        return SparseIterate.zero(n)
    tau = 1.0 / step_inflation(sigma_sq)
    thresh = tau * problem.lam

    u = x_init.values_at(active)
    steps = 0
    while True:
        if use_gram:
            grad = gram @ u - aty
        else:
            grad = a_s.T @ (a_s @ u - y)
        u_next = soft_threshold(u - tau * grad, thresh)
        steps += 1
        change = np.linalg.norm(u_next - u)
        ref = np.linalg.norm(u)
        u = u_next
        if change <= (eps * ref if ref > 0 else eps):
            break
        if max_steps is not None and steps >= max_steps:
            break
        if deadline is not None and time.perf_counter() >= deadline:
            break
    return SparseIterate(active, u, n)


def kkt_satisfied(x: SparseIterate, cert: Certificate, tol: float) -> bool:
    """``||eta||_inf <= 1 + tol`` and ``|eta_i - sgn(x_i)| <= 10 tol`` on the support."""
    if cert.linf > 1.0 + tol:
        return False
    if x.nnz == 0:
        return True
    deviation = np.abs(cert.values[x.support] - np.sign(x.weights))
    return bool(deviation.max() <= 10.0 * tol)


def curvature_upper_bound(problem: LassoProblem) -> float:
    """``4 M^2 sigma_max(A)^2``, an upper bound on the lifted curvature constant."""
    bound = problem.lift_bound
    return 4.0 * bound * bound * problem.spectral_norm_sq


class _Run:
    """Clock, stopping test and trajectory bookkeeping for one solver run."""

    def __init__(
        self,
        name: str,
        problem: LassoProblem,
        config: SolverConfig,
        callback: Optional[Callback],
    ) -> None:
        self.name = name
        self.problem = problem
        self.config = config
        self.callback = callback
        self.trajectory = Trajectory()
        self.elapsed = 0.0

    @contextmanager
    def timed(self):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.elapsed += time.perf_counter() - start

    def deadline(self) -> float:
        return time.perf_counter() + max(self.config.time_budget_s - self.elapsed, 0.0)

    def stop_reason(self, k: int, x: SparseIterate, cert: Certificate) -> Optional[str]:
        if kkt_satisfied(x, cert, self.config.kkt_tol):
            return KKT_CONVERGED
        if k > self.config.max_iter:
            return MAX_ITER
        if self.elapsed >= self.config.time_budget_s:
            return BUDGET_EXHAUSTED
        return None

    def observe(self, k: int, x: SparseIterate, cert: Certificate) -> bool:
        """Record iteration ``k`` if due; return ``True`` when the run must stop."""
        reason = self.stop_reason(k, x, cert)
        if reason is not None or (k - 1) % self.config.record_every == 0:
            self.trajectory.append(
                Sample(k, self.elapsed, objective(self.problem, x), x.nnz, cert.linf)
            )
        if reason is not None:
            self.trajectory.terminal_reason = reason
            logger.debug(
                "%s stopped at iteration %d (%s) after %.3fs",
                self.name,
                k,
                reason,
                self.elapsed,
            )
            return True
        return False

    def notify(self, info: IterationInfo) -> None:
        if self.callback is not None:
            self.callback(info)


def _signed_atoms(
    cert: Certificate, indices: IndexArray, bound: float, dimension: int
) -> SparseIterate:
    signs = np.sign(cert.values[indices])
    return SparseIterate(indices, (bound / indices.size) * signs, dimension)


def pfw_solve(
    problem: LassoProblem,
    config: Optional[SolverConfig] = None,
    callback: Optional[Callback] = None,
) -> Tuple[SparseIterate, Trajectory]:
    """
    Polyatomic Frank-Wolfe.

    Each iteration activates every index whose certificate is within
    ``delta * gamma_k`` of the largest, moves towards the average of the
    corresponding signed atoms, and re-optimizes the active coordinates with
    :func:`partial_correction` at accuracy ``eps0 * gamma_k``.
    """
    config = config or SolverConfig()
    run = _Run("pfw", problem, config, callback)
    n = problem.cols
    bound = problem.lift_bound
    x = SparseIterate.zero(n)
    active = np.empty(0, dtype=np.intp)
    with run.timed():
        cert = dual_certificate(problem, x)
    k = 1
    while not run.observe(k, x, cert):
        with run.timed():
            gamma = step_size_schedule(k)
            indices = polyatomic_indices(cert, config.delta, gamma)
            atoms = _signed_atoms(cert, indices, bound, n)
            active = np.union1d(active, indices)
            epsilon = config.eps0 * gamma
            x_half = x.blend(atoms, gamma)
            x_next = partial_correction(
                problem, x_half, active, epsilon, deadline=run.deadline()
            )
            corrected = active
            if config.prune:
                active = x_next.support
            next_cert = dual_certificate(problem, x_next)
        run.notify(
            IterationInfo(
                k=k,
                certificate=cert,
                x=x,
                x_next=x_next,
                gamma=gamma,
                indices=indices,
                active=corrected,
                x_half=x_half,
                epsilon=epsilon,
            )
        )
        x, cert = x_next, next_cert
        k += 1
    return x, run.trajectory


def fcfw_solve(
    problem: LassoProblem,
    config: Optional[SolverConfig] = None,
    callback: Optional[Callback] = None,
) -> Tuple[SparseIterate, Trajectory]:
    """
    Fully-corrective Frank-Wolfe.

    One atom per iteration; the active coordinates are then re-optimized to
    the fixed accuracy ``eps_full``, warm-started from the current iterate.
    """
    config = config or SolverConfig()
    run = _Run("fcfw", problem, config, callback)
    n = problem.cols
    x = SparseIterate.zero(n)
    active = np.empty(0, dtype=np.intp)
    with run.timed():
        cert = dual_certificate(problem, x)
    k = 1
    while not run.observe(k, x, cert):
        with run.timed():
            atom = select_atom(cert, problem.lift_bound)
            indices = (
                np.empty(0, dtype=np.intp)
                if atom.is_zero
                else np.array([atom.index], dtype=np.intp)
            )
            active = np.union1d(active, indices)
            x_next = partial_correction(
                problem, x, active, config.eps_full, deadline=run.deadline()
            )
            corrected = active
            if config.prune:
                active = x_next.support
            next_cert = dual_certificate(problem, x_next)
        run.notify(
            IterationInfo(
                k=k,
                certificate=cert,
                x=x,
                x_next=x_next,
                indices=indices,
                active=corrected,
                epsilon=config.eps_full,
            )
        )
        x, cert = x_next, next_cert
        k += 1
    return x, run.trajectory


def vfw_solve(
    problem: LassoProblem,
    config: Optional[SolverConfig] = None,
    callback: Optional[Callback] = None,
) -> Tuple[SparseIterate, Trajectory]:
    """
    Vanilla Frank-Wolfe on the lifted problem with exact line search.

    The lift variable ``t`` is tracked from 0 so the line search sees the
    ``lam * t`` term; the cone apex is a candidate atom.
    """
    config = config or SolverConfig()
    run = _Run("vfw", problem, config, callback)
    n = problem.cols
    bound = problem.lift_bound
    matrix = problem.matrix
    current = LiftedIterate(SparseIterate.zero(n), 0.0)
    with run.timed():
        ax = np.zeros(problem.rows)
        cert = Certificate(matrix.adjoint(problem.y) / problem.lam)
    k = 1
    while not run.observe(k, current.x, cert):
        with run.timed():
            atom = select_atom(cert, bound).lift(n)
            gamma = exact_line_search(problem, current, atom, ax=ax)
            step = LiftedIterate(
                current.x.blend(atom.x, gamma),
                (1.0 - gamma) * current.t + gamma * atom.t,
            )
            ax = (1.0 - gamma) * ax + gamma * matrix.apply_sparse(atom.x)
            next_cert = Certificate(matrix.adjoint(problem.y - ax) / problem.lam)
        run.notify(
            IterationInfo(
                k=k,
                certificate=cert,
                x=current.x,
                x_next=step.x,
                gamma=gamma,
                indices=atom.x.support,
                t=current.t,
                t_next=step.t,
            )
        )
        current, cert = step, next_cert
        k += 1
    return current.x, run.trajectory


def fista_solve(
    problem: LassoProblem,
    config: Optional[SolverConfig] = None,
    callback: Optional[Callback] = None,
) -> Tuple[SparseIterate, Trajectory]:
    """
    Accelerated proximal gradient with Nesterov momentum on the full problem.

    Iterates are dense; the stopping test runs on sampled iterations only
    (every ``record_every``) and is not charged to the clock.
    """
    config = config or SolverConfig()
    run = _Run("fista", problem, config, callback)
    n = problem.cols
    entries = problem.matrix.entries
    y = problem.y
    with run.timed():
        sigma_sq = problem.spectral_norm_sq
    x_dense = np.zeros(n)
    if sigma_sq == 0.0:
        # zero matrix: the penalty alone is minimized at 0
        x = SparseIterate.zero(n)
        run.observe(1, x, dual_certificate(problem, x))
        return x, run.trajectory
    tau = 1.0 / step_inflation(sigma_sq)
    thresh = tau * problem.lam
    z = x_dense.copy()
    momentum = 1.0
    k = 1
    while True:
        check = (
            (k - 1) % config.record_every == 0
            or k > config.max_iter
            or run.elapsed >= config.time_budget_s
        )
        if check or run.callback is not None:
            x = SparseIterate.from_dense(x_dense)
            cert = dual_certificate(problem, x)
            if check and run.observe(k, x, cert):
                break
        with run.timed():
            grad = entries.T @ (entries @ z - y)
            x_next = soft_threshold(z - tau * grad, thresh)
            momentum_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * momentum * momentum))
            z = x_next + ((momentum - 1.0) / momentum_next) * (x_next - x_dense)
        if run.callback is not None:
            run.notify(
                IterationInfo(
                    k=k,
                    certificate=cert,
                    x=x,
                    x_next=SparseIterate.from_dense(x_next),
                    gamma=tau,
                )
            )
        x_dense, momentum = x_next, momentum_next
        k += 1
    return SparseIterate.from_dense(x_dense), run.trajectory


SOLVERS: Dict[str, Callable[..., Tuple[SparseIterate, Trajectory]]] = {
    "vfw": vfw_solve,
    "fcfw": fcfw_solve,
    "pfw": pfw_solve,
    "fista": fista_solve,
}

LABELS = {"pfw": "P-FW", "vfw": "V-FW", "fcfw": "FC-FW", "fista": "FISTA"}


def get_solver(name: str):
    try:
        return SOLVERS[name]
    except KeyError:
        raise UnknownSolverError(name, SOLVERS) from None
