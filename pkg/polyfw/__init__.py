__version__ = "0.1.0"

from typing import Optional, Tuple

import numpy as np

from .core import (
    Certificate,
    DesignMatrix,
    LassoProblem,
    SparseIterate,
    dual_certificate,
    lambda_max,
    lift_bound,
    objective,
    spectral_norm_sq,
)
from .exceptions import (
    ContractViolation,
    MatrixFormatError,
    PolyfwError,
    SpecError,
    UnknownSolverError,
)
from .matrixfile import read_matrix, read_vector, write_matrix, write_vector
from .solvers import (
    SOLVERS,
    IterationInfo,
    SolverConfig,
    Trajectory,
    fcfw_solve,
    fista_solve,
    get_solver,
    kkt_satisfied,
    pfw_solve,
    vfw_solve,
)

__all__ = [
    "Certificate",
    "DesignMatrix",
    "LassoProblem",
    "SparseIterate",
    "dual_certificate",
    "lambda_max",
    "lift_bound",
    "objective",
    "spectral_norm_sq",
    "ContractViolation",
    "MatrixFormatError",
    "PolyfwError",
    "SpecError",
    "UnknownSolverError",
    "read_matrix",
    "read_vector",
    "write_matrix",
    "write_vector",
    "SOLVERS",
    "IterationInfo",
    "SolverConfig",
    "Trajectory",
    "fcfw_solve",
    "fista_solve",
    "get_solver",
    "kkt_satisfied",
    "pfw_solve",
    "vfw_solve",
    "build_problem",
    "solve",
]


def build_problem(
    A, y, lam: Optional[float] = None, lambda_factor: Optional[float] = None
) -> LassoProblem:
    """
    Build a LASSO problem, fixing ``lam`` directly or as a fraction of
    ``max|A^T y|``. Without either, ``lambda_factor=0.1`` is used.
    """
    if lam is not None and lambda_factor is not None:
        raise ContractViolation("give either lam or lambda_factor, not both")
    matrix = A if isinstance(A, DesignMatrix) else DesignMatrix(A)
    y = np.asarray(y, dtype=np.float64)
    if lam is None:
        factor = 0.1 if lambda_factor is None else lambda_factor
        if not factor > 0:
            raise ContractViolation(f"lambda_factor must be positive, got {factor}")
        lam = factor * float(np.max(np.abs(matrix.adjoint(y)), initial=0.0))
    return LassoProblem(matrix, y, lam)


def solve(
    A,
    y,
    lam: Optional[float] = None,
    lambda_factor: Optional[float] = None,
    solver: str = "pfw",
    callback=None,
    **config,
) -> Tuple[SparseIterate, Trajectory]:
    """
    Solve ``min 0.5*||y - A x||^2 + lam*||x||_1``.

    :param A: matrix as an array or :class:`DesignMatrix`
    :param y: observations
    :param lam: regularization weight
    :param lambda_factor: alternatively, ``lam`` as a fraction of ``max|A^T y|``
    :param solver: one of ``"pfw"``, ``"vfw"``, ``"fcfw"``, ``"fista"``
    :param config: :class:`SolverConfig` fields
    :return: the final iterate and its trajectory
    """
    solve_fn = get_solver(solver)
    problem = build_problem(A, y, lam=lam, lambda_factor=lambda_factor)
    return solve_fn(problem, SolverConfig.from_dict(config), callback=callback)
