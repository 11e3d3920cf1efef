from .kernels import BACKEND
from .problem import (
    Cones,
    ConicProblem,
    ProblemBuilder,
    dump_problem,
    hermitian_embed,
    hermitian_extract,
    hermitian_functional,
    read_problem,
    smat,
    svec,
)
from .solver import ConicSolution, SolverSettings, solve

__all__ = [
    "BACKEND", "Cones", "ConicProblem", "ConicSolution", "ProblemBuilder", "SolverSettings",
    "dump_problem", "hermitian_embed", "hermitian_extract", "hermitian_functional",
    "read_problem", "smat", "solve", "svec",
]
