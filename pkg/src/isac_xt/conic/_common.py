"""Settings, result type and data scaling shared by the cone solvers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import kernels
from .problem import ConicProblem

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITER = "max-iter"


@dataclass(frozen=True)
class SolverSettings:
    """Solver knobs.

    ``method`` selects operator splitting (``"splitting"``) or the
    primal-dual interior-point method (``"interior"``).  The splitting
    options below ``check_every`` do not affect the interior-point method,
    which uses only ``tol``, ``ipm_max_iter``, ``step_fraction`` and
    ``scaling_passes``.
    """

    method: str = "splitting"
    tol: float = 1e-7
    max_iter: int = 50_000
    ipm_max_iter: int = 100
    step_fraction: float = 0.99
    rho: float = 1.0
    relaxation: float = 1.6
    check_every: int = 20
    adapt_rho: bool = True
    scaling_passes: int = 12
    infeasibility_tol: float = 1e-6
    min_iter_certificate: int = 400
    adapt_every: int = 100
    anderson_memory: int = 10
    anderson_safeguard: float = 1.0
    anderson_patience: int = 1000
    block_rho: bool = True
    block_rho_schedule: tuple[int, ...] = (200, 600, 1500, 4000, 10000)
    block_rho_range: float = 1e3


@dataclass(frozen=True, eq=False)
class ConicSolution:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    objective: float
    dual_objective: float
    primal_residual: float
    dual_residual: float
    gap: float
    status: str
    iterations: int
    backend: str = kernels.BACKEND
    diagnostics: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    @property
    def max_residual(self) -> float:
        return max(self.primal_residual, self.dual_residual, self.gap)


class _RowSolver:
    """Solves ``(A A^T) w = r`` with a Cholesky factor; tiny ridge only if ``A`` is rank deficient."""

    def __init__(self, A: sp.csr_matrix, inv_weights: np.ndarray | None = None):
        self.m = A.shape[0]
        if self.m == 0:
            return
        G = (A @ A.T if inv_weights is None else A @ sp.diags(inv_weights) @ A.T).toarray()
        try:
            self.factor = sla.cho_factor(G, lower=True, check_finite=False)
            self.ridge = 0.0
        except np.linalg.LinAlgError:
            self.ridge = 1e-12 * max(np.trace(G) / self.m, 1.0)
            self.factor = sla.cho_factor(G + self.ridge * np.eye(self.m), lower=True, check_finite=False)

    def solve(self, r: np.ndarray) -> np.ndarray:
        if self.m == 0:
            return np.zeros(0)
        return sla.cho_solve(self.factor, r, check_finite=False)


def _block_scaling(problem: ConicProblem, passes: int):
    """Row scaling ``Dr`` and per-cone-block column scaling ``E`` equilibrating ``A``."""
    A = problem.A.tocsc(copy=True)
    m, n = A.shape
    Dr = np.ones(m)
    E = np.ones(n)
    blocks = problem.cones.blocks()
    # free and nonneg entries may be scaled individually; SOC/PSD blocks only as a whole
    groups = []
    for kind, start, length, _ in blocks:
        if kind in ("free", "nonneg"):
            groups.extend([np.array([k]) for k in range(start, start + length)])
        else:
            groups.append(np.arange(start, start + length))
    if m == 0:
        return Dr, E
    for _ in range(passes):
        M = sp.diags(Dr) @ problem.A @ sp.diags(E)
        row = np.sqrt(np.asarray(abs(M).max(axis=1).todense()).ravel())
        row[row == 0] = 1.0
        Dr /= row
        M = sp.diags(Dr) @ problem.A @ sp.diags(E)
        colnorm = np.sqrt(np.asarray(M.multiply(M).sum(axis=0)).ravel())
        for g in groups:
            v = colnorm[g]
            v = v[v > 0]
            if v.size:
                E[g] /= np.sqrt(np.sqrt(np.mean(v ** 2)))
    np.clip(E, 1e-4, 1e4, out=E)
    return Dr, E
