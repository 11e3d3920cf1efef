"""Echo simulation and the three matched estimators (PSM, UCM, DSM).

All estimators share one semi-linear MAP core: for a set of scatterer
coordinates the RCS vector is eliminated in closed form and the remaining
cost is minimized by resolution-preconditioned gradient descent with Armijo
backtracking.  The core works on the sufficient statistics ``X_n X_n^H`` and
``Y_n X_n^H`` instead of the stacked observation vector, and every cost is
multiplied by the noise variance so the noiseless case needs no special path.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from . import fisher
from .model import (
    PARAM_NAMES,
    GeometricParams,
    Responses,
    ScattererGrid,
    grid_from_geometry,
    parameter_resolutions,
    scatterer_responses,
    target_responses,
)
from .scenario import Scenario

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# observations


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Received echoes ``Y_n = G_n X_n + Z_n`` with the known waveforms ``X_n = W_n S_n``.

    ``covariance`` is the designed ``R_n`` the waveforms were drawn from (used
    as the expected-information weight by the UCM estimator).
    """

    Y: np.ndarray                     # (N, N_r, L)
    X: np.ndarray                     # (N, N_t, L)
    symbols: tuple[np.ndarray, ...]   # S_n, (streams_n, L) each
    noise_var: float
    covariance: np.ndarray | None = None

    def __post_init__(self):
        if self.Y.ndim != 3 or self.X.ndim != 3 or self.Y.shape[0] != self.X.shape[0] \
                or self.Y.shape[2] != self.X.shape[2]:
            raise ValueError(f"inconsistent observation shapes {self.Y.shape} and {self.X.shape}")
        if self.noise_var < 0:
            raise ValueError("noise variance must be nonnegative")

    @property
    def n_symbols(self) -> int:
        return self.X.shape[2]

    def statistics(self) -> tuple[np.ndarray, np.ndarray]:
        """``(X_n X_n^H, Y_n X_n^H)`` per subcarrier."""
        Xh = self.X.conj().transpose(0, 2, 1)
        return self.X @ Xh, self.Y @ Xh

    def vector(self) -> np.ndarray:
        """``y = vec([Y_0, ..., Y_{N-1}])`` with column-major ``vec`` per subcarrier."""
        return np.concatenate([Yn.ravel(order="F") for Yn in self.Y])


def precoders_from_solution(solution) -> list[np.ndarray]:
    """``W_n = [w_{n,1}, ..., w_{n,K}, W_{s,n}]`` from a beamforming solution."""
    out = []
    for n, factors in enumerate(solution.sensing_factors):
        out.append(np.concatenate([solution.beamformers[n].T, factors], axis=1))
    return out


def precoders_from_covariance(R: np.ndarray, rel_tol: float = 1e-12) -> list[np.ndarray]:
    """Square-root factors ``W_n W_n^H = R_n`` (eigenvalues below ``rel_tol`` dropped)."""
    out = []
    for Rn in np.asarray(R):
        lam, U = np.linalg.eigh(0.5 * (Rn + Rn.conj().T))
        keep = lam > rel_tol * max(lam.max(), 1e-300)
        out.append(U[:, keep] * np.sqrt(lam[keep]))
    return out


def _cn(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    return np.sqrt(var / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def draw_rcs(scenario: Scenario, rng: np.random.Generator) -> np.ndarray:
    """One RCS draw ``alpha ~ CN(0, sigma_a^2 I)`` for the scenario grid."""
    return _cn(rng, scenario.grid.size, scenario.prior.variance)


def simulate_observations(scenario: Scenario, solution, alpha, rng: np.random.Generator,
                          noise_var: float | None = None, grid: ScattererGrid | None = None,
                          noise_rng: np.random.Generator | None = None) -> ObservationSet:
    """Draw symbols and noise and form the echoes of the target ``grid`` (default: scenario truth).

    ``solution`` is a :class:`~isac_xt.beamform.BeamformerSolution`, a list of
    precoders ``W_n``, or an (N, N_t, N_t) covariance array.  Noise comes from
    ``noise_rng`` when given, so designs with different stream counts can share
    the same noise realization.
    """
    geom = scenario.geometry
    grid = scenario.grid if grid is None else grid
    noise = scenario.noise_sense_w if noise_var is None else float(noise_var)
    if isinstance(solution, np.ndarray):
        precoders = precoders_from_covariance(solution)
        cov = solution
    elif isinstance(solution, (list, tuple)):
        precoders = list(solution)
        cov = np.stack([W @ W.conj().T for W in precoders])
    else:
        precoders = precoders_from_solution(solution)
        cov = solution.R
    N, L = geom.n_subcarriers, geom.n_symbols
    if len(precoders) != N or any(W.shape[0] != geom.n_tx for W in precoders):
        raise ValueError("precoders do not match the array geometry")
    G = target_responses(scatterer_responses(grid.theta, grid.phi, grid.d, geom), alpha)
    symbols = tuple(_cn(rng, (W.shape[1], L)) for W in precoders)
    X = np.stack([W @ S for W, S in zip(precoders, symbols)])
    Z = _cn(noise_rng or rng, (N, geom.n_rx, L), noise) if noise > 0 else np.zeros((N, geom.n_rx, L), complex)
    return ObservationSet(Y=G @ X + Z, X=X, symbols=symbols, noise_var=noise, covariance=np.asarray(cov))


# ---------------------------------------------------------------------------
# dense forms (reference implementations)


def dictionary(grid: ScattererGrid, geom, X: np.ndarray) -> np.ndarray:
    """``D`` with column ``t`` equal to ``[vec(V_{t,0} X_0); ...; vec(V_{t,N-1} X_{N-1})]``."""
    resp = scatterer_responses(grid.theta, grid.phi, grid.d, geom)
    return _dense_columns(resp.f, resp.b, resp.a, X)


def _dense_columns(f, b, a, X) -> np.ndarray:
    # V_{t,n} X_n = f b (a^H X_n): (N, T, N_r, L)
    aX = np.einsum("ntx,nxl->ntl", a.conj(), X)
    VX = f[:, :, None, None] * b[:, :, :, None] * aX[:, :, None, :]
    # column-major vec of each (N_r, L) block, subcarriers stacked
    N, T = f.shape
    return np.concatenate([VX[n].transpose(0, 2, 1).reshape(T, -1).T for n in range(N)], axis=0)


def dictionary_derivatives(grid: ScattererGrid, geom, X: np.ndarray) -> np.ndarray:
    """``dD/d xi_i`` for the six geometric parameters, shape (6, rows, T)."""
    resp = scatterer_responses(grid.theta, grid.phi, grid.d, geom)
    per_coord = _coordinate_dictionaries(resp, X)       # (3, rows, T)
    J = grid.jacobian()                                 # (3T, 6)
    T = grid.size
    out = np.zeros((6,) + per_coord.shape[1:], dtype=complex)
    for i in range(6):
        for c in range(3):
            out[i] += per_coord[c] * J[c * T:(c + 1) * T, i][None, :]
    return out


def _coordinate_dictionaries(resp: Responses, X) -> np.ndarray:
    """Column ``t`` of slice ``c`` is the derivative of column ``t`` of ``D`` w.r.t. coordinate ``c`` of scatterer ``t``."""
    f, df = resp.f, resp.df
    d_theta = _dense_columns(f, resp.b_theta, resp.a, X) + _dense_columns(f, resp.b, resp.a_theta, X)
    d_phi = _dense_columns(f, resp.b_phi, resp.a, X) + _dense_columns(f, resp.b, resp.a_phi, X)
    d_range = _dense_columns(df, resp.b, resp.a, X)
    return np.stack([d_theta, d_phi, d_range])


def alpha_map(D: np.ndarray, y: np.ndarray, sigma_s2: float, sigma_a2: float) -> np.ndarray:
    """``(D^H D / s2 + I / a2)^{-1} D^H y / s2``, computed as ``(D^H D + (s2/a2) I)^{-1} D^H y``."""
    B = D.conj().T @ D + (sigma_s2 / sigma_a2) * np.eye(D.shape[1])
    return sla.solve(B, D.conj().T @ y, assume_a="her")


def map_objective_and_gradient(D: np.ndarray, dD: np.ndarray, y: np.ndarray,
                               sigma_s2: float, sigma_a2: float) -> tuple[float, np.ndarray]:
    """``J = -p^H B^{-1} p`` and its gradient for white noise ``sigma_s2 > 0``.

    ``dD`` stacks ``dD/d zeta_i`` along the first axis.
    """
    if sigma_s2 <= 0:
        raise ValueError("the unscaled objective needs a positive noise variance")
    B = D.conj().T @ D / sigma_s2 + np.eye(D.shape[1]) / sigma_a2
    p = D.conj().T @ y / sigma_s2
    alpha = sla.solve(B, p, assume_a="her")
    J = -float(np.real(p.conj() @ alpha))
    resid = (y - D @ alpha) / sigma_s2
    grad = np.array([-2 * np.real(alpha.conj() @ (dDi.conj().T @ resid)) for dDi in dD])
    return J, grad


# ---------------------------------------------------------------------------
# sufficient-statistics core


@dataclass(frozen=True)
class _Stats:
    Rxx: np.ndarray     # (N, N_t, N_t) weight acting on the transmit side
    Ryx: np.ndarray     # (N, N_r, N_t)
    ridge: float        # noise variance over prior variance


class IllConditionedError(np.linalg.LinAlgError):
    pass


def _semi_linear(stats: _Stats, resp: Responses, with_grad: bool = True):
    """Noise-scaled cost, gradient w.r.t. ``[theta_1..T, phi_1..T, d_1..T]`` and the RCS estimate."""
    f, a, b = resp.f, resp.a, resp.b
    T = f.shape[1]
    bb = np.einsum("ntr,nsr->nts", b.conj(), b)
    Ra = np.einsum("nxy,nty->ntx", stats.Rxx, a)                  # R a_t
    aRa = np.einsum("nsx,ntx->nts", a.conj(), Ra)                  # a_s^H R a_t
    gram = np.einsum("nts,nts->ts", f.conj()[:, :, None] * f[:, None, :] * bb, aRa)
    gram = 0.5 * (gram + gram.conj().T)
    Yb = np.einsum("nrx,ntr->ntx", stats.Ryx, b.conj())            # b_t^H Ryx
    p = np.einsum("nt,ntx,ntx->t", f.conj(), Yb, a)
    B = gram + stats.ridge * np.eye(T)
    try:
        cf = sla.cho_factor(B, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise IllConditionedError("RCS normal matrix is not positive definite") from exc
    alpha = sla.cho_solve(cf, p, check_finite=False)
    J = -float(np.real(np.vdot(p, alpha)))
    if not with_grad:
        return J, None, alpha
    G = np.einsum("t,nt,nti,ntj->nij", alpha, f, b, a.conj())
    E = stats.Ryx - G @ stats.Rxx                                   # Y X^H - G X X^H
    Ea = np.einsum("nrx,ntx->ntr", E, a)
    Ea_t = np.einsum("nrx,ntx->ntr", E, resp.a_theta)
    Ea_p = np.einsum("nrx,ntx->ntr", E, resp.a_phi)
    fc = f.conj()
    g_theta = np.einsum("nt,ntr,ntr->t", fc, resp.b_theta.conj(), Ea) + np.einsum("nt,ntr,ntr->t", fc, b.conj(), Ea_t)
    g_phi = np.einsum("nt,ntr,ntr->t", fc, resp.b_phi.conj(), Ea) + np.einsum("nt,ntr,ntr->t", fc, b.conj(), Ea_p)
    g_range = np.einsum("nt,ntr,ntr->t", resp.df.conj(), b.conj(), Ea)
    grad = -2 * np.real(alpha.conj()[None, :] * np.stack([g_theta, g_phi, g_range])).ravel()
    return J, grad, alpha


def _stats_from_observations(obs: ObservationSet, sigma_a2: float) -> _Stats:
    Rxx, Ryx = obs.statistics()
    return _Stats(Rxx, Ryx, obs.noise_var / sigma_a2)


# ---------------------------------------------------------------------------
# configuration and descent


@dataclass(frozen=True)
class EstimatorConfig:
    """Initialization policy and Armijo descent settings.

    The descent stops when the squared parameter change (in resolution cells) is at most ``tol``,
    or when the resolution-scaled gradient norm is at most ``grad_tol`` times
    the magnitude of the cost.

    ``init_mode="benchmark"`` starts from the truth moved by
    ``init_perturbation`` resolution cells (uniform in +-1 per parameter);
    ``"blind"`` scans a coarse grid of centers around the scenario's nominal
    geometry with the extents held at their nominal values.
    """

    init_mode: str = "benchmark"
    init_perturbation: float = 0.1
    tol: float = 1e-10
    max_iter: int = 500
    initial_step: float = 1.0
    shrink: float = 0.5
    armijo: float = 1e-4
    max_backtracks: int = 30
    coarse_grid: tuple[int, int, int] = (7, 7, 7)
    coarse_span_cells: float = 3.0
    direction: str = "bfgs"
    grad_tol: float = 1e-13

    def __post_init__(self):
        if self.direction not in ("bfgs", "gradient"):
            raise ValueError(f"unknown search direction {self.direction!r}")
        if self.init_mode not in ("benchmark", "blind"):
            raise ValueError(f"unknown initialization mode {self.init_mode!r}")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink factor must lie in (0, 1)")
        for name in ("tol", "grad_tol", "max_iter", "initial_step", "armijo", "max_backtracks", "coarse_span_cells"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.init_perturbation < 0 or min(self.coarse_grid) < 1:
            raise ValueError("invalid initialization settings")


@dataclass
class DescentResult:
    x: np.ndarray
    trace: list[float]
    iterations: int
    status: str          # converged | max-iter | stalled
    evaluations: int


def armijo_descent(fun: Callable[[np.ndarray], tuple[float, np.ndarray]], x0: np.ndarray,
                   scale: np.ndarray, cfg: EstimatorConfig, free: np.ndarray | None = None) -> DescentResult:
    """Descent with Armijo backtracking in resolution-scaled coordinates ``z = x / scale``.

    With ``cfg.direction="gradient"`` the direction is the scaled negative
    gradient normalized to unit length, so a unit step moves one resolution
    cell.  ``"bfgs"`` (default) starts the same way and then preconditions the
    scaled gradient with a BFGS inverse-Hessian estimate, falling back to the
    normalized gradient whenever that is not a descent direction.
    Coordinates outside ``free`` stay fixed.  Stops when the squared parameter
    change, measured in resolution cells, falls below ``cfg.tol``, or after
    ``cfg.max_iter`` iterations.
    """
    x = np.asarray(x0, dtype=float).copy()
    free = np.ones(x.size, bool) if free is None else np.asarray(free, bool)
    use_bfgs = cfg.direction == "bfgs"
    J, g = fun(x)
    if not np.isfinite(J):
        raise ValueError("the starting point lies outside the valid parameter region")
    evals = 1
    trace = [J]
    status = "max-iter"
    H = None
    it = 0
    for it in range(1, cfg.max_iter + 1):
        gz = np.where(free, scale * g, 0.0)
        gnorm = np.linalg.norm(gz)
        if gnorm <= cfg.grad_tol * abs(J) or not np.isfinite(gnorm):
            status = "converged"
            it -= 1
            break
        dz = -H @ gz if H is not None else None
        if dz is None or not np.dot(dz, gz) < 0:
            dz = -gz / gnorm
            H = None
        slope = float(np.dot(dz, gz))
        dx = scale * dz
        t = cfg.initial_step
        accepted = False
        for _ in range(cfg.max_backtracks + 1):
            x_new = x + t * dx
            J_new, g_new = fun(x_new)
            evals += 1
            if J_new <= J + cfg.armijo * t * slope:
                accepted = True
                break
            t *= cfg.shrink
        if not accepted:
            if H is not None:
                H = None                 # retry once along the plain gradient
                continue
            # every trial step is already below the stopping tolerance: x is stationary
            status = "converged" if np.sum((t / cfg.shrink * dz) ** 2) <= cfg.tol else "stalled"
            it -= 1
            break
        step2 = float(np.sum((t * dz) ** 2))
        if use_bfgs:
            sz = t * dz
            yz = np.where(free, scale * g_new, 0.0) - gz
            sy = float(np.dot(sz, yz))
            if sy > 1e-12 * np.linalg.norm(sz) * np.linalg.norm(yz):
                if H is None:
                    H = np.diag(free.astype(float)) * (sy / np.dot(yz, yz))
                rho = 1.0 / sy
                V = np.eye(x.size) - rho * np.outer(sz, yz)
                H = V @ H @ V.T + rho * np.outer(sz, sz)
        x, J, g = x_new, J_new, g_new
        trace.append(J)
        # a backtracked step can be short far from the optimum; only a full step signals convergence
        if step2 <= cfg.tol and t == cfg.initial_step:
            status = "converged"
            break
    if status == "stalled":
        log.warning("descent stalled after %d iterations (no Armijo step in %d backtracks)",
                    it, cfg.max_backtracks)
    return DescentResult(x, trace, it, status, evals)


# ---------------------------------------------------------------------------
# estimators


@dataclass(eq=False)
class EstimationResult:
    params: np.ndarray            # the six geometric parameters (inactive extents held fixed)
    alpha: np.ndarray
    model: str
    trace: list[float]
    iterations: int
    status: str
    seconds: float
    init: np.ndarray
    stage1: dict = field(default_factory=dict)

    @property
    def geometric(self) -> GeometricParams:
        return GeometricParams.from_array(self.params)


def initial_parameters(scenario: Scenario, cfg: EstimatorConfig, rng: np.random.Generator | None,
                       objective: Callable[[np.ndarray], float] | None = None) -> np.ndarray:
    """Starting point per ``cfg.init_mode``; blind mode needs the cost ``objective``."""
    truth = scenario.params.as_array()
    res = parameter_resolutions(scenario.geometry, scenario.params.phi0)
    active = scenario.grid.active_mask
    if cfg.init_mode == "benchmark":
        if rng is None or cfg.init_perturbation == 0:
            return truth.copy()
        jitter = rng.uniform(-1.0, 1.0, 6) * cfg.init_perturbation * res
        return truth + np.where(active, jitter, 0.0)
    if objective is None:
        raise ValueError("blind initialization needs an objective")
    axes = [np.linspace(-cfg.coarse_span_cells, cfg.coarse_span_cells, k) if k > 1 else np.zeros(1)
            for k in cfg.coarse_grid]
    best, best_x = np.inf, truth.copy()
    for dt in axes[0]:
        for dp in axes[1]:
            for dd in axes[2]:
                x = truth.copy()
                x[0] += dt * res[0]
                x[2] += dp * res[2]
                x[4] += dd * res[4]
                val = objective(x)
                if val < best:
                    best, best_x = val, x
    return best_x


def _psm_cost(stats: _Stats, scenario: Scenario):
    geom = scenario.geometry
    sizes = scenario.grid.sizes

    def coords(x):
        grid = grid_from_geometry(GeometricParams.from_array(x), sizes)
        return grid, scatterer_responses(grid.theta, grid.phi, grid.d, geom)

    def fun(x):
        try:
            grid, resp = coords(x)
        except ValueError:          # outside the valid geometry: reject the trial step
            return np.inf, np.zeros_like(x)
        J, g, _ = _semi_linear(stats, resp)
        return J, grid.jacobian().T @ g

    def value(x):
        try:
            return _semi_linear(stats, coords(x)[1], with_grad=False)[0]
        except ValueError:
            return np.inf

    def alpha(x):
        return _semi_linear(stats, coords(x)[1], with_grad=False)[2]

    return fun, value, alpha


def _run_psm_like(stats: _Stats, scenario: Scenario, cfg: EstimatorConfig, rng, model: str,
                  init: np.ndarray | None, t0: float, stage1: dict | None = None) -> EstimationResult:
    fun, value, alpha_at = _psm_cost(stats, scenario)
    x0 = initial_parameters(scenario, cfg, rng, value) if init is None else np.asarray(init, float)
    res = parameter_resolutions(scenario.geometry, scenario.params.phi0)
    out = armijo_descent(fun, x0, res, cfg, scenario.grid.active_mask)
    return EstimationResult(out.x, alpha_at(out.x), model, out.trace, out.iterations, out.status,
                            time.perf_counter() - t0, x0, stage1 or {})


def estimate_psm(obs: ObservationSet, scenario: Scenario, cfg: EstimatorConfig | None = None,
                 rng: np.random.Generator | None = None, init: np.ndarray | None = None) -> EstimationResult:
    """Semi-linear MAP over the six geometric parameters."""
    t0 = time.perf_counter()
    cfg = cfg or EstimatorConfig()
    stats = _stats_from_observations(obs, scenario.prior.variance)
    return _run_psm_like(stats, scenario, cfg, rng, "PSM", init, t0)


def ucm_channel_estimates(obs: ObservationSet, cond_limit: float = 1e12) -> np.ndarray:
    """Least-squares ``G_n = Y_n X_n^H (X_n X_n^H)^{-1}`` for every subcarrier."""
    Rxx, Ryx = obs.statistics()
    out = np.empty((Rxx.shape[0], Ryx.shape[1], Rxx.shape[1]), dtype=complex)
    for n in range(Rxx.shape[0]):
        lam = np.linalg.eigvalsh(Rxx[n])
        if lam[0] <= 0 or lam[-1] / lam[0] > cond_limit:
            raise ValueError(f"X_n X_n^H is singular on subcarrier {n}; the UCM estimator needs "
                             "full-rank waveforms with at least N_t symbols")
        out[n] = np.linalg.solve(Rxx[n].T, Ryx[n].T).T
    return out


def estimate_ucm(obs: ObservationSet, scenario: Scenario, cfg: EstimatorConfig | None = None,
                 rng: np.random.Generator | None = None, init: np.ndarray | None = None) -> EstimationResult:
    """Unstructured least squares, then a weighted structured fit of the geometry."""
    t0 = time.perf_counter()
    cfg = cfg or EstimatorConfig()
    G_hat = ucm_channel_estimates(obs)
    cov = obs.covariance if obs.covariance is not None else obs.statistics()[0] / obs.n_symbols
    # F_G scaled by the noise variance: G_n -> L G_n R_n
    weight = fisher.UcmFim(cov, obs.n_symbols, 1.0)
    stats = _Stats(obs.n_symbols * np.asarray(cov, complex), weight.apply(G_hat),
                   obs.noise_var / scenario.prior.variance)
    return _run_psm_like(stats, scenario, cfg, rng, "UCM", init, t0, {"G_hat": G_hat})


def dsm_structured_fit(vartheta: np.ndarray, fim: np.ndarray, grid: ScattererGrid) -> np.ndarray:
    """Weighted projection ``(U^T F U)^{-1} U^T F vartheta`` onto the active geometric parameters.

    Returns all six parameters; inactive extents come back as zero.
    """
    U = grid.jacobian()[:, grid.active_mask]
    A = U.T @ fim @ U
    xi = np.zeros(6)
    xi[grid.active_mask] = np.linalg.solve(A, U.T @ fim @ vartheta)
    return xi


def dsm_rcs_shrinkage(alpha_hat: np.ndarray, fim_aa: np.ndarray, ridge: float) -> np.ndarray:
    """``(F_aa + ridge I)^{-1} F_aa [Re; Im]`` mapped back to a complex vector."""
    T = alpha_hat.size
    v = np.concatenate([alpha_hat.real, alpha_hat.imag])
    out = np.linalg.solve(fim_aa + ridge * np.eye(2 * T), fim_aa @ v)
    return out[:T] + 1j * out[T:]


def estimate_dsm(obs: ObservationSet, scenario: Scenario, cfg: EstimatorConfig | None = None,
                 rng: np.random.Generator | None = None, init: np.ndarray | None = None) -> EstimationResult:
    """Per-scatterer MAP over ``3T`` coordinates, then the closed-form structured fit.

    ``init`` (length ``3T``) overrides the stage-one starting coordinates.
    """
    t0 = time.perf_counter()
    cfg = cfg or EstimatorConfig()
    geom = scenario.geometry
    grid_nom = scenario.grid
    T = grid_nom.size
    sigma_a2 = scenario.prior.variance
    stats = _stats_from_observations(obs, sigma_a2)
    res = parameter_resolutions(geom, scenario.params.phi0)
    scale = np.concatenate([np.full(T, res[0]), np.full(T, res[2]), np.full(T, res[4])])

    def resp_at(v):
        return scatterer_responses(v[:T], v[T:2 * T], v[2 * T:], geom)

    def fun(v):
        if np.any(v[2 * T:] <= 0):
            return np.inf, np.zeros_like(v)
        J, g, _ = _semi_linear(stats, resp_at(v))
        return J, g

    if init is not None:
        v0 = np.asarray(init, float)
    else:
        if cfg.init_mode == "blind":
            _, psm_value, _ = _psm_cost(stats, scenario)
            xi0 = initial_parameters(scenario, cfg, rng, psm_value)
        else:
            xi0 = initial_parameters(scenario, cfg, None)
        v0 = grid_nom.jacobian() @ xi0
        if cfg.init_mode == "benchmark" and rng is not None and cfg.init_perturbation:
            v0 = v0 + rng.uniform(-1.0, 1.0, 3 * T) * cfg.init_perturbation * scale
    out = armijo_descent(fun, v0, scale, cfg)
    v_hat = out.x
    resp = resp_at(v_hat)
    _, _, alpha_hat = _semi_linear(stats, resp, with_grad=False)
    cov = obs.covariance if obs.covariance is not None else obs.statistics()[0] / obs.n_symbols
    # both closed forms are invariant to a common scale of the information, so unit noise is used
    F_gg = fisher.assemble_dsm(fisher.dsm_blocks(np.asarray(cov), resp, 1.0))
    xi = dsm_structured_fit(v_hat, F_gg, grid_nom)
    nominal = scenario.params.as_array()
    xi[~grid_nom.active_mask] = nominal[~grid_nom.active_mask]
    F_aa = fisher.rcs_fim(cov, resp, obs.n_symbols, 1.0)
    alpha = dsm_rcs_shrinkage(alpha_hat, F_aa, obs.noise_var / sigma_a2)
    return EstimationResult(xi, alpha, "DSM", out.trace, out.iterations, out.status,
                            time.perf_counter() - t0, v0,
                            {"coordinates": v_hat, "alpha": alpha_hat, "fim": F_gg})


ESTIMATORS = {"psm": estimate_psm, "ucm": estimate_ucm, "dsm": estimate_dsm}


def estimate(model: str, obs: ObservationSet, scenario: Scenario, cfg: EstimatorConfig | None = None,
             rng: np.random.Generator | None = None) -> EstimationResult:
    try:
        fn = ESTIMATORS[model.lower()]
    except KeyError:
        raise ValueError(f"unknown estimator {model!r}") from None
    return fn(obs, scenario, cfg, rng)


def parameter_errors(result: EstimationResult, scenario: Scenario) -> dict[str, float]:
    """Signed errors of the six parameters, keyed by parameter name."""
    err = result.params - scenario.params.as_array()
    return dict(zip(PARAM_NAMES, err))


__all__ = [
    "ObservationSet", "EstimatorConfig", "EstimationResult", "DescentResult", "IllConditionedError",
    "simulate_observations", "draw_rcs", "precoders_from_solution", "precoders_from_covariance",
    "dictionary", "dictionary_derivatives", "alpha_map", "map_objective_and_gradient",
    "armijo_descent", "initial_parameters", "estimate_psm", "estimate_ucm", "estimate_dsm",
    "ucm_channel_estimates", "dsm_structured_fit", "dsm_rcs_shrinkage", "estimate",
    "parameter_errors",
]
