"""CRB-minimizing transmit designs under SINR, power and range-sidelobe constraints.

All programs are posed in normalized units: covariances are divided by the
power budget ``P`` and user channels by ``sigma_c / sqrt(P)``, so every
constraint row is O(1).  The transmit covariance on subcarrier ``n`` is
``R_n = D_n + sum_k R_{n,k}`` with ``D_n`` the sensing part; both are Hermitian
PSD variables, which makes ``R_n - sum_k R_{n,k} >= 0`` hold by construction.
"""
from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import fisher
from .ambiguity import (
    SidelobeSet,
    build_dsm_sidelobe_sets,
    build_sidelobe_set,
    normalized_sidelobe,
    normalized_sidelobe_dsm,
    range_phases,
)
from .conic import ConicProblem, ProblemBuilder, SolverSettings, hermitian_functional, solve, svec
from .conic.problem import entry_selectors
from .fisher import CovarianceSet
from .model import ScattererGrid, grid_responses, scatterer_responses
from .scenario import Scenario

log = logging.getLogger(__name__)


class BeamformingInfeasible(RuntimeError):
    """Raised when the SINR targets cannot be met within the power budget."""


class DegenerateUserError(ValueError):
    pass


# ---------------------------------------------------------------------------
# SINR-only feasibility


def min_power_sinr(h: np.ndarray, gamma: np.ndarray, noise: float, max_iter: int = 2000,
                   tol: float = 1e-12) -> float:
    """Minimum total power meeting SINR targets on one subcarrier (no sensing power).

    Fixed-point iteration on the virtual uplink powers; returns ``inf`` when it
    diverges, i.e. when the targets are not jointly achievable at any power.
    """
    K, Nt = h.shape
    if K == 0:
        return 0.0
    hn = h / math.sqrt(noise)
    lam = np.zeros(K)
    for _ in range(max_iter):
        M = np.eye(Nt) + np.einsum("k,ki,kj->ij", lam, hn, hn.conj())
        q = np.einsum("ki,ij,kj->k", hn.conj(), np.linalg.inv(M), hn).real
        new = 1.0 / ((1 + 1 / gamma) * q)
        if not np.all(np.isfinite(new)) or new.max() > 1e15:
            return math.inf
        if np.max(np.abs(new - lam)) <= tol * max(1.0, new.max()):
            lam = new
            break
        lam = new
    # channels are noise-normalized, so the virtual uplink powers already sum to watts
    return float(lam.sum())


def check_sinr_feasibility(scenario: Scenario) -> float:
    """Total minimum power for the SINR targets; raises if it exceeds the budget."""
    H = scenario.channels
    gamma = scenario.sinr_linear
    total = sum(min_power_sinr(H[n], gamma[n], scenario.noise_comm_w) for n in range(H.shape[0]))
    if total > scenario.power_w:
        raise BeamformingInfeasible(
            f"SINR targets need at least {total:.4g} W with zero sensing power, budget is "
            f"{scenario.power_w:.4g} W")
    return total


# ---------------------------------------------------------------------------
# problem assembly


# The beamforming programs have few equality rows, where the interior-point
# method converges in tens of iterations; operator splitting stalls on them.
DESIGN_SETTINGS = SolverSettings(method="interior")


@dataclass(eq=False)
class DesignProblem:
    """A built conic program plus what is needed to read the covariances back."""

    problem: ConicProblem
    model: str
    scenario: Scenario
    crb_scale: float
    sidelobes: list[SidelobeSet]
    build_seconds: float = 0.0


def _declare_covariances(b: ProblemBuilder, N: int, K: int, Nt: int) -> list[list[str]]:
    """Declare ``D_n`` and ``R_{n,k}``; returns the variable names summing to ``R_n`` per subcarrier."""
    parts = []
    for n in range(N):
        names = [b.add_hermitian_psd(f"D{n}", Nt)]
        names += [b.add_hermitian_psd(f"R{n}_{k}", Nt) for k in range(K)]
        parts.append(names)
    return parts


def _add_sinr_and_power(b: ProblemBuilder, scenario: Scenario, parts: list[list[str]]) -> None:
    N, K, Nt = scenario.channels.shape
    H = scenario.channels * math.sqrt(scenario.power_w / scenario.noise_comm_w)
    gamma = scenario.sinr_linear
    if K:
        b.add_nonneg("sinr_slack", N * K)
    for n in range(N):
        for k in range(K):
            hh = np.outer(H[n, k], H[n, k].conj())
            g = hermitian_functional(hh)
            terms = {parts[n][0]: -g}
            for j in range(K):
                terms[parts[n][1 + j]] = g / gamma[n, k] if j == k else -g
            slack = np.zeros(N * K)
            slack[n * K + k] = -1.0
            terms["sinr_slack"] = slack
            b.add_row(terms, 1.0)
    b.add_nonneg("power_slack", 1)
    tr = hermitian_functional(np.eye(Nt))
    terms = {name: tr for names in parts for name in names}
    terms["power_slack"] = np.ones(1)
    b.add_row(terms, 1.0)


def _add_sidelobes(b: ProblemBuilder, scenario: Scenario, parts, a: np.ndarray, sset: SidelobeSet,
                   n_scatterers: int, eps: float, tag: str) -> None:
    """``|sum_n e^{-j psi_n} Tr(R_n B_n)| <= sqrt(eps)`` with ``B_n = sum_t a a^H / (N_t T)``."""
    geom = scenario.geometry
    if not len(sset):
        return
    Bn = np.einsum("nti,ntj->nij", a, a.conj()) / (geom.n_tx * n_scatterers)
    phases = range_phases(geom, sset.d_ref, np.array(sset.ranges))
    for i, ph in enumerate(phases):
        name = b.add_soc(f"sl_{tag}_{i}", 3)
        b.add_row({name: [1.0, 0.0, 0.0]}, math.sqrt(eps))
        re_terms = {name: [0.0, 1.0, 0.0]}
        im_terms = {name: [0.0, 0.0, 1.0]}
        for n in range(geom.n_subcarriers):
            C = ph[n] * Bn[n]
            g_re = hermitian_functional(C)
            g_im = hermitian_functional(-1j * C)
            for var in parts[n]:
                re_terms[var] = -g_re
                im_terms[var] = -g_im
        b.add_row(re_terms, 0.0)
        b.add_row(im_terms, 0.0)


def _add_schur(b: ProblemBuilder, parts, coef: np.ndarray, weights: np.ndarray, power: float,
               res: np.ndarray) -> float:
    """Epigraph ``[[F_hat, W^{1/2}], [W^{1/2}, Q]] >= 0`` with ``F_hat = kappa D F D``.

    ``coef`` holds the FIM coefficient matrices (N, p, p, Nt, Nt) of the active
    parameters, ``res`` their resolution scales.  Returns ``kappa`` so that the
    weighted CRB equals ``kappa * Tr(Q)``.
    """
    N, p = coef.shape[0], coef.shape[1]
    Nt = coef.shape[-1]
    Dm = np.outer(res, res)
    # normalization: unit mean diagonal of F_hat at an isotropic full-power design
    iso = power * np.eye(Nt) / (N * Nt)
    F0 = np.einsum("ab,nijba->ij", iso, coef).real * Dm
    kappa = p / max(np.trace(F0), 1e-300)
    scaled = coef * (power * kappa * Dm)[None, :, :, None, None]
    side = 2 * p
    S = b.add_psd("schur", side)
    w_half = np.sqrt(weights * res ** 2)
    for i in range(p):
        for j in range(i, p):
            E = np.zeros((side, side))
            E[i, j] = E[j, i] = 0.5 if i != j else 1.0
            terms = {S: svec(E)}
            g = hermitian_functional(scaled[:, i, j])
            for n in range(N):
                for var in parts[n]:
                    terms[var] = -g[n]
            b.add_row(terms, 0.0)
    for i in range(p):
        for j in range(p):
            E = np.zeros((side, side))
            E[i, p + j] = E[p + j, i] = 0.5
            b.add_row({S: svec(E)}, w_half[i] if i == j else 0.0)
    Eq = np.zeros((side, side))
    Eq[p:, p:] = np.eye(p)
    b.add_cost(S, svec(Eq))
    return kappa


def _dsm_weights(scenario: Scenario, T: int) -> np.ndarray:
    return fisher.default_dsm_weights(scenario.weight_diag, T)


def build_psm_problem(scenario: Scenario, grid: ScattererGrid | None = None,
                      sidelobes: SidelobeSet | None = None, weights=None) -> DesignProblem:
    """Parametric-model design: minimize the weighted six-parameter CRB."""
    t0 = time.perf_counter()
    grid = scenario.grid if grid is None else grid
    geom = scenario.geometry
    weights = scenario.weight_diag if weights is None else np.asarray(weights, float)
    if sidelobes is None:
        sidelobes = build_sidelobe_set(geom, scenario.params, scenario.sidelobes.count,
                                       scenario.sidelobes.spacing_cells, scenario.epsilon_psm)
    N, K, Nt = scenario.channels.shape
    b = ProblemBuilder()
    parts = _declare_covariances(b, N, K, Nt)
    _add_sinr_and_power(b, scenario, parts)
    resp = grid_responses(grid, geom)
    _add_sidelobes(b, scenario, parts, resp.a, sidelobes, grid.size, sidelobes.epsilon, "psm")
    act = np.flatnonzero(grid.active_mask)
    coef = fisher.psm_coefficient_matrices(grid, geom, scenario.prior, scenario.noise_sense_w, resp)
    coef = coef[:, act][:, :, act]
    kappa = _add_schur(b, parts, coef, weights[act], scenario.power_w, scenario.resolutions[act])
    prob = b.build(normalize_rows=True)
    return DesignProblem(prob, "PSM", scenario, kappa, [sidelobes], time.perf_counter() - t0)


def build_dsm_problem(scenario: Scenario, grid: ScattererGrid | None = None,
                      sidelobes: list[SidelobeSet] | None = None, weights=None) -> DesignProblem:
    """Discrete-scatterer design: minimize the weighted 3T-coordinate CRB with per-layer sidelobes."""
    t0 = time.perf_counter()
    grid = scenario.grid if grid is None else grid
    geom = scenario.geometry
    T = grid.size
    weights = _dsm_weights(scenario, T) if weights is None else np.asarray(weights, float)
    if sidelobes is None:
        sidelobes = build_dsm_sidelobe_sets(geom, grid, scenario.sidelobes.count,
                                            scenario.sidelobes.spacing_cells, scenario.epsilon_dsm)
    N, K, Nt = scenario.channels.shape
    b = ProblemBuilder()
    parts = _declare_covariances(b, N, K, Nt)
    _add_sinr_and_power(b, scenario, parts)
    resp = grid_responses(grid, geom)
    for sset in sidelobes:
        idx = grid.layer(sset.layer)
        _add_sidelobes(b, scenario, parts, resp.a[:, idx], sset, len(idx), sset.epsilon, f"dsm{sset.layer}")
    per = fisher.dsm_coefficient_matrices(grid, geom, scenario.prior, scenario.noise_sense_w, resp)
    # (N, T, 3, 3, Nt, Nt) -> dense (N, 3T, 3T, Nt, Nt) ordered [theta.., phi.., d..]
    coef = np.zeros((N, 3 * T, 3 * T, Nt, Nt), dtype=complex)
    tt = np.arange(T)
    for i in range(3):
        for j in range(3):
            coef[:, i * T + tt, j * T + tt] = per[:, :, i, j]
    res = np.repeat(scenario.resolutions[[0, 2, 4]], T)
    kappa = _add_schur(b, parts, coef, weights, scenario.power_w, res)
    prob = b.build(normalize_rows=True)
    return DesignProblem(prob, "DSM", scenario, kappa, list(sidelobes), time.perf_counter() - t0)


def build_ucm_problem(scenario: Scenario) -> DesignProblem:
    """Unstructured-model design: minimize ``sum_n Tr(R_n^{-1})`` (no sidelobe control)."""
    t0 = time.perf_counter()
    N, K, Nt = scenario.channels.shape
    b = ProblemBuilder()
    parts = _declare_covariances(b, N, K, Nt)
    _add_sinr_and_power(b, scenario, parts)
    side = 2 * Nt
    for n in range(N):
        S = b.add_hermitian_psd(f"S{n}", side)
        for i in range(Nt):
            for j in range(i, Nt):
                sel = entry_selectors(side, i, j)
                sub = entry_selectors(Nt, i, j)
                for kind in range(2 if i != j else 1):
                    terms = {S: hermitian_functional(sel[kind])}
                    g = hermitian_functional(sub[kind])
                    for var in parts[n]:
                        terms[var] = -g
                    b.add_row(terms, 0.0)
        for i in range(Nt):
            for j in range(Nt):
                sel = entry_selectors(side, i, Nt + j)
                b.add_row({S: hermitian_functional(sel[0])}, 1.0 if i == j else 0.0)
                b.add_row({S: hermitian_functional(sel[1])}, 0.0)
        Eq = np.zeros((side, side), dtype=complex)
        Eq[Nt:, Nt:] = np.eye(Nt)
        b.add_cost(S, hermitian_functional(Eq))
    prob = b.build(normalize_rows=True)
    g = scenario.geometry
    # Tr(C_G) = (sigma^2 N_r / L) sum Tr(R^{-1}) and R = P * R_tilde
    kappa = scenario.noise_sense_w * g.n_rx / (g.n_symbols * scenario.power_w)
    return DesignProblem(prob, "UCM", scenario, kappa, [], time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# solution handling


@dataclass(eq=False)
class ConstraintReport:
    sinr_db: np.ndarray
    sinr_target_db: np.ndarray
    power: float
    power_budget: float
    sidelobe_ratios: list[np.ndarray]
    sidelobe_epsilons: list[float]
    weighted_crb: float

    @property
    def sinr_ok(self) -> bool:
        return bool(np.all(self.sinr_db >= self.sinr_target_db - 0.01))

    @property
    def power_ok(self) -> bool:
        return self.power <= self.power_budget * (1 + 1e-6)

    @property
    def sidelobes_ok(self) -> bool:
        return all(np.all(r <= e * (1 + 1e-3)) for r, e in zip(self.sidelobe_ratios, self.sidelobe_epsilons))

    @property
    def failed_users(self) -> list[tuple[int, int]]:
        bad = np.argwhere(self.sinr_db < self.sinr_target_db - 0.01)
        return [tuple(int(v) for v in row) for row in bad]

    @property
    def ok(self) -> bool:
        return self.sinr_ok and self.power_ok and self.sidelobes_ok


@dataclass(eq=False)
class BeamformerSolution:
    covariances: CovarianceSet
    beamformers: np.ndarray  # (N, K, Nt)
    sensing_factors: list[np.ndarray]
    objective: float
    model: str
    status: str
    solve_seconds: float = 0.0
    build_seconds: float = 0.0
    clamp: float = 0.0
    report: ConstraintReport | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def R(self) -> np.ndarray:
        return self.covariances.R


def recover_solution(R: np.ndarray, R_users: np.ndarray, scenario: Scenario) -> tuple:
    """Rank-one user beamformers and the sensing factor from relaxed covariances.

    Returns ``(w, sensing_factors, R_users_rank_one, clamp)``; ``R`` itself is
    preserved, so each user's useful and total received power are unchanged.
    """
    H = scenario.channels
    N, K, Nt = H.shape
    w = np.zeros((N, K, Nt), dtype=complex)
    Ru1 = np.zeros_like(R_users)
    factors = []
    clamp = 0.0
    for n in range(N):
        for k in range(K):
            h = H[n, k]
            Rk = R_users[n, k]
            q = float(np.real(h.conj() @ Rk @ h))
            scale = max(np.abs(Rk).max(initial=0.0), 1e-300) * np.linalg.norm(h) ** 2
            if q <= 1e-14 * scale or q <= 0:
                raise DegenerateUserError(f"user {k} on subcarrier {n} receives no useful power")
            w[n, k] = Rk @ h / math.sqrt(q)
            Ru1[n, k] = np.outer(w[n, k], w[n, k].conj())
        resid = R[n] - Ru1[n].sum(axis=0)
        resid = 0.5 * (resid + resid.conj().T)
        lam, U = np.linalg.eigh(resid)
        if lam.min() < 0:
            clamp = max(clamp, float(-lam.min()))
        keep = lam > 1e-12 * max(lam.max(), 1e-300)
        factors.append(U[:, keep] * np.sqrt(lam[keep]))
    if clamp > 0:
        log.debug("clamped sensing residual eigenvalues down to %.3g", -clamp)
    return w, factors, Ru1, clamp


def sinr_from_covariances(R: np.ndarray, R_users: np.ndarray, H: np.ndarray, noise: float) -> np.ndarray:
    """Per-(n, k) SINR with everything except the user's own stream counted as interference."""
    useful = np.einsum("nki,nkij,nkj->nk", H.conj(), R_users, H).real
    total = np.einsum("nki,nij,nkj->nk", H.conj(), R, H).real
    return useful / np.maximum(total - useful + noise, 1e-300)


def sinr_from_beamformers(w: np.ndarray, factors: list[np.ndarray], H: np.ndarray, noise: float) -> np.ndarray:
    N, K, _ = H.shape
    out = np.zeros((N, K))
    for n in range(N):
        cols = np.concatenate([w[n].T, factors[n]], axis=1) if K else factors[n]
        gains = np.abs(H[n].conj() @ cols) ** 2  # (K, columns)
        for k in range(K):
            useful = gains[k, k]
            out[n, k] = useful / (gains[k].sum() - useful + noise)
    return out


def _db(x):
    with np.errstate(divide="ignore"):
        return 10 * np.log10(x)


def verify_solution(sol: BeamformerSolution, scenario: Scenario,
                    sidelobes: list[SidelobeSet] | None = None) -> ConstraintReport:
    """Evaluate every constraint on a (recovered) solution; failures are reported, not raised."""
    H = scenario.channels
    N, K, _ = H.shape
    if K:
        sinr = sinr_from_beamformers(sol.beamformers, sol.sensing_factors, H, scenario.noise_comm_w)
    else:
        sinr = np.zeros((N, 0))
    target = np.broadcast_to(_db(scenario.sinr_linear), sinr.shape)
    grid = scenario.grid
    geom = scenario.geometry
    ratios, eps = [], []
    for sset in sidelobes or []:
        d = np.array(sset.ranges)
        if not d.size:
            continue
        if sset.layer is None:
            ratios.append(np.atleast_1d(normalized_sidelobe(sol.R, grid, geom, d, scenario.power_w)))
        else:
            ratios.append(np.atleast_1d(normalized_sidelobe_dsm(sol.R, grid, geom, sset.layer, d,
                                                                scenario.power_w)))
        eps.append(sset.epsilon)
    fim = fisher.psm_geometric_fim(sol.R, grid, scenario.prior, geom, scenario.noise_sense_w)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", fisher.SingularFimWarning)
        crb = fisher.weighted_crb(fim, scenario.weight_diag)
    return ConstraintReport(_db(sinr), np.array(target), float(np.einsum("nii->", sol.R).real),
                            scenario.power_w, ratios, eps, crb)


def solve_design(design: DesignProblem, settings: SolverSettings | None = None,
                 check_feasibility: bool = True) -> BeamformerSolution:
    """Solve a built design, recover rank-one beamformers and verify the result."""
    scenario = design.scenario
    if check_feasibility:
        check_sinr_feasibility(scenario)
    t0 = time.perf_counter()
    res = solve(design.problem, settings or DESIGN_SETTINGS)
    elapsed = time.perf_counter() - t0
    if res.status == "infeasible":
        minp = check_sinr_feasibility(scenario)
        raise BeamformingInfeasible(
            f"{design.model} design infeasible (SINR-only minimum power {minp:.4g} W); "
            "sidelobe thresholds may be too tight")
    N, K, Nt = scenario.channels.shape
    P = scenario.power_w
    prob = design.problem
    D = np.stack([prob.value(res.x, f"D{n}") for n in range(N)]) * P
    Ru = np.zeros((N, K, Nt, Nt), dtype=complex)
    for n in range(N):
        for k in range(K):
            Ru[n, k] = prob.value(res.x, f"R{n}_{k}") * P
    R = D + Ru.sum(axis=1)
    power = float(np.einsum("nii->", R).real)
    if power > P:
        shrink = P / power
        R, Ru = R * shrink, Ru * shrink
    w, factors, Ru1, clamp = recover_solution(R, Ru, scenario) if K else (
        np.zeros((N, 0, Nt), complex), _sensing_only_factors(R), Ru, 0.0)
    sol = BeamformerSolution(
        covariances=CovarianceSet(R, Ru1),
        beamformers=w, sensing_factors=factors,
        objective=design.crb_scale * res.objective,
        model=design.model, status=res.status, solve_seconds=elapsed,
        build_seconds=design.build_seconds, clamp=clamp,
        diagnostics={"iterations": res.iterations, "residual": res.max_residual,
                     "relaxed_user_covariances": Ru, **res.diagnostics},
    )
    sol.report = verify_solution(sol, scenario, design.sidelobes)
    return sol


def _sensing_only_factors(R: np.ndarray) -> list[np.ndarray]:
    out = []
    for Rn in R:
        lam, U = np.linalg.eigh(0.5 * (Rn + Rn.conj().T))
        keep = lam > 1e-12 * max(lam.max(), 1e-300)
        out.append(U[:, keep] * np.sqrt(lam[keep]))
    return out


def design(scenario: Scenario, model: str = "psm", sidelobes: bool = True,
           settings: SolverSettings | None = None) -> BeamformerSolution:
    """Build and solve one design; ``sidelobes=False`` drops the ambiguity constraints."""
    model = model.lower()
    if model == "psm":
        sset = None
        if not sidelobes:
            sset = build_sidelobe_set(scenario.geometry, scenario.params, 0, 1.0, scenario.epsilon_psm)
        prob = build_psm_problem(scenario, sidelobes=sset)
    elif model == "dsm":
        sets = None
        if not sidelobes:
            sets = build_dsm_sidelobe_sets(scenario.geometry, scenario.grid, 0, 1.0, scenario.epsilon_dsm)
        prob = build_dsm_problem(scenario, sidelobes=sets)
    elif model == "ucm":
        prob = build_ucm_problem(scenario)
    else:
        raise ValueError(f"unknown model {model!r}")
    return solve_design(prob, settings)


def beampattern(R: np.ndarray, scenario: Scenario, theta: np.ndarray, phi: float | np.ndarray) -> np.ndarray:
    """Transmit beampattern ``sum_n a^H R_n a`` over an azimuth grid (and optional elevation grid)."""
    geom = scenario.geometry
    theta = np.atleast_1d(np.asarray(theta, float))
    phi = np.atleast_1d(np.asarray(phi, float))
    TH, PH = np.meshgrid(theta, phi, indexing="ij")
    a = scatterer_responses(TH.ravel(), PH.ravel(), np.ones(TH.size), geom).a
    vals = np.einsum("ntx,nxy,nty->t", a.conj(), R, a).real
    return vals.reshape(TH.shape)


def uniform_design(scenario: Scenario) -> np.ndarray:
    """Isotropic full-power covariances (a reference point, not an optimized design)."""
    g = scenario.geometry
    return np.broadcast_to(scenario.power_w * np.eye(g.n_tx) / (g.n_subcarriers * g.n_tx),
                           (g.n_subcarriers, g.n_tx, g.n_tx)).astype(complex)
