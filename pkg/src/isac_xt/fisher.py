"""Fisher information and weighted CRBs for the three target models.

All geometric FIMs use the hybrid Bayesian form: the RCS coefficients are
averaged out under their Gaussian prior, which zeroes the geometry/RCS cross
blocks so the geometric bound is the inverse of the geometric block alone.

Parameter ordering is ``[theta0, delta_theta, phi0, delta_phi, d0, delta_d]``
for the parametric model and ``[theta_1..T, phi_1..T, d_1..T]`` for the
discrete scatterer model.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .model import (
    ArrayGeometry,
    RcsPrior,
    Responses,
    ScattererGrid,
    grid_responses,
)

Model = Literal["PSM", "DSM", "UCM", "DSM-mapped", "UCM-mapped"]


class SingularFimWarning(RuntimeWarning):
    pass


@dataclass(frozen=True, eq=False)
class CovarianceSet:
    """Per-subcarrier transmit covariances and optional per-user covariances."""

    R: np.ndarray
    R_users: np.ndarray | None = None

    def __post_init__(self):
        R = np.asarray(self.R, dtype=complex)
        if R.ndim != 3 or R.shape[1] != R.shape[2]:
            raise ValueError("R must have shape (N, Nt, Nt)")
        object.__setattr__(self, "R", R)
        if self.R_users is not None:
            Ru = np.asarray(self.R_users, dtype=complex)
            if Ru.ndim != 4 or Ru.shape[0] != R.shape[0] or Ru.shape[2:] != R.shape[1:]:
                raise ValueError("R_users must have shape (N, K, Nt, Nt)")
            object.__setattr__(self, "R_users", Ru)

    @property
    def total_power(self) -> float:
        return float(np.einsum("nii->", self.R).real)

    def check(self, tol: float = 1e-8, power: float | None = None) -> list[str]:
        """Return a list of violated invariants (empty when valid)."""
        problems = []
        mats = [self.R] + ([self.R_users.reshape(-1, *self.R.shape[1:])] if self.R_users is not None else [])
        for label, block in zip(("R", "R_users"), mats):
            if np.abs(block - block.conj().transpose(0, 2, 1)).max(initial=0) > tol * max(1.0, np.abs(block).max(initial=0)):
                problems.append(f"{label} not Hermitian")
            scale = max(1.0, np.abs(block).max(initial=0))
            if len(block) and np.linalg.eigvalsh(block).min() < -tol * scale:
                problems.append(f"{label} not PSD")
        if power is not None and self.total_power > power * (1 + 1e-6):
            problems.append("total power exceeds budget")
        return problems


def _as_cov(cov) -> np.ndarray:
    if isinstance(cov, CovarianceSet):
        return cov.R
    return np.asarray(cov, dtype=complex)


@dataclass(frozen=True, eq=False)
class FimBlocks:
    """Geometric FIM with the model it came from and the identifiable-parameter mask."""

    f_gg: np.ndarray
    model: str
    active: np.ndarray

    @property
    def reduced(self) -> np.ndarray:
        idx = np.flatnonzero(self.active)
        return self.f_gg[np.ix_(idx, idx)]

    @property
    def singular(self) -> bool:
        F = self.reduced
        if F.size == 0:
            return True
        eig = np.linalg.eigvalsh(F)
        return bool(eig.min() <= 1e-12 * max(eig.max(), 1e-300))

    def crb(self) -> np.ndarray:
        """Inverse FIM embedded in the full parameter space; inactive rows/cols are NaN."""
        n = len(self.active)
        out = np.full((n, n), np.nan)
        idx = np.flatnonzero(self.active)
        if self.singular:
            out[np.ix_(idx, idx)] = np.inf
        else:
            out[np.ix_(idx, idx)] = np.linalg.inv(self.reduced)
        return out


# ---------------------------------------------------------------------------
# derivative building blocks


def _bases(resp: Responses):
    """Transmit/receive bases ``[v, dv/dtheta, dv/dphi]`` stacked on the last axis."""
    A = np.stack([resp.a, resp.a_theta, resp.a_phi], axis=-1)
    B = np.stack([resp.b, resp.b_theta, resp.b_phi], axis=-1)
    return A, B


def _coefficient_tensors(resp: Responses) -> np.ndarray:
    """K[n, t, i] (3x3) with ``dV_{t,n}/d(coord_i) = sum_pq K[p,q] B_p A_q^H``.

    Coordinates are the scatterer azimuth, elevation and range.
    """
    N, T = resp.f.shape
    K = np.zeros((N, T, 3, 3, 3), dtype=complex)
    K[:, :, 0, 1, 0] = resp.f
    K[:, :, 0, 0, 1] = resp.f
    K[:, :, 1, 2, 0] = resp.f
    K[:, :, 1, 0, 2] = resp.f
    K[:, :, 2, 0, 0] = resp.df
    return K


def scatterer_v_derivatives(resp: Responses, t: int, n: int) -> np.ndarray:
    """Explicit ``dV_{t,n}`` w.r.t. ``(theta_t, phi_t, d_t)``, shape (3, N_r, N_t)."""
    f, df = resp.f[n, t], resp.df[n, t]
    a, at, ap = resp.a[n, t], resp.a_theta[n, t], resp.a_phi[n, t]
    b, bt, bp = resp.b[n, t], resp.b_theta[n, t], resp.b_phi[n, t]
    return np.stack([
        f * (np.outer(bt, a.conj()) + np.outer(b, at.conj())),
        f * (np.outer(bp, a.conj()) + np.outer(b, ap.conj())),
        df * np.outer(b, a.conj()),
    ])


def psm_v_derivatives(grid: ScattererGrid, t: int, n: int, geom: ArrayGeometry,
                      resp: Responses | None = None) -> np.ndarray:
    """The six matrices ``dV_{t,n}/dxi_i`` for the parametric model, shape (6, N_r, N_t).

    ``t`` is one-based.  Extent derivatives are the center derivatives scaled
    by the scatterer's normalized offset.
    """
    if not 1 <= t <= grid.size:
        raise ValueError(f"scatterer index {t} outside 1..{grid.size}")
    resp = grid_responses(grid, geom) if resp is None else resp
    i = t - 1
    c = scatterer_v_derivatives(resp, i, n)
    return np.stack([c[0], grid.u[i] * c[0], c[1], grid.v[i] * c[1], c[2], grid.w[i] * c[2]])


def fim_scale(L: int, prior: RcsPrior | float, sigma_s2: float) -> float:
    var = prior.variance if isinstance(prior, RcsPrior) else float(prior)
    return 2.0 * L * var / sigma_s2


def _offset_weights(grid: ScattererGrid) -> np.ndarray:
    """(T, 6) multiplier of the scatterer derivative feeding each PSM parameter."""
    one = np.ones(grid.size)
    return np.stack([one, grid.u, one, grid.v, one, grid.w], axis=1)


_COORD_OF_PARAM = np.array([0, 0, 1, 1, 2, 2])


def psm_coefficient_matrices(grid: ScattererGrid, geom: ArrayGeometry, prior: RcsPrior,
                             sigma_s2: float, resp: Responses | None = None) -> np.ndarray:
    """Coefficient matrices ``C[n, i, j]`` (N_t x N_t) with ``F(i,j) = sum_n Re Tr(R_n C[n,i,j])``.

    Returns an array of shape (N, 6, 6, N_t, N_t).
    """
    resp = grid_responses(grid, geom) if resp is None else resp
    A, B = _bases(resp)
    K = _coefficient_tensors(resp)
    Gb = np.einsum("ntrp,ntrq->ntpq", B.conj(), B)  # receive Gram, (N,T,3,3)
    KK = K[:, :, _COORD_OF_PARAM] * _offset_weights(grid)[None, :, :, None, None]
    # dV_i^H dV_j = A (K_i^H Gb K_j) A^H
    M = np.einsum("ntipa,ntpq,ntjqb->ntijab", KK.conj(), Gb, KK)
    C = np.einsum("ntxa,ntijab,ntyb->nijxy", A, M, A.conj())
    return fim_scale(geom.n_symbols, prior, sigma_s2) * C


def fim_from_coefficients(R: np.ndarray, C: np.ndarray) -> np.ndarray:
    """``F(i,j) = sum_n Re Tr(R_n C[n,i,j])`` for stacked coefficient matrices."""
    F = np.einsum("nab,nijba->ij", R, C).real
    return 0.5 * (F + F.T)


def psm_geometric_fim(cov, grid: ScattererGrid, prior: RcsPrior, geom: ArrayGeometry,
                      sigma_s2: float, resp: Responses | None = None) -> FimBlocks:
    R = _as_cov(cov)
    C = psm_coefficient_matrices(grid, geom, prior, sigma_s2, resp)
    return FimBlocks(fim_from_coefficients(R, C), "PSM", grid.active_mask)


def dsm_blocks(R: np.ndarray, resp: Responses, scale: float) -> np.ndarray:
    """Per-scatterer 3x3 FIM blocks over ``(theta_t, phi_t, d_t)``, shape (T, 3, 3)."""
    A, B = _bases(resp)
    K = _coefficient_tensors(resp)
    Gb = np.einsum("ntrp,ntrq->ntpq", B.conj(), B)
    S = np.einsum("ntxa,nxy,ntyb->ntab", A.conj(), R, A)  # A^H R A
    M = np.einsum("ntipa,ntpq,ntjqb->ntijab", K.conj(), Gb, K)
    blocks = scale * np.einsum("ntab,ntijba->tij", S, M).real
    return 0.5 * (blocks + blocks.transpose(0, 2, 1))


def dsm_coefficient_matrices(grid: ScattererGrid, geom: ArrayGeometry, prior: RcsPrior,
                             sigma_s2: float, resp: Responses | None = None) -> np.ndarray:
    """Per-scatterer coefficient matrices, shape (N, T, 3, 3, N_t, N_t)."""
    resp = grid_responses(grid, geom) if resp is None else resp
    A, B = _bases(resp)
    K = _coefficient_tensors(resp)
    Gb = np.einsum("ntrp,ntrq->ntpq", B.conj(), B)
    M = np.einsum("ntipa,ntpq,ntjqb->ntijab", K.conj(), Gb, K)
    C = np.einsum("ntxa,ntijab,ntyb->ntijxy", A, M, A.conj())
    return fim_scale(geom.n_symbols, prior, sigma_s2) * C


def assemble_dsm(blocks: np.ndarray) -> np.ndarray:
    """Place (T, 3, 3) blocks into the 3T x 3T matrix ordered by coordinate type."""
    T = blocks.shape[0]
    F = np.zeros((3 * T, 3 * T))
    idx = np.arange(T)
    for i in range(3):
        for j in range(3):
            F[i * T + idx, j * T + idx] = blocks[:, i, j]
    return F


def dsm_fim(cov, grid: ScattererGrid, prior: RcsPrior, geom: ArrayGeometry, sigma_s2: float,
            resp: Responses | None = None) -> FimBlocks:
    R = _as_cov(cov)
    resp = grid_responses(grid, geom) if resp is None else resp
    blocks = dsm_blocks(R, resp, fim_scale(geom.n_symbols, prior, sigma_s2))
    return FimBlocks(assemble_dsm(blocks), "DSM", np.ones(3 * grid.size, dtype=bool))


def jacobian_dsm(grid: ScattererGrid, full: bool = False) -> np.ndarray:
    """``J_geo`` (3T x 6); with ``full=True`` the (5T x (2T+6)) form with identity on the RCS block."""
    J = grid.jacobian()
    if not full:
        return J
    T = grid.size
    out = np.zeros((5 * T, 2 * T + 6))
    out[:3 * T, :6] = J
    out[3 * T:, 6:] = np.eye(2 * T)
    return out


def weighted_crb(fim: FimBlocks, weights) -> float:
    """``Tr(Lambda F^{-1})`` over the active parameters; ``inf`` when singular."""
    w = np.asarray(weights, dtype=float)
    if w.ndim == 2:
        w = np.diag(w)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    w = w[fim.active]
    if fim.singular:
        warnings.warn(f"{fim.model} FIM is singular on the active parameters; CRB is unbounded",
                      SingularFimWarning, stacklevel=2)
        return float("inf")
    F = fim.reduced
    L = np.linalg.cholesky(F)
    Linv = np.linalg.solve(L, np.eye(len(F)))
    return float(np.sum(w * np.sum(Linv ** 2, axis=0)))


def default_dsm_weights(scenario_weights: np.ndarray, T: int) -> np.ndarray:
    """Per-scatterer weights mirroring the center-parameter weights of the PSM."""
    w = np.asarray(scenario_weights, dtype=float)
    return np.concatenate([np.full(T, w[0]), np.full(T, w[2]), np.full(T, w[4])])


# ---------------------------------------------------------------------------
# unstructured channel model


class UcmFim:
    """FIM of the stacked unstructured responses in factored form.

    Acts on ``G`` of shape (N, N_r, N_t) as ``G_n -> (L / sigma_s^2) G_n R_n``,
    i.e. ``(L/sigma^2)(R_n^T kron I)`` on ``vec(G_n)``; the square matrix is
    never formed.
    """

    def __init__(self, cov, L: int, sigma_s2: float, rank_tol: float = 1e-10):
        self.R = _as_cov(cov)
        self.scale = L / sigma_s2
        eig = np.linalg.eigvalsh(self.R)
        top = np.maximum(eig.max(axis=1), 1e-300)
        self.rank_deficient = np.flatnonzero(eig.min(axis=1) <= rank_tol * top)
        self._Rinv = None

    def apply(self, G: np.ndarray) -> np.ndarray:
        return self.scale * np.einsum("nij,njk->nik", G, self.R)

    def inverse_apply(self, G: np.ndarray) -> np.ndarray:
        if len(self.rank_deficient):
            raise np.linalg.LinAlgError(
                f"transmit covariance rank deficient on subcarriers {self.rank_deficient.tolist()}")
        if self._Rinv is None:
            self._Rinv = np.linalg.inv(self.R)
        return np.einsum("nij,njk->nik", G, self._Rinv) / self.scale

    def sqrt_apply(self, G: np.ndarray) -> np.ndarray:
        """Apply a square-root factor ``F^{1/2}`` (for whitening residuals)."""
        eig, U = np.linalg.eigh(self.R)
        half = np.einsum("nij,nj,nkj->nik", U, np.sqrt(np.maximum(eig, 0)), U.conj())
        return np.sqrt(self.scale) * np.einsum("nij,njk->nik", G, half)

    def trace_crb(self, n_rx: int) -> float:
        """``Tr(C_G) = (sigma^2 N_r / L) sum_n Tr(R_n^{-1})``."""
        if len(self.rank_deficient):
            return float("inf")
        return float(n_rx * np.trace(np.linalg.inv(self.R), axis1=1, axis2=2).real.sum() / self.scale)


def ucm_fim(cov, L: int, sigma_s2: float) -> UcmFim:
    return UcmFim(cov, L, sigma_s2)


def _psm_dG(resp: Responses, grid: ScattererGrid, t: int) -> np.ndarray:
    """``dV_t / dxi_i`` on all subcarriers for one scatterer, shape (6, N, N_r, N_t)."""
    f, df = resp.f[:, t], resp.df[:, t]
    a, at, ap = resp.a[:, t], resp.a_theta[:, t], resp.a_phi[:, t]
    b, bt, bp = resp.b[:, t], resp.b_theta[:, t], resp.b_phi[:, t]
    outer = lambda x, y: np.einsum("ni,nj->nij", x, y.conj())  # noqa: E731
    d_th = f[:, None, None] * (outer(bt, a) + outer(b, at))
    d_ph = f[:, None, None] * (outer(bp, a) + outer(b, ap))
    d_d = df[:, None, None] * outer(b, a)
    return np.stack([d_th, grid.u[t] * d_th, d_ph, grid.v[t] * d_ph, d_d, grid.w[t] * d_d])


def ucm_mapped_fim(cov, grid: ScattererGrid, prior: RcsPrior, geom: ArrayGeometry,
                   sigma_s2: float, resp: Responses | None = None) -> FimBlocks:
    """Geometric block of ``E{2 Re(J_G^H F_G J_G)}``, built one scatterer column block at a time."""
    resp = grid_responses(grid, geom) if resp is None else resp
    FG = ucm_fim(cov, geom.n_symbols, sigma_s2)
    F = np.zeros((6, 6))
    for t in range(grid.size):
        dG = _psm_dG(resp, grid, t)
        applied = np.stack([FG.apply(g) for g in dG])
        # cross-scatterer terms vanish in expectation because E{alpha_t^* alpha_s} = 0
        F += 2 * prior.variance * np.einsum("inab,jnab->ij", dG.conj(), applied).real
    return FimBlocks(0.5 * (F + F.T), "UCM-mapped", grid.active_mask)


def dsm_mapped_fim(cov, grid: ScattererGrid, prior: RcsPrior, geom: ArrayGeometry,
                   sigma_s2: float, resp: Responses | None = None) -> FimBlocks:
    Fd = dsm_fim(cov, grid, prior, geom, sigma_s2, resp).f_gg
    J = jacobian_dsm(grid)
    F = J.T @ Fd @ J
    return FimBlocks(0.5 * (F + F.T), "DSM-mapped", grid.active_mask)


def mapped_geometric_crbs(cov, grid: ScattererGrid, prior: RcsPrior, geom: ArrayGeometry,
                          sigma_s2: float) -> dict[str, np.ndarray]:
    """Geometric CRBs (6 x 6, NaN on inactive parameters) of all three models in PSM coordinates."""
    resp = grid_responses(grid, geom)
    return {
        "PSM": psm_geometric_fim(cov, grid, prior, geom, sigma_s2, resp).crb(),
        "DSM": dsm_mapped_fim(cov, grid, prior, geom, sigma_s2, resp).crb(),
        "UCM": ucm_mapped_fim(cov, grid, prior, geom, sigma_s2, resp).crb(),
    }


def prior_fim(T: int, prior: RcsPrior) -> np.ndarray:
    """Prior information on ``[Re alpha; Im alpha]`` for ``alpha ~ CN(0, var I)``."""
    return (2.0 / prior.variance) * np.eye(2 * T)


def rcs_fim(cov, resp: Responses, L: int, sigma_s2: float) -> np.ndarray:
    """Data information on ``[Re alpha; Im alpha]`` (2T x 2T), prior excluded."""
    R = _as_cov(cov)
    # Gamma[t, s] = L sum_n conj(f_t) f_s (b_t^H b_s) (a_s^H R_n a_t)
    bb = np.einsum("ntr,nsr->nts", resp.b.conj(), resp.b)
    aRa = np.einsum("nsx,nxy,nty->nts", resp.a.conj(), R, resp.a)
    gamma = L * np.einsum("nt,ns,nts,nts->ts", resp.f.conj(), resp.f, bb, aRa)
    T = gamma.shape[0]
    F = np.empty((2 * T, 2 * T))
    F[:T, :T] = gamma.real
    F[:T, T:] = -gamma.imag
    F[T:, :T] = gamma.imag
    F[T:, T:] = gamma.real
    F *= 2.0 / sigma_s2
    return 0.5 * (F + F.T)


def conditional_geometric_crb(cov, grid: ScattererGrid, geom: ArrayGeometry, sigma_s2: float,
                              alpha: np.ndarray, prior: RcsPrior | None = None) -> np.ndarray:
    """Geometric CRB for one fixed RCS realization, with the RCS treated as nuisance.

    Unlike the hybrid bound, the geometry/RCS cross information does not vanish
    here, so the result is the Schur complement of the full FIM.  Averaging this
    over RCS draws gives the bound a matched estimator actually approaches.
    """
    R = _as_cov(cov)
    resp = grid_responses(grid, geom)
    L = geom.n_symbols
    T = grid.size
    derivs = []
    for i in range(6):
        derivs.append(sum(alpha[t] * _psm_dG(resp, grid, t)[i] for t in range(T)))
    V = np.einsum("nt,ntr,ntx->tnrx", resp.f, resp.b, resp.a.conj())
    cols = derivs + [V[t] for t in range(T)] + [1j * V[t] for t in range(T)]
    P = len(cols)
    F = np.empty((P, P))
    applied = [np.einsum("nij,njk->nik", c, R) for c in cols]
    for i in range(P):
        for j in range(i, P):
            F[i, j] = F[j, i] = (2 * L / sigma_s2) * np.einsum("nab,nab->", cols[i].conj(), applied[j]).real
    if prior is not None:
        F[6:, 6:] += prior_fim(T, prior)
    act = np.flatnonzero(np.concatenate([grid.active_mask, np.ones(2 * T, bool)]))
    Fi = np.linalg.inv(F[np.ix_(act, act)])
    out = np.full((6, 6), np.nan)
    g = np.flatnonzero(grid.active_mask)
    k = len(g)
    out[np.ix_(g, g)] = Fi[:k, :k]
    return out
