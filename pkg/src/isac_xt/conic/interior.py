"""Primal-dual interior-point method for :class:`ConicProblem`.

Infeasible-start path following with Nesterov-Todd scaling and a Mehrotra
predictor-corrector step.  Every iteration factors the dense normal matrix
``A W^2 A^T``, whose order is the number of equality rows, so the method
stays cheap for programs with few rows even when a PSD block is large.
Free variables are split into differences of nonnegative pairs.
"""
from __future__ import annotations

import logging

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from ._common import (
    INFEASIBLE,
    MAX_ITER,
    OPTIMAL,
    UNBOUNDED,
    ConicSolution,
    SolverSettings,
    _block_scaling,
    _RowSolver,
)
from .problem import Cones, ConicProblem, svec_indices, svec_size

log = logging.getLogger(__name__)

BACKEND = "interior"


def _smat_batch(v: np.ndarray, side: int) -> np.ndarray:
    rows, cols, scale = svec_indices(side)
    vals = v / scale
    out = np.zeros(v.shape[:-1] + (side, side))
    out[..., rows, cols] = vals
    out[..., cols, rows] = vals
    return out


def _svec_batch(M: np.ndarray) -> np.ndarray:
    rows, cols, scale = svec_indices(M.shape[-1])
    return M[..., rows, cols] * scale


class _ConeSet:
    """Cone bookkeeping for a problem without free variables."""

    def __init__(self, cones: Cones):
        if cones.free:
            raise ValueError("free variables must be split before the interior-point method")
        self.n = cones.dim
        self.nonneg = slice(0, cones.nonneg)
        self.soc: list[tuple[int, int]] = []
        psd: dict[int, list[int]] = {}
        for kind, start, length, side in cones.blocks():
            if kind == "soc":
                self.soc.append((start, length))
            elif kind == "psd":
                psd.setdefault(side, []).append(start)
        # (side, index matrix of shape (blocks, svec length))
        self.psd = [(side, np.asarray(starts)[:, None] + np.arange(svec_size(side))[None, :])
                    for side, starts in sorted(psd.items())]
        self.degree = cones.nonneg + len(self.soc) + sum(side * idx.shape[0] for side, idx in self.psd)

    def identity(self) -> np.ndarray:
        e = np.zeros(self.n)
        e[self.nonneg] = 1.0
        for start, _ in self.soc:
            e[start] = 1.0
        for side, idx in self.psd:
            rows, cols, _ = svec_indices(side)
            e[idx[:, rows == cols]] = 1.0
        return e

    def min_eig(self, v: np.ndarray) -> float:
        """Smallest spectral value of ``v`` over all cones (negative when outside)."""
        vals = [np.inf]
        if v[self.nonneg].size:
            vals.append(v[self.nonneg].min())
        for start, dim in self.soc:
            vals.append(v[start] - np.linalg.norm(v[start + 1:start + dim]))
        for side, idx in self.psd:
            vals.append(np.linalg.eigvalsh(_smat_batch(v[idx], side)).min())
        return float(min(vals))

    def max_step(self, v: np.ndarray, dv: np.ndarray) -> float:
        """Largest ``a`` with ``v + a dv`` in the cone, for ``v`` in the interior."""
        alpha = np.inf
        nn = self.nonneg
        neg = dv[nn] < 0
        if np.any(neg):
            alpha = min(alpha, float(np.min(-v[nn][neg] / dv[nn][neg])))
        for start, dim in self.soc:
            t, u = v[start], v[start + 1:start + dim]
            dt, du = dv[start], dv[start + 1:start + dim]
            a = dt * dt - du @ du
            b = 2 * (t * dt - u @ du)
            c = t * t - u @ u
            roots = np.roots([a, b, c]) if abs(a) > 1e-300 else (np.array([-c / b]) if b else np.array([]))
            roots = roots[np.isreal(roots)].real
            roots = roots[roots > 0]
            if roots.size:
                alpha = min(alpha, float(roots.min()))
            if dt < 0:
                alpha = min(alpha, -t / dt)
        for side, idx in self.psd:
            L = np.linalg.cholesky(_smat_batch(v[idx], side))
            Linv = np.linalg.inv(L)
            D = Linv @ _smat_batch(dv[idx], side) @ np.swapaxes(Linv, -1, -2)
            lmin = np.linalg.eigvalsh(D)[:, 0].min()
            if lmin < 0:
                alpha = min(alpha, -1.0 / lmin)
        return alpha

    def jprod(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        out = np.empty(self.n)
        out[self.nonneg] = u[self.nonneg] * v[self.nonneg]
        for start, dim in self.soc:
            su, sv = u[start:start + dim], v[start:start + dim]
            out[start] = su @ sv
            out[start + 1:start + dim] = su[0] * sv[1:] + sv[0] * su[1:]
        for side, idx in self.psd:
            U, V = _smat_batch(u[idx], side), _smat_batch(v[idx], side)
            UV = U @ V
            out[idx] = _svec_batch(0.5 * (UV + np.swapaxes(UV, -1, -2)))
        return out


def _soc_spectral(a: np.ndarray):
    nu = np.linalg.norm(a[1:])
    if nu > 0:
        u = a[1:] / nu
    else:
        u = np.zeros(a.size - 1)
        u[0] = 1.0
    return a[0] + nu, a[0] - nu, u


def _soc_power(a: np.ndarray, p: float) -> np.ndarray:
    hi, lo, u = _soc_spectral(a)
    fh, fl = hi ** p, lo ** p
    return np.concatenate([[0.5 * (fh + fl)], 0.5 * (fh - fl) * u])


def _soc_quad(a: np.ndarray) -> np.ndarray:
    """Quadratic representation ``2 a a^T - det(a) J``."""
    J = -np.eye(a.size)
    J[0, 0] = 1.0
    return 2 * np.outer(a, a) - (a[0] ** 2 - a[1:] @ a[1:]) * J


class _Scaling:
    """Nesterov-Todd scaling at ``(x, s)``: ``W s = W^{-T} x = lam``."""

    def __init__(self, cones: _ConeSet, x: np.ndarray, s: np.ndarray):
        self.cones = cones
        lam = np.empty(cones.n)
        nn = cones.nonneg
        self.d = np.sqrt(x[nn] / s[nn])
        lam[nn] = np.sqrt(x[nn] * s[nn])
        self.soc = []
        for start, dim in cones.soc:
            xs, ss = x[start:start + dim], s[start:start + dim]
            qx = _soc_quad(_soc_power(xs, 0.5))
            w = qx @ _soc_power(qx @ ss, -0.5)
            W = _soc_quad(_soc_power(w, 0.5))
            Winv = _soc_quad(_soc_power(w, -0.5))
            self.soc.append((W, Winv))
            lam[start:start + dim] = W @ ss
        self.psd = []
        self.lam_diag = []
        for side, idx in cones.psd:
            Lx = np.linalg.cholesky(_smat_batch(x[idx], side))
            Ls = np.linalg.cholesky(_smat_batch(s[idx], side))
            U, sig, Vt = np.linalg.svd(np.swapaxes(Ls, -1, -2) @ Lx)
            V = np.swapaxes(Vt, -1, -2)
            isq = 1.0 / np.sqrt(sig)
            R = Lx @ V * isq[:, None, :]
            Rinv = (np.sqrt(sig)[:, :, None] * Vt) @ np.linalg.inv(Lx)
            self.psd.append((R, Rinv))
            self.lam_diag.append(sig)
            lam[idx] = _svec_batch(sig[:, :, None] * np.eye(side))
        self.lam = lam

    def _apply(self, v, nn_scale, soc_pick, psd_map):
        out = np.empty_like(v)
        nn = self.cones.nonneg
        out[nn] = nn_scale * v[nn]
        for (start, dim), mats in zip(self.cones.soc, self.soc):
            out[start:start + dim] = soc_pick(mats) @ v[start:start + dim]
        for (side, idx), mats in zip(self.cones.psd, self.psd):
            out[idx] = _svec_batch(psd_map(mats, _smat_batch(v[idx], side)))
        return out

    def W(self, v):
        """Dual space to scaled space."""
        return self._apply(v, self.d, lambda m: m[0], lambda m, S: np.swapaxes(m[0], -1, -2) @ S @ m[0])

    def WT(self, v):
        """Scaled space to primal space."""
        return self._apply(v, self.d, lambda m: m[0], lambda m, D: m[0] @ D @ np.swapaxes(m[0], -1, -2))

    def WinvT(self, v):
        """Primal space to scaled space."""
        return self._apply(v, 1.0 / self.d, lambda m: m[1],
                           lambda m, X: m[1] @ X @ np.swapaxes(m[1], -1, -2))

    def lam_solve(self, t: np.ndarray) -> np.ndarray:
        """Solve ``lam o v = t`` for ``v``."""
        out = np.empty_like(t)
        nn = self.cones.nonneg
        out[nn] = t[nn] / self.lam[nn]
        for start, dim in self.cones.soc:
            lm, tt = self.lam[start:start + dim], t[start:start + dim]
            det = lm[0] ** 2 - lm[1:] @ lm[1:]
            v0 = (lm[0] * tt[0] - lm[1:] @ tt[1:]) / det
            out[start] = v0
            out[start + 1:start + dim] = (tt[1:] - v0 * lm[1:]) / lm[0]
        for (side, idx), sig in zip(self.cones.psd, self.lam_diag):
            rows, cols, _ = svec_indices(side)
            out[idx] = 2 * t[idx] / (sig[:, rows] + sig[:, cols])
        return out


class _NormalMatrix:
    """Assembles ``A W^2 A^T`` block by block from precomputed row slices."""

    def __init__(self, A: sp.csr_matrix, cones: _ConeSet):
        self.m = A.shape[0]
        Ac = A.tocsc()
        self.A_nn = Ac[:, cones.nonneg]
        self.soc = []
        for start, dim in cones.soc:
            blk = Ac[:, start:start + dim]
            rows = np.unique(blk.indices)
            self.soc.append((rows, blk[rows].toarray()))
        self.psd = []
        for side, idx in cones.psd:
            group = []
            for k in range(idx.shape[0]):
                blk = Ac[:, idx[k, 0]:idx[k, -1] + 1]
                rows = np.unique(blk.indices)
                dense = blk[rows].toarray()
                group.append((rows, dense, _smat_batch(dense, side)))
            self.psd.append(group)

    def assemble(self, sc: _Scaling) -> np.ndarray:
        M = np.asarray((self.A_nn @ sp.diags(sc.d ** 2) @ self.A_nn.T).todense())
        for (rows, dense), (W, _) in zip(self.soc, sc.soc):
            if rows.size:
                M[np.ix_(rows, rows)] += dense @ (W @ W) @ dense.T
        for group, (R, _) in zip(self.psd, sc.psd):
            G = R @ np.swapaxes(R, -1, -2)
            for k, (rows, dense, mats) in enumerate(group):
                if rows.size:
                    H = _svec_batch(G[k] @ mats @ G[k])
                    M[np.ix_(rows, rows)] += dense @ H.T
        return M


def _split_free(problem: ConicProblem):
    """Equivalent problem with each free variable written as ``x+ - x-``."""
    f = problem.cones.free
    if f == 0:
        return problem.A.tocsr(), problem.c, problem.cones
    A = problem.A.tocsc()
    A2 = sp.hstack([A[:, :f], -A[:, :f], A[:, f:]]).tocsr()
    c2 = np.concatenate([problem.c[:f], -problem.c[:f], problem.c[f:]])
    cones = problem.cones
    return A2, c2, Cones(0, cones.nonneg + 2 * f, cones.soc, cones.psd)


def solve_interior(problem: ConicProblem, st: SolverSettings) -> ConicSolution:
    A0, b0, c0 = problem.A.tocsr(), problem.b, problem.c
    f = problem.cones.free
    A1, c1, cones1 = _split_free(problem)
    scaled = ConicProblem(c1, A1, b0, cones1)
    Dr, E = _block_scaling(scaled, st.scaling_passes)
    A = (sp.diags(Dr) @ A1 @ sp.diags(E)).tocsr()
    b = Dr * b0
    c = E * c1
    cs = 1.0 / max(np.abs(c).max(initial=0.0), 1e-8)
    sb = 1.0 / max(np.abs(b).max(initial=0.0), 1e-8)
    c, b = c * cs, b * sb
    AT = A.T.tocsr()
    m, n = A.shape
    cones = _ConeSet(cones1)
    normal = _NormalMatrix(A, cones)
    nb, nc = np.linalg.norm(b0), np.linalg.norm(c0)
    e = cones.identity()

    def unscale(x, y, s):
        xo = E * x / sb
        so = s / (E * cs)
        if f:
            xo = np.concatenate([xo[:f] - xo[f:2 * f], xo[2 * f:]])
            so = np.concatenate([np.zeros(f), so[2 * f:]])
        return xo, Dr * y / cs, so

    def residuals(xo, yo, so):
        pres = np.linalg.norm(A0 @ xo - b0) / (1 + nb)
        dres = np.linalg.norm(c0 - A0.T @ yo - so) / (1 + nc)
        pobj, dobj = float(c0 @ xo), float(b0 @ yo)
        gap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        return pres, dres, gap, pobj, dobj

    # least-norm start shifted into the cone interior
    rows = _RowSolver(A)
    x = AT @ rows.solve(b) if m else np.zeros(n)
    y = rows.solve(A @ c) if m else np.zeros(0)
    s = c - AT @ y
    x = x + max(0.0, 1.0 - cones.min_eig(x)) * e
    s = s + max(0.0, 1.0 - cones.min_eig(s)) * e

    status = MAX_ITER
    diag: dict = {"method": "interior", "steps": []}
    it = 0
    for it in range(st.ipm_max_iter + 1):
        xo, yo, so = unscale(x, y, s)
        pres, dres, gap, pobj, dobj = residuals(xo, yo, so)
        if max(pres, dres, gap) <= st.tol:
            status = OPTIMAL
            break
        cert = _certificate(A, AT, b, c, x, y, s, st.infeasibility_tol)
        if cert is not None:
            status = cert
            break
        if it == st.ipm_max_iter:
            break
        rp = b - A @ x
        rd = c - AT @ y - s
        try:
            sc = _Scaling(cones, x, s)
            M = normal.assemble(sc)
            factor = _factor(M)
        except np.linalg.LinAlgError:
            diag["breakdown"] = it
            break
        mu = (x @ s) / cones.degree
        lam = sc.lam

        def newton(d):
            wd = sc.WT(d)
            w2rd = sc.WT(sc.W(rd))
            dy = sla.cho_solve(factor, rp - A @ wd + A @ w2rd, check_finite=False)
            for _ in range(2):
                ds = rd - AT @ dy
                dx = wd - sc.WT(sc.W(ds))
                dy = dy + sla.cho_solve(factor, rp - A @ dx, check_finite=False)
            ds = rd - AT @ dy
            dx = wd - sc.WT(sc.W(ds))
            return dx, dy, ds

        ll = cones.jprod(lam, lam)
        dx_a, dy_a, ds_a = newton(sc.lam_solve(-ll))
        a_aff = min(1.0, cones.max_step(x, dx_a), cones.max_step(s, ds_a))
        sigma = float(np.clip(1.0 - a_aff, 0.0, 1.0) ** 3)
        corr = cones.jprod(sc.WinvT(dx_a), sc.W(ds_a))
        dx, dy, ds = newton(sc.lam_solve(sigma * mu * e - ll - corr))
        alpha = min(1.0, st.step_fraction * min(cones.max_step(x, dx), cones.max_step(s, ds)))
        diag["steps"].append(float(alpha))
        x, y, s = x + alpha * dx, y + alpha * dy, s + alpha * ds
        log.debug("ipm %d: primal %.2e dual %.2e gap %.2e step %.3f sigma %.2e",
                  it, pres, dres, gap, alpha, sigma)
        if alpha < 1e-10:
            diag["breakdown"] = it
            break
    if status == MAX_ITER:
        log.warning("interior-point method stopped (residuals %.2e %.2e %.2e)", pres, dres, gap)
    return ConicSolution(
        x=xo, y=yo, s=so,
        objective=pobj + problem.objective_offset,
        dual_objective=dobj + problem.objective_offset,
        primal_residual=pres, dual_residual=dres, gap=gap,
        status=status, iterations=it, backend=BACKEND, diagnostics=diag,
    )


def _factor(M: np.ndarray):
    try:
        return sla.cho_factor(M, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        ridge = 1e-14 * max(np.trace(M) / max(len(M), 1), 1e-300)
        return sla.cho_factor(M + ridge * np.eye(len(M)), lower=True, check_finite=False)


def _certificate(A, AT, b, c, x, y, s, tol):
    """Farkas-type tests on diverging iterates (all quantities in scaled units)."""
    by = b @ y
    if by > 0 and np.linalg.norm(AT @ y + s) <= tol * by and by > 1.0 / tol:
        return INFEASIBLE
    cx = c @ x
    if cx < 0 and np.linalg.norm(A @ x) <= tol * -cx and -cx > 1.0 / tol:
        return UNBOUNDED
    return None
