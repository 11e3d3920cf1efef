"""Operator-splitting solver for :class:`ConicProblem`.

Alternates an exact projection onto ``{x : A x = b}`` (using a factorization
of ``A A^T`` computed once) with a projection onto the cone product, with
over-relaxation, adaptive penalty and block-wise diagonal scaling.  Dual
variables come from the scaled multiplier: ``s = -rho * u`` lies in the cone
by construction, and ``y`` is the least-squares solution of ``A^T y = c - s``.
"""
from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp

from . import kernels
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
from .interior import solve_interior
from .problem import ConicProblem

log = logging.getLogger(__name__)


class _Anderson:
    """Type-II Anderson acceleration over a sliding window of fixed-point residuals."""

    def __init__(self, memory: int):
        self.memory = memory
        self.reset()

    def reset(self):
        self.dg: list[np.ndarray] = []
        self.df: list[np.ndarray] = []
        self.last: tuple[np.ndarray, np.ndarray] | None = None

    def extrapolate(self, g: np.ndarray, f: np.ndarray) -> np.ndarray | None:
        if self.last is not None:
            self.dg.append(g - self.last[0])
            self.df.append(f - self.last[1])
            if len(self.dg) > self.memory:
                self.dg.pop(0)
                self.df.pop(0)
        self.last = (g, f)
        if not self.dg:
            return None
        dF = np.stack(self.df, axis=1)
        dG = np.stack(self.dg, axis=1)
        gram = dF.T @ dF
        reg = 1e-10 * max(np.trace(gram), 1e-300)
        try:
            gamma = np.linalg.solve(gram + reg * np.eye(len(gram)), dF.T @ f)
        except np.linalg.LinAlgError:
            self.reset()
            return None
        out = g + f - (dG + dF) @ gamma
        return out if np.all(np.isfinite(out)) else None


def _dual_project(v: np.ndarray, layout, free: int) -> np.ndarray:
    out = v.copy()
    kernels.project(out, layout)
    out[:free] = 0.0
    return out


def solve(problem: ConicProblem, settings: SolverSettings | None = None, **overrides) -> ConicSolution:
    """Solve a standard-form cone program; see :class:`SolverSettings` for the knobs."""
    st = settings or SolverSettings()
    if overrides:
        st = SolverSettings(**{**st.__dict__, **overrides})
    if st.method == "interior":
        return solve_interior(problem, st)
    if st.method != "splitting":
        raise ValueError(f"unknown solver method {st.method!r}")
    A0, b0, c0 = problem.A, problem.b, problem.c
    m, n = A0.shape
    cones = problem.cones
    layout = kernels.Layout(cones)
    project = kernels.project

    Dr, E = _block_scaling(problem, st.scaling_passes)
    A = (sp.diags(Dr) @ A0 @ sp.diags(E)).tocsr()
    b = Dr * b0
    c = E * c0
    cs = 1.0 / max(np.abs(c).max(initial=0.0), 1e-8)
    sb = 1.0 / max(np.abs(b).max(initial=0.0), 1e-8)
    c = c * cs
    b = b * sb
    AT = A.T.tocsr()
    rows = _RowSolver(A)
    rows0 = _RowSolver(A0.tocsr())
    A0T = A0.T.tocsr()
    nb, nc = np.linalg.norm(b0), np.linalg.norm(c0)

    # relative penalty per coordinate, constant on each SOC/PSD block
    weights = np.ones(n)
    wrows = rows

    def affine(v):
        if m == 0:
            return v
        return v - (AT @ wrows.solve(A @ v - b)) / weights

    def unscale(z, u, rho):
        x = E * z / sb
        s = -rho * weights * u / (E * cs)
        y = rows0.solve(A0 @ (c0 - s)) if m else np.zeros(0)
        return x, y, s

    def residuals(x, y, s):
        pres = np.linalg.norm(A0 @ x - b0) / (1 + nb)
        dres = np.linalg.norm(c0 - A0T @ y - s) / (1 + nc)
        pobj = float(c0 @ x)
        dobj = float(b0 @ y)
        gap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        return pres, dres, gap, pobj, dobj

    def step(z, u, rho):
        x = affine(z - u - c / (rho * weights))
        xr = alpha * x + (1 - alpha) * z
        w = xr + u
        z_new = w.copy()
        project(z_new, layout)
        return x, z_new, w - z_new

    alpha = st.relaxation
    rho = st.rho
    cone_groups = ([np.arange(start, start + length) for kind, start, length, _ in cones.blocks()
                    if kind not in ("free", "nonneg")] if st.block_rho else [])
    schedule = set(st.block_rho_schedule)
    g = np.zeros(2 * n)  # fixed-point variable (z, u)
    x, z, u = step(g[:n], g[n:], rho)
    Tg = np.concatenate([z, u])
    evals = 1
    aa = _Anderson(st.anderson_memory) if st.anderson_memory else None
    status = MAX_ITER
    it = 0
    u_prev, x_prev, z_prev = u.copy(), x.copy(), z.copy()
    diag: dict = {"rho_updates": 0, "anderson_rejected": 0}
    best = None
    last_gain = 0
    # with acceleration active the iterate differences are not certificates
    cert_from = st.max_iter + 1 if aa is not None else 0
    for it in range(1, st.max_iter + 1):
        f = Tg - g
        g_next = None
        if aa is not None:
            g_aa = aa.extrapolate(g, f)
            if g_aa is not None:
                xa, za, ua = step(g_aa[:n], g_aa[n:], rho)
                evals += 1
                Ta = np.concatenate([za, ua])
                if np.linalg.norm(Ta - g_aa) <= st.anderson_safeguard * np.linalg.norm(f):
                    g_next, Tg, (x, z, u) = g_aa, Ta, (xa, za, ua)
                else:
                    diag["anderson_rejected"] += 1
                    aa.reset()
        if g_next is None:
            g_next = Tg
            x, z, u = step(Tg[:n], Tg[n:], rho)
            evals += 1
            Tg = np.concatenate([z, u])
        g = g_next
        if it % st.check_every == st.check_every - 1:
            u_prev, x_prev, z_prev = u.copy(), x.copy(), z.copy()
        if it % st.check_every != 0 and it != st.max_iter:
            continue
        xo, yo, so = unscale(z, u, rho)
        pres, dres, gap, pobj, dobj = residuals(xo, yo, so)
        score = max(pres, dres, gap)
        if it % (50 * st.check_every) == 0:
            log.debug("iter %d: primal %.2e dual %.2e gap %.2e rho %.3g", it, pres, dres, gap, rho)
        if best is None or score < best[0]:
            if best is None or score < 0.5 * best[0]:
                last_gain = it
            best = (score, z.copy(), u.copy(), rho, weights)
        if aa is not None and it - last_gain >= st.anderson_patience:
            # acceleration has stopped paying off (or the problem is infeasible): plain iterations
            aa = None
            diag["anderson_disabled_at"] = it
            cert_from = it + st.check_every
            # cold restart: extrapolated iterates can be huge when the problem has no solution
            rho = st.rho
            if cone_groups:
                weights = np.ones(n)
                wrows = rows
            z, u = np.zeros(n), np.zeros(n)
            g = np.zeros(2 * n)
            x, z, u = step(z, u, rho)
            evals += 1
            Tg = np.concatenate([z, u])
            continue
        if score <= st.tol:
            status = OPTIMAL
            break
        if it >= max(st.min_iter_certificate, cert_from):
            cert = _certificate(A, AT, b, c, rows, layout, cones.free, weights * (u - u_prev), x - x_prev,
                                st.infeasibility_tol)
            if cert is not None:
                status = cert
                break
        if cone_groups and it in schedule:
            new_w = _block_weights(z, rho * weights * u, weights, cone_groups, st.block_rho_range)
            if new_w is not None:
                u = u * (weights / new_w)
                weights = new_w
                wrows = _RowSolver(A, 1.0 / weights)
                diag["block_rho_updates"] = diag.get("block_rho_updates", 0) + 1
                g = np.concatenate([z, u])
                x, z, u = step(z, u, rho)
                evals += 1
                Tg = np.concatenate([z, u])
                if aa is not None:
                    aa.reset()
                continue
        if st.adapt_rho and it % st.adapt_every == 0:
            # splitting residuals: x - z (primal) and z - z_prev (dual), each normalized
            scale_p = np.linalg.norm(x - z) / max(np.linalg.norm(x), np.linalg.norm(z), 1e-300)
            scale_d = np.linalg.norm(z - z_prev) / max(np.linalg.norm(u), 1e-300)
            ratio = np.sqrt(max(scale_p, 1e-300) / max(scale_d, 1e-300))
            if ratio > 5 or ratio < 0.2:
                new_rho = float(np.clip(rho * np.clip(ratio, 0.1, 10.0), 1e-6, 1e6))
                u = u * (rho / new_rho)
                rho = new_rho
                diag["rho_updates"] += 1
                g = np.concatenate([z, u])
                x, z, u = step(z, u, rho)
                evals += 1
                Tg = np.concatenate([z, u])
                if aa is not None:
                    aa.reset()
    if status == MAX_ITER and best is not None:
        _, z, u, rho, weights = best
    xo, yo, so = unscale(z, u, rho)
    pres, dres, gap, pobj, dobj = residuals(xo, yo, so)
    diag["rho"] = rho
    diag["evaluations"] = evals
    if status == MAX_ITER:
        log.warning("conic solver stopped at the iteration cap (residuals %.2e %.2e %.2e)", pres, dres, gap)
    return ConicSolution(
        x=xo, y=yo, s=so,
        objective=pobj + problem.objective_offset,
        dual_objective=dobj + problem.objective_offset,
        primal_residual=pres, dual_residual=dres, gap=gap,
        status=status, iterations=it, diagnostics=diag,
    )


def _block_weights(z, s, weights, groups, spread):
    """Per-block penalties ``~ |s_b| / |z_b|`` relative to their geometric mean, or ``None`` if unchanged."""
    ratios = []
    nz, ns = np.linalg.norm(z), np.linalg.norm(s)
    if nz == 0 or ns == 0:
        return None
    for g in groups:
        zb = max(np.linalg.norm(z[g]), 1e-6 * nz)
        sb = max(np.linalg.norm(s[g]), 1e-6 * ns)
        ratios.append(sb / zb)
    logr = np.log(ratios)
    logr -= logr.mean()
    np.clip(logr, -np.log(spread), np.log(spread), out=logr)
    new = weights.copy()
    changed = False
    for g, lr in zip(groups, logr):
        target = np.exp(lr)
        if abs(np.log(target / weights[g[0]])) > np.log(2.0):
            new[g] = target
            changed = True
    return new if changed else None


def _certificate(A, AT, b, c, rows, layout, free, du, dx, tol):
    """Check the iterate differences for a primal or dual infeasibility certificate."""
    nu = np.linalg.norm(du)
    if nu > 1e-10 and A.shape[0]:
        s = -du / nu
        y = rows.solve(A @ s)
        ny = np.linalg.norm(y)
        if ny > 0:
            Aty = AT @ y
            dist = np.linalg.norm(Aty - _dual_project(Aty, layout, free))
            if b @ y < -tol * ny and dist <= tol * ny and np.linalg.norm(Aty - s) <= 1e-3:
                return INFEASIBLE
    nx = np.linalg.norm(dx)
    if nx > 1e-10:
        d = dx / nx
        proj = d.copy()
        kernels.project(proj, layout)
        if (c @ d < -tol and np.linalg.norm(A @ d) <= tol
                and np.linalg.norm(d - proj) <= tol):
            return UNBOUNDED
    return None
