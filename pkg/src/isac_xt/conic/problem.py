"""Standard-form cone programs over a packed real variable vector.

``minimize c @ x  subject to  A @ x == b,  x in K`` where ``K`` is the product,
in this order, of a free block, a nonnegative orthant, second-order cones
``{(t, y): ||y|| <= t}`` and PSD cones.  A PSD block of side ``n`` is stored as
the scaled packed lower triangle (column-major, off-diagonals times sqrt 2),
so ``svec(X) @ svec(Y) == trace(X @ Y)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp

SQRT2 = np.sqrt(2.0)


# ---------------------------------------------------------------------------
# symmetric packing


def svec_size(n: int) -> int:
    return n * (n + 1) // 2


def svec_side(m: int) -> int:
    n = int(round((np.sqrt(8 * m + 1) - 1) / 2))
    if svec_size(n) != m:
        raise ValueError(f"{m} is not a triangular number")
    return n


@lru_cache(maxsize=None)
def svec_indices(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row index, column index and scale of every packed entry."""
    rows, cols = [], []
    for j in range(n):
        for i in range(j, n):
            rows.append(i)
            cols.append(j)
    rows = np.array(rows)
    cols = np.array(cols)
    scale = np.where(rows == cols, 1.0, SQRT2)
    for arr in (rows, cols, scale):
        arr.setflags(write=False)
    return rows, cols, scale


def svec(X: np.ndarray) -> np.ndarray:
    """Pack the lower triangle of symmetric matrices (works on a leading batch axis)."""
    X = np.asarray(X)
    n = X.shape[-1]
    r, c, s = svec_indices(n)
    return X[..., r, c] * s


def smat(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = svec_side(v.shape[-1])
    r, c, s = svec_indices(n)
    X = np.zeros(v.shape[:-1] + (n, n))
    vals = v / s
    X[..., r, c] = vals
    X[..., c, r] = vals
    return X


# ---------------------------------------------------------------------------
# complex Hermitian <-> real symmetric


def hermitian_embed(H: np.ndarray, check: bool = True) -> np.ndarray:
    """``[[Re H, -Im H], [Im H, Re H]]``; PSD exactly when ``H`` is.

    Eigenvalues are those of ``H`` each repeated twice, so the trace doubles.
    """
    H = np.asarray(H, dtype=complex)
    if check and np.abs(H - H.conj().swapaxes(-1, -2)).max(initial=0) > 1e-9 * max(1.0, np.abs(H).max(initial=0)):
        raise ValueError("matrix is not Hermitian")
    re, im = H.real, H.imag
    top = np.concatenate([re, -im], axis=-1)
    bottom = np.concatenate([im, re], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def hermitian_extract(M: np.ndarray) -> np.ndarray:
    """Hermitian matrix represented by a (possibly unstructured) real 2n x 2n block.

    Averages the two copies, which keeps PSD-ness and gives the matrix whose
    embedding has the same inner product with every embedded Hermitian matrix.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[-1] // 2
    m11, m12 = M[..., :n, :n], M[..., :n, n:]
    m21, m22 = M[..., n:, :n], M[..., n:, n:]
    return 0.5 * (m11 + m22) + 0.5j * (m21 - m12)


def hermitian_functional(C: np.ndarray) -> np.ndarray:
    """Row ``g`` with ``g @ svec(M) == Re Tr(C H)`` where ``H`` is extracted from ``M``.

    Only the Hermitian part of ``C`` matters.
    """
    C = np.asarray(C, dtype=complex)
    Ch = 0.5 * (C + C.conj().swapaxes(-1, -2))
    return 0.5 * svec(hermitian_embed(Ch, check=False))


def entry_selectors(n: int, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
    """Coefficient matrices ``E`` whose functionals pick ``Re H_ij`` and ``Im H_ij``."""
    ei = np.zeros(n)
    ej = np.zeros(n)
    ei[i] = 1
    ej[j] = 1
    re = 0.5 * (np.outer(ej, ei) + np.outer(ei, ej))
    # Re Tr(E H) with E = (j/2)(e_j e_i^T - e_i e_j^T) equals -Im H_ij
    im = -0.5j * (np.outer(ej, ei) - np.outer(ei, ej))
    return re.astype(complex), im


# ---------------------------------------------------------------------------
# problem container


@dataclass(frozen=True)
class Cones:
    free: int = 0
    nonneg: int = 0
    soc: tuple[int, ...] = ()
    psd: tuple[int, ...] = ()

    def __post_init__(self):
        if self.free < 0 or self.nonneg < 0:
            raise ValueError("cone sizes must be nonnegative")
        if any(q < 1 for q in self.soc):
            raise ValueError("second-order cones need dimension >= 1")
        if any(s < 1 for s in self.psd):
            raise ValueError("PSD cones need side >= 1")

    @property
    def dim(self) -> int:
        return self.free + self.nonneg + sum(self.soc) + sum(svec_size(s) for s in self.psd)

    def blocks(self) -> list[tuple[str, int, int, int]]:
        """``(kind, start, length, side)`` for each cone block in order."""
        out = []
        pos = 0
        if self.free:
            out.append(("free", pos, self.free, 0))
            pos += self.free
        if self.nonneg:
            out.append(("nonneg", pos, self.nonneg, 0))
            pos += self.nonneg
        for q in self.soc:
            out.append(("soc", pos, q, 0))
            pos += q
        for s in self.psd:
            m = svec_size(s)
            out.append(("psd", pos, m, s))
            pos += m
        return out


@dataclass(frozen=True, eq=False)
class ConicProblem:
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    cones: Cones
    names: dict = field(default_factory=dict)
    objective_offset: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        b = np.asarray(self.b, dtype=float).ravel()
        A = sp.csr_matrix(self.A, dtype=float)
        if c.size != self.cones.dim:
            raise ValueError(f"objective has {c.size} entries but cones span {self.cones.dim}")
        if A.shape != (b.size, c.size):
            raise ValueError(f"constraint matrix is {A.shape}, expected {(b.size, c.size)}")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(b)) and np.all(np.isfinite(A.data))):
            raise ValueError("problem data must be finite")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "A", A)

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return self.b.size

    def value(self, x: np.ndarray, name: str):
        """Extract a named variable from a solution vector."""
        kind, start, length, side = self.names[name]
        seg = x[start:start + length]
        if kind == "psd":
            return smat(seg)
        if kind == "herm":
            return hermitian_extract(smat(seg))
        return seg.copy()


class ProblemBuilder:
    """Incremental assembly of a :class:`ConicProblem`.

    Variables are declared per cone kind; constraint rows are added as sparse
    ``{variable: coefficient vector}`` maps.  The final layout orders blocks by
    cone kind as required by :class:`Cones`.
    """

    def __init__(self):
        self._vars: dict[str, tuple[str, int]] = {}
        self._order: list[str] = []
        self._rows: list[tuple[dict[str, np.ndarray], float]] = []
        self._cost: dict[str, np.ndarray] = {}

    def add_free(self, name: str, size: int) -> str:
        return self._add(name, "free", size)

    def add_nonneg(self, name: str, size: int) -> str:
        return self._add(name, "nonneg", size)

    def add_soc(self, name: str, size: int) -> str:
        return self._add(name, "soc", size)

    def add_psd(self, name: str, side: int) -> str:
        return self._add(name, "psd", side)

    def add_hermitian_psd(self, name: str, side: int) -> str:
        """Complex Hermitian PSD variable of side ``side`` via its 2n real embedding."""
        return self._add(name, "herm", side)

    def _add(self, name, kind, size):
        if name in self._vars:
            raise ValueError(f"duplicate variable {name}")
        self._vars[name] = (kind, size)
        self._order.append(name)
        return name

    def length(self, name: str) -> int:
        kind, size = self._vars[name]
        if kind == "psd":
            return svec_size(size)
        if kind == "herm":
            return svec_size(2 * size)
        return size

    def add_row(self, terms: dict[str, np.ndarray], rhs: float) -> None:
        self._rows.append(({k: np.asarray(v, dtype=float).ravel() for k, v in terms.items()}, float(rhs)))

    def add_cost(self, name: str, coef: np.ndarray) -> None:
        coef = np.asarray(coef, dtype=float).ravel()
        self._cost[name] = self._cost.get(name, 0) + coef

    def build(self, normalize_rows: bool = False) -> ConicProblem:
        """Assemble the program; ``normalize_rows`` rescales each row to unit infinity norm."""
        rank = {"free": 0, "nonneg": 1, "soc": 2, "psd": 3, "herm": 3}
        order = sorted(self._order, key=lambda k: rank[self._vars[k][0]])
        names = {}
        pos = 0
        free = nonneg = 0
        soc, psd = [], []
        for name in order:
            kind, size = self._vars[name]
            length = self.length(name)
            side = 2 * size if kind == "herm" else (size if kind == "psd" else 0)
            names[name] = (kind, pos, length, side)
            pos += length
            if kind == "free":
                free += size
            elif kind == "nonneg":
                nonneg += size
            elif kind == "soc":
                soc.append(size)
            else:
                psd.append(side)
        cones = Cones(free, nonneg, tuple(soc), tuple(psd))
        c = np.zeros(pos)
        for name, coef in self._cost.items():
            _, start, length, _ = names[name]
            c[start:start + length] += coef
        rows, cols, vals = [], [], []
        b = np.empty(len(self._rows))
        for i, (terms, rhs) in enumerate(self._rows):
            b[i] = rhs
            for name, coef in terms.items():
                _, start, length, _ = names[name]
                if coef.size != length:
                    raise ValueError(f"row {i}: coefficient for {name} has {coef.size} entries, expected {length}")
                nz = np.flatnonzero(coef)
                rows.append(np.full(nz.size, i))
                cols.append(start + nz)
                vals.append(coef[nz])
        A = sp.csr_matrix(
            (np.concatenate(vals) if vals else [], (np.concatenate(rows) if rows else [], np.concatenate(cols) if cols else [])),
            shape=(len(self._rows), pos))
        A.sum_duplicates()
        if normalize_rows and A.shape[0]:
            peak = np.asarray(abs(A).max(axis=1).todense()).ravel()
            peak[peak == 0] = 1.0
            A = sp.diags(1.0 / peak) @ A
            b = b / peak
        return ConicProblem(c, A, b, cones, names)


# ---------------------------------------------------------------------------
# text dump


def dump_problem(problem: ConicProblem, path: str | Path) -> None:
    """Write a plain-text description: dimensions, cones, objective, then sparse triplets."""
    A = problem.A.tocoo()
    cones = problem.cones
    lines = [
        f"vars {problem.n_vars}",
        f"rows {problem.n_rows}",
        f"free {cones.free}",
        f"nonneg {cones.nonneg}",
        "soc " + " ".join(map(str, cones.soc)),
        "psd " + " ".join(map(str, cones.psd)),
        "c " + " ".join(repr(float(v)) for v in problem.c),
        "b " + " ".join(repr(float(v)) for v in problem.b),
        f"nnz {A.nnz}",
    ]
    lines += [f"{i} {j} {float(v)!r}" for i, j, v in zip(A.row, A.col, A.data)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_problem(path: str | Path) -> ConicProblem:
    text = Path(path).read_text().splitlines()
    head = {}
    k = 0
    while k < len(text):
        key, _, rest = text[k].partition(" ")
        head[key] = rest
        k += 1
        if key == "nnz":
            break
    nnz = int(head["nnz"])
    ints = lambda s: tuple(int(v) for v in s.split())  # noqa: E731
    floats = lambda s: np.array([float(v) for v in s.split()])  # noqa: E731
    cones = Cones(int(head["free"]), int(head["nonneg"]), ints(head["soc"]), ints(head["psd"]))
    trip = np.array([[float(v) for v in line.split()] for line in text[k:k + nnz]]).reshape(-1, 3)
    m, n = int(head["rows"]), int(head["vars"])
    A = sp.csr_matrix((trip[:, 2], (trip[:, 0].astype(int), trip[:, 1].astype(int))), shape=(m, n))
    return ConicProblem(floats(head["c"]), A, floats(head["b"]).reshape(m), cones)
