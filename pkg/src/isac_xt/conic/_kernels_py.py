"""NumPy implementation of the cone projection (used when the compiled core is absent)."""
from __future__ import annotations

import numpy as np

from .problem import svec_indices


def _project_soc(seg: np.ndarray) -> None:
    t = seg[0]
    y = seg[1:]
    ny = np.linalg.norm(y)
    if ny <= t:
        return
    if ny <= -t:
        seg[:] = 0.0
        return
    a = 0.5 * (t + ny)
    seg[0] = a
    seg[1:] = (a / ny) * y


class Layout:
    """Cone offsets precomputed from a :class:`Cones` instance."""

    def __init__(self, cones):
        self.nonneg = (cones.free, cones.nonneg)
        soc_starts, psd_starts = [], []
        for kind, start, length, side in cones.blocks():
            if kind == "soc":
                soc_starts.append(start)
            elif kind == "psd":
                psd_starts.append(start)
        self.soc_starts = np.array(soc_starts, dtype=np.int64)
        self.soc_dims = np.array(cones.soc, dtype=np.int64)
        self.psd_starts = np.array(psd_starts, dtype=np.int64)
        self.psd_sides = np.array(cones.psd, dtype=np.int64)
        # PSD blocks grouped by side so each group is one batched eigendecomposition
        self.psd_groups = []
        for side in sorted(set(cones.psd)):
            starts = self.psd_starts[self.psd_sides == side]
            m = side * (side + 1) // 2
            self.psd_groups.append((side, starts[:, None] + np.arange(m)[None, :]))


def project(x: np.ndarray, layout: Layout) -> None:
    """Project ``x`` onto the cone product in place."""
    s, n = layout.nonneg
    if n:
        np.maximum(x[s:s + n], 0.0, out=x[s:s + n])
    for start, dim in zip(layout.soc_starts, layout.soc_dims):
        _project_soc(x[start:start + dim])
    for side, idx in layout.psd_groups:
        rows, cols, scale = svec_indices(side)
        vals = x[idx] / scale
        mats = np.zeros((idx.shape[0], side, side))
        mats[:, rows, cols] = vals
        mats[:, cols, rows] = vals
        w, V = np.linalg.eigh(mats)
        np.maximum(w, 0.0, out=w)
        proj = np.einsum("bij,bj,bkj->bik", V, w, V)
        x[idx] = proj[:, rows, cols] * scale
