"""Range ambiguity of the transmit design and the sidelobe points it must suppress."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fisher import _as_cov
from .model import (
    SPEED_OF_LIGHT,
    ArrayGeometry,
    GeometricParams,
    ScattererGrid,
    grid_responses,
    resolution_cells,
)


def range_phases(geom: ArrayGeometry, d_ref: float, d_hat) -> np.ndarray:
    """``exp(-j psi_n)`` for each hypothesized range, shape (len(d_hat), N)."""
    d_hat = np.atleast_1d(np.asarray(d_hat, dtype=float))
    n = np.arange(geom.n_subcarriers)
    psi = 2 * np.pi * n[None, :] * geom.subcarrier_spacing_hz * 2 * (d_ref - d_hat[:, None]) / SPEED_OF_LIGHT
    return np.exp(-1j * psi)


def coherent_power(R: np.ndarray, a: np.ndarray) -> np.ndarray:
    """``r_n = sum_t a_{t,n}^H R_n a_{t,n}`` per subcarrier (complex, numerically real)."""
    return np.einsum("ntx,nxy,nty->n", a.conj(), R, a)


def _ambiguity(R, a, geom, d_ref, d_hat):
    r = coherent_power(R, a)
    return np.abs(range_phases(geom, d_ref, d_hat) @ r) ** 2


def range_ambiguity_psm(cov, grid: ScattererGrid, geom: ArrayGeometry, d_hat,
                        rcs_variance: float = 1.0, narrowband: bool = False):
    """Range ambiguity ``var^2 N_r^2 |sum_n e^{-j psi_n} sum_t a^H R_n a|^2``.

    Accepts a scalar or an array of hypothesized ranges.
    """
    d_arr = np.asarray(d_hat, dtype=float)
    if np.any(d_arr <= 0):
        raise ValueError("hypothesized range must be positive")
    a = grid_responses(grid, geom, narrowband=narrowband).a
    val = rcs_variance ** 2 * geom.n_rx ** 2 * _ambiguity(_as_cov(cov), a, geom, grid.params.d0, d_arr)
    return float(val[0]) if d_arr.ndim == 0 else val


def mainlobe_normalizer(geom: ArrayGeometry, power: float, n_scatterers: int) -> float:
    """Ideal coherent mainlobe ``N_t^2 P^2 T^2`` (without the common RCS/receive factor)."""
    return (geom.n_tx * power * n_scatterers) ** 2


def normalized_sidelobe(cov, grid: ScattererGrid, geom: ArrayGeometry, d_hat, power: float,
                        narrowband: bool = False):
    a = grid_responses(grid, geom, narrowband=narrowband).a
    d_arr = np.asarray(d_hat, dtype=float)
    val = _ambiguity(_as_cov(cov), a, geom, grid.params.d0, d_arr)
    val = val / mainlobe_normalizer(geom, power, grid.size)
    return float(val[0]) if d_arr.ndim == 0 else val


def _layer(grid: ScattererGrid, layer: int) -> np.ndarray:
    idx = grid.layer(layer)
    if len(idx) == 0:
        raise ValueError(f"range layer {layer} is empty")
    return idx


def range_ambiguity_dsm(cov, grid: ScattererGrid, geom: ArrayGeometry, layer: int, d_hat,
                        rcs_variance: float = 1.0):
    """Ambiguity restricted to the scatterers of one range layer (1-based), centered on that layer."""
    idx = _layer(grid, layer)
    d_arr = np.asarray(d_hat, dtype=float)
    a = grid_responses(grid, geom).a[:, idx]
    d_ref = grid.d[idx[0]]
    val = rcs_variance ** 2 * geom.n_rx ** 2 * _ambiguity(_as_cov(cov), a, geom, d_ref, d_arr)
    return float(val[0]) if d_arr.ndim == 0 else val


def normalized_sidelobe_dsm(cov, grid: ScattererGrid, geom: ArrayGeometry, layer: int, d_hat,
                            power: float):
    """Layer ambiguity over the ideal layer mainlobe ``(N_t P T_theta T_phi)^2``."""
    idx = _layer(grid, layer)
    d_arr = np.asarray(d_hat, dtype=float)
    a = grid_responses(grid, geom).a[:, idx]
    val = _ambiguity(_as_cov(cov), a, geom, grid.d[idx[0]], d_arr)
    val = val / mainlobe_normalizer(geom, power, len(idx))
    return float(val[0]) if d_arr.ndim == 0 else val


@dataclass(frozen=True)
class SidelobeSet:
    """Hypothesized ranges to suppress around ``d_ref``.

    ``layer`` is ``None`` for the global (parametric) constraint and the
    1-based range layer for the discrete model.
    """

    ranges: tuple[float, ...]
    d_ref: float
    epsilon: float
    resolution: float
    layer: int | None = None

    def __post_init__(self):
        if not 0 < self.epsilon:
            raise ValueError("sidelobe threshold must be positive")
        for d in self.ranges:
            if abs(d - self.d_ref) < self.resolution * (1 - 1e-9):
                raise ValueError(f"hypothesized range {d} lies inside the mainlobe")

    def __len__(self) -> int:
        return len(self.ranges)


def sidelobe_ranges(d_ref: float, resolution: float, count: int, spacing_cells: float) -> tuple[float, ...]:
    if not spacing_cells > 0:
        raise ValueError("sidelobe spacing must be positive")
    if count < 0:
        raise ValueError("sidelobe count must be >= 0")
    step = spacing_cells * resolution
    out = []
    for m in range(1, count + 1):
        out.extend((d_ref - m * step, d_ref + m * step))
    return tuple(out)


def build_sidelobe_set(geom: ArrayGeometry, params: GeometricParams, count: int = 5,
                       spacing_cells: float = 1.0, epsilon: float = 1e-2) -> SidelobeSet:
    dd = resolution_cells(geom, params.phi0)[2]
    return SidelobeSet(sidelobe_ranges(params.d0, dd, count, spacing_cells), params.d0, epsilon, dd)


def build_dsm_sidelobe_sets(geom: ArrayGeometry, grid: ScattererGrid, count: int = 5,
                            spacing_cells: float = 1.0, epsilon: float = 1e-2) -> list[SidelobeSet]:
    """One set per range layer, each centered on its own layer range."""
    dd = resolution_cells(geom, grid.params.phi0)[2]
    sets = []
    for r in range(1, grid.t_d + 1):
        d_ref = float(grid.d[grid.layer(r)[0]])
        sets.append(SidelobeSet(sidelobe_ranges(d_ref, dd, count, spacing_cells), d_ref, epsilon, dd, r))
    return sets


def ambiguity_profile(cov, grid: ScattererGrid, geom: ArrayGeometry, power: float,
                      ranges, layer: int | None = None) -> np.ndarray:
    """Normalized ambiguity over a range axis (for plotting)."""
    if layer is None:
        return normalized_sidelobe(cov, grid, geom, np.asarray(ranges, float), power)
    return normalized_sidelobe_dsm(cov, grid, geom, layer, np.asarray(ranges, float), power)
