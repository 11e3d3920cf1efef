"""Array geometry, wideband steering vectors, scatterer grids and target responses.

Angles are in radians, ranges in meters, frequencies in Hz.  Transmit and
receive arrays are uniform rectangular arrays whose steering vectors factor as
a Kronecker product of the two axis responses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

SPEED_OF_LIGHT = 3e8

Side = Literal["transmit", "receive"]

PARAM_NAMES = ("theta0", "delta_theta", "phi0", "delta_phi", "d0", "delta_d")


class DegenerateGeometryError(ValueError):
    """Raised when a resolution formula hits a pole (sin or cos of elevation is 0)."""


@dataclass(frozen=True)
class ArrayGeometry:
    n_tx_x: int
    n_tx_y: int
    n_rx_x: int
    n_rx_y: int
    carrier_hz: float
    subcarrier_spacing_hz: float
    n_subcarriers: int
    n_symbols: int

    def __post_init__(self):
        for name in ("n_tx_x", "n_tx_y", "n_rx_x", "n_rx_y", "n_subcarriers", "n_symbols"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.carrier_hz > 0 or not self.subcarrier_spacing_hz > 0:
            raise ValueError("carrier and subcarrier spacing must be positive")

    @property
    def n_tx(self) -> int:
        return self.n_tx_x * self.n_tx_y

    @property
    def n_rx(self) -> int:
        return self.n_rx_x * self.n_rx_y

    def chi(self, n=None) -> np.ndarray:
        """Wideband factor ``1 + n*df/fc`` for subcarrier ``n`` (all subcarriers if None)."""
        idx = np.arange(self.n_subcarriers) if n is None else np.asarray(n)
        return 1.0 + idx * (self.subcarrier_spacing_hz / self.carrier_hz)

    def axis_sizes(self, side: Side) -> tuple[int, int]:
        if side == "transmit":
            return self.n_tx_x, self.n_tx_y
        if side == "receive":
            return self.n_rx_x, self.n_rx_y
        raise ValueError(f"unknown array side {side!r}")


@dataclass(frozen=True)
class GeometricParams:
    """Center and extent of the target in azimuth, elevation and range."""

    theta0: float
    delta_theta: float
    phi0: float
    delta_phi: float
    d0: float
    delta_d: float

    def __post_init__(self):
        if min(self.delta_theta, self.delta_phi, self.delta_d) < 0:
            raise ValueError("extents must be nonnegative")
        if not self.d0 > self.delta_d / 2:
            raise ValueError("d0 must exceed delta_d/2 so every scatterer range is positive")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in PARAM_NAMES], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "GeometricParams":
        values = [float(v) for v in values]
        if len(values) != 6:
            raise ValueError("expected six geometric parameters")
        return cls(*values)


@dataclass(frozen=True)
class RcsPrior:
    variance: float

    def __post_init__(self):
        if not (np.isfinite(self.variance) and self.variance > 0):
            raise ValueError("RCS prior variance must be finite and positive")


def _offsets(size: int) -> np.ndarray:
    if size == 1:
        return np.zeros(1)
    return np.arange(size) / (size - 1) - 0.5


@dataclass(frozen=True, eq=False)
class ScattererGrid:
    """Scatterer coordinates generated from :class:`GeometricParams`.

    Scatterers are stored in linear order ``t = p*T_phi*T_d + q*T_d + r``
    (zero-based), i.e. range varies fastest.
    """

    params: GeometricParams
    t_theta: int
    t_phi: int
    t_d: int
    p: np.ndarray = field(repr=False)
    q: np.ndarray = field(repr=False)
    r: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    w: np.ndarray = field(repr=False)
    theta: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    d: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.t_theta * self.t_phi * self.t_d

    @property
    def sizes(self) -> tuple[int, int, int]:
        return self.t_theta, self.t_phi, self.t_d

    @property
    def active_mask(self) -> np.ndarray:
        """Parameters that are identifiable; an extent is dropped when its axis has one point."""
        return np.array([True, self.t_theta > 1, True, self.t_phi > 1, True, self.t_d > 1])

    def jacobian(self) -> np.ndarray:
        """Scatterer coordinates ``[theta_1..T, phi_1..T, d_1..T]`` w.r.t. the six parameters."""
        T = self.size
        J = np.zeros((3 * T, 6))
        J[:T, 0] = 1.0
        J[:T, 1] = self.u
        J[T:2 * T, 2] = 1.0
        J[T:2 * T, 3] = self.v
        J[2 * T:, 4] = 1.0
        J[2 * T:, 5] = self.w
        return J

    def coordinates(self) -> np.ndarray:
        return np.concatenate([self.theta, self.phi, self.d])

    def layer(self, r: int) -> np.ndarray:
        """Indices of scatterers in range layer ``r`` (1-based)."""
        if not 1 <= r <= self.t_d:
            raise ValueError(f"range layer {r} outside 1..{self.t_d}")
        return np.flatnonzero(self.r == r - 1)

    def with_params(self, params: GeometricParams) -> "ScattererGrid":
        return grid_from_geometry(params, self.sizes)


def grid_from_geometry(params: GeometricParams, sizes: Sequence[int]) -> ScattererGrid:
    t_theta, t_phi, t_d = (int(s) for s in sizes)
    if min(t_theta, t_phi, t_d) < 1:
        raise ValueError("grid sizes must be >= 1")
    p, q, r = (a.ravel() for a in np.meshgrid(
        np.arange(t_theta), np.arange(t_phi), np.arange(t_d), indexing="ij"))
    u = _offsets(t_theta)[p]
    v = _offsets(t_phi)[q]
    w = _offsets(t_d)[r]
    return ScattererGrid(
        params=params, t_theta=t_theta, t_phi=t_phi, t_d=t_d,
        p=p, q=q, r=r, u=u, v=v, w=w,
        theta=params.theta0 + params.delta_theta * u,
        phi=params.phi0 + params.delta_phi * v,
        d=params.d0 + params.delta_d * w,
    )


def resolution_cells(geom: ArrayGeometry, phi0: float) -> tuple[float, float, float]:
    """Azimuth, elevation and range resolution of the array/bandwidth pair."""
    s, c = math.sin(phi0), math.cos(phi0)
    if abs(s) < 1e-12 or abs(c) < 1e-12:
        raise DegenerateGeometryError(f"elevation {phi0} rad puts a resolution formula at a pole")
    d_theta = 2.0 / (geom.n_tx_x * geom.n_rx_x * s)
    d_phi = 2.0 / (geom.n_tx_y * geom.n_rx_y * c)
    d_range = SPEED_OF_LIGHT / (2 * geom.n_subcarriers * geom.subcarrier_spacing_hz)
    return abs(d_theta), abs(d_phi), d_range


def parameter_resolutions(geom: ArrayGeometry, phi0: float) -> np.ndarray:
    """Resolution cell for each of the six parameters (extents share their axis)."""
    dt, dp, dd = resolution_cells(geom, phi0)
    return np.array([dt, dt, dp, dp, dd, dd])


def grid_sizes(extents: Sequence[float], resolutions: Sequence[float]) -> tuple[int, int, int]:
    out = []
    for ext, res in zip(extents, resolutions):
        if not res > 0:
            raise ValueError("resolutions must be positive")
        if ext < 0:
            raise ValueError("extents must be nonnegative")
        out.append(max(1, math.ceil(ext / res) + 1))
    return tuple(out)


def _check_subcarrier(n, geom: ArrayGeometry):
    n_arr = np.asarray(n)
    if np.any(n_arr < 0) or np.any(n_arr >= geom.n_subcarriers):
        raise ValueError(f"subcarrier index {n} outside 0..{geom.n_subcarriers - 1}")


def _axis_vectors(nx, ny, theta, phi, chi):
    # theta, phi: (...,), chi broadcastable -> (..., nx), (..., ny)
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    sx = np.pi * chi * np.sin(phi) * np.cos(theta)
    sy = np.pi * chi * np.sin(phi) * np.sin(theta)
    ax = np.exp(-1j * sx[..., None] * np.arange(nx))
    ay = np.exp(-1j * sy[..., None] * np.arange(ny))
    return ax, ay


def _kron_last(x, y):
    return (x[..., :, None] * y[..., None, :]).reshape(*x.shape[:-1], x.shape[-1] * y.shape[-1])


def steering_vector(side: Side, theta: float, phi: float, n: int, geom: ArrayGeometry,
                    narrowband: bool = False) -> np.ndarray:
    """Wideband URA steering vector ``a_x (x) a_y`` for subcarrier ``n``."""
    _check_subcarrier(n, geom)
    nx, ny = geom.axis_sizes(side)
    chi = 1.0 if narrowband else float(geom.chi(n))
    ax, ay = _axis_vectors(nx, ny, theta, phi, chi)
    return np.kron(ax, ay)


def steering_derivatives(theta: float, phi: float, n: int, side: Side, geom: ArrayGeometry):
    """Derivatives of :func:`steering_vector` with respect to azimuth and elevation."""
    _check_subcarrier(n, geom)
    resp = _steering_bundle(side, np.atleast_1d(theta), np.atleast_1d(phi), geom,
                            n=np.atleast_1d(n))
    return resp[1][0, 0], resp[2][0, 0]


def _steering_bundle(side, theta, phi, geom, n=None, narrowband=False):
    """Steering vectors and angle derivatives on all (subcarrier, scatterer) pairs.

    Returns arrays of shape (N, T, M): the vector, d/dtheta, d/dphi.
    """
    nx, ny = geom.axis_sizes(side)
    nidx = np.arange(geom.n_subcarriers) if n is None else np.asarray(n)
    chi = np.ones(len(nidx)) if narrowband else geom.chi(nidx)
    chi = chi[:, None]
    theta = np.asarray(theta, dtype=float)[None, :]
    phi = np.asarray(phi, dtype=float)[None, :]
    ax, ay = _axis_vectors(nx, ny, theta, phi, chi)
    mx = np.arange(nx)
    my = np.arange(ny)
    dax = mx * ax
    day = my * ay
    vec = _kron_last(ax, ay)
    sphi, cphi = np.sin(phi)[..., None], np.cos(phi)[..., None]
    sth, cth = np.sin(theta)[..., None], np.cos(theta)[..., None]
    k = np.pi * chi[..., None]
    d_theta = 1j * k * sphi * (sth * _kron_last(dax, ay) - cth * _kron_last(ax, day))
    d_phi = -1j * k * cphi * (cth * _kron_last(dax, ay) + sth * _kron_last(ax, day))
    return vec, d_theta, d_phi


@dataclass(frozen=True, eq=False)
class Responses:
    """Per-(subcarrier, scatterer) array responses and their partial derivatives.

    ``a``/``b`` have shape (N, T, N_t)/(N, T, N_r); ``f`` and ``df`` are (N, T).
    ``df`` is the derivative of the delay phase with respect to the scatterer range.
    """

    a: np.ndarray
    a_theta: np.ndarray
    a_phi: np.ndarray
    b: np.ndarray
    b_theta: np.ndarray
    b_phi: np.ndarray
    f: np.ndarray
    df: np.ndarray

    @property
    def n_subcarriers(self) -> int:
        return self.a.shape[0]

    @property
    def n_scatterers(self) -> int:
        return self.a.shape[1]

    def rotated(self, phase: float) -> "Responses":
        """Copy with every steering vector (and derivative) multiplied by ``exp(j*phase)``."""
        rot = np.exp(1j * phase)
        return replace(self, a=self.a * rot, a_theta=self.a_theta * rot, a_phi=self.a_phi * rot,
                       b=self.b * rot, b_theta=self.b_theta * rot, b_phi=self.b_phi * rot)


def delay_derivative_factor(geom: ArrayGeometry) -> np.ndarray:
    """``d f_{t,n} / d d_t = factor[n] * f_{t,n}``."""
    n = np.arange(geom.n_subcarriers)
    return -1j * 4 * np.pi * n * geom.subcarrier_spacing_hz / SPEED_OF_LIGHT


def scatterer_responses(theta, phi, d, geom: ArrayGeometry, narrowband: bool = False) -> Responses:
    a, a_t, a_p = _steering_bundle("transmit", theta, phi, geom, narrowband=narrowband)
    b, b_t, b_p = _steering_bundle("receive", theta, phi, geom, narrowband=narrowband)
    n = np.arange(geom.n_subcarriers)[:, None]
    tau = 2 * np.asarray(d, dtype=float)[None, :] / SPEED_OF_LIGHT
    f = np.exp(-2j * np.pi * n * geom.subcarrier_spacing_hz * tau)
    df = delay_derivative_factor(geom)[:, None] * f
    return Responses(a=a, a_theta=a_t, a_phi=a_p, b=b, b_theta=b_t, b_phi=b_p, f=f, df=df)


def grid_responses(grid: ScattererGrid, geom: ArrayGeometry, narrowband: bool = False) -> Responses:
    return scatterer_responses(grid.theta, grid.phi, grid.d, geom, narrowband=narrowband)


def target_response(grid: ScattererGrid, alpha, n: int, geom: ArrayGeometry) -> np.ndarray:
    """Target response matrix ``G_n`` (N_r x N_t) on subcarrier ``n``."""
    _check_subcarrier(n, geom)
    alpha = np.asarray(alpha, dtype=complex)
    if alpha.shape != (grid.size,):
        raise ValueError(f"alpha must have length {grid.size}")
    return target_responses(grid_responses(grid, geom), alpha)[n]


def target_responses(resp: Responses, alpha) -> np.ndarray:
    """All subcarrier responses ``G_n``, shape (N, N_r, N_t)."""
    return np.einsum("t,nt,nti,ntj->nij", np.asarray(alpha, dtype=complex), resp.f, resp.b,
                     resp.a.conj())


# ---------------------------------------------------------------------------
# communication users


@dataclass(frozen=True)
class UserConfig:
    """Placement and fading model of the single-antenna downlink users."""

    count: int = 2
    distance_m: float = 50.0
    pathloss_exponent: float = 3.0
    reference_gain_db: float = -30.0
    rician_factor: float = 10.0
    pure_los: bool = False
    theta_sector_deg: tuple[float, float] = (-60.0, 60.0)
    phi_sector_deg: tuple[float, float] = (30.0, 60.0)

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("user count must be >= 0")

    @property
    def path_gain(self) -> float:
        return 10 ** (self.reference_gain_db / 10) * self.distance_m ** (-self.pathloss_exponent)


def generate_user_channels(geom: ArrayGeometry, users: UserConfig,
                           rng: np.random.Generator) -> np.ndarray:
    """Rician user channels ``h_{n,k}`` with shape (N, K, N_t).

    The LOS part is the transmit steering vector toward a direction drawn
    uniformly in the configured sector with a uniform random phase; the NLOS
    part is i.i.d. unit-variance complex Gaussian per subcarrier.
    """
    K = users.count
    if K < 1:
        raise ValueError("channel generation needs at least one user")
    N, Nt = geom.n_subcarriers, geom.n_tx
    th = np.deg2rad(rng.uniform(*users.theta_sector_deg, size=K))
    ph = np.deg2rad(rng.uniform(*users.phi_sector_deg, size=K))
    los_phase = np.exp(2j * np.pi * rng.uniform(size=K))
    los = _steering_bundle("transmit", th, ph, geom)[0] * los_phase[None, :, None]
    nlos = (rng.standard_normal((N, K, Nt)) + 1j * rng.standard_normal((N, K, Nt))) / np.sqrt(2)
    if users.pure_los:
        h = los
    else:
        kappa = users.rician_factor
        h = np.sqrt(kappa / (1 + kappa)) * los + np.sqrt(1 / (1 + kappa)) * nlos
    return np.sqrt(users.path_gain) * h
