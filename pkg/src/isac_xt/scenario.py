"""Scenario description and its JSON configuration format.

A scenario file is a JSON object with the sections ``array``, ``target``,
``users``, ``budget``, ``sidelobes`` and the top-level ``seed``.  Angles are
given in degrees in files and converted to radians on load.  Unknown keys are
rejected so that typos never silently fall back to defaults.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np

from .model import (
    ArrayGeometry,
    GeometricParams,
    RcsPrior,
    ScattererGrid,
    UserConfig,
    generate_user_channels,
    grid_from_geometry,
    grid_sizes,
    parameter_resolutions,
    resolution_cells,
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SidelobePolicy:
    """Hypothesized ranges at ``d_ref +/- m * spacing_cells * delta_d`` for ``m = 1..count``."""

    count: int = 5
    spacing_cells: float = 1.0

    def __post_init__(self):
        if self.count < 0:
            raise ConfigError("sidelobe count must be >= 0")
        if not self.spacing_cells > 0:
            raise ConfigError("sidelobe spacing must be positive")


@dataclass(frozen=True, eq=False)
class Scenario:
    geometry: ArrayGeometry
    params: GeometricParams
    prior: RcsPrior
    users: UserConfig = UserConfig()
    sinr_db: float = 10.0
    sinr_db_override: np.ndarray | None = field(default=None, repr=False)
    power_w: float = 1.0
    noise_comm_w: float = 1e-12
    noise_sense_w: float = 1e-12
    epsilon_psm: float = 1e-2
    epsilon_dsm: float = 1e-2
    sidelobes: SidelobePolicy = SidelobePolicy()
    grid_override: tuple[int, int, int] | None = None
    weights: np.ndarray | None = field(default=None, repr=False)
    explicit_channels: np.ndarray | None = field(default=None, repr=False)
    seed: int = 0

    def __post_init__(self):
        for name in ("power_w", "noise_comm_w", "noise_sense_w", "epsilon_psm", "epsilon_dsm"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")

    @property
    def n_users(self) -> int:
        return self.users.count

    @cached_property
    def resolutions(self) -> np.ndarray:
        return parameter_resolutions(self.geometry, self.params.phi0)

    @cached_property
    def grid(self) -> ScattererGrid:
        if self.grid_override is not None:
            sizes = self.grid_override
        else:
            extents = (self.params.delta_theta, self.params.delta_phi, self.params.delta_d)
            sizes = grid_sizes(extents, resolution_cells(self.geometry, self.params.phi0))
        return grid_from_geometry(self.params, sizes)

    @cached_property
    def channels(self) -> np.ndarray:
        """User channels, shape (N, K, N_t); empty along K for radar-only scenarios."""
        if self.explicit_channels is not None:
            return self.explicit_channels
        N, Nt = self.geometry.n_subcarriers, self.geometry.n_tx
        if self.users.count == 0:
            return np.zeros((N, 0, Nt), dtype=complex)
        rng = np.random.default_rng([self.seed, 0xC4A7])
        return generate_user_channels(self.geometry, self.users, rng)

    @property
    def sinr_linear(self) -> np.ndarray:
        """SINR targets per (subcarrier, user)."""
        N, K = self.geometry.n_subcarriers, self.users.count
        if self.sinr_db_override is not None:
            db = np.broadcast_to(np.asarray(self.sinr_db_override, dtype=float), (N, K))
        else:
            db = np.full((N, K), self.sinr_db)
        return 10 ** (db / 10)

    def default_weights(self) -> np.ndarray:
        """Diagonal of the weighting matrix: inverse squared resolution per parameter."""
        return 1.0 / self.resolutions ** 2

    @property
    def weight_diag(self) -> np.ndarray:
        return self.default_weights() if self.weights is None else np.asarray(self.weights, float)

    @property
    def sensing_snr(self) -> float:
        g = self.geometry
        return self.power_w * g.n_symbols * g.n_rx * g.n_tx * self.prior.variance / self.noise_sense_w

    @property
    def sensing_snr_db(self) -> float:
        return 10 * math.log10(self.sensing_snr)

    def with_snr_db(self, snr_db: float) -> "Scenario":
        """Copy whose RCS variance is back-solved to hit the requested sensing SNR."""
        g = self.geometry
        var = 10 ** (snr_db / 10) * self.noise_sense_w / (self.power_w * g.n_symbols * g.n_rx * g.n_tx)
        return replace(self, prior=RcsPrior(var))

    def radar_only(self) -> "Scenario":
        return replace(self, users=replace(self.users, count=0), explicit_channels=None,
                       sinr_db_override=None)

    def with_geometry(self, **changes) -> "Scenario":
        """Copy with array/OFDM fields changed; cached grid and channels are recomputed."""
        geometry = replace(self.geometry, **changes)
        return replace(self, geometry=geometry, explicit_channels=None, sinr_db_override=None)

    def replace(self, **changes) -> "Scenario":
        return replace(self, **changes)


# ---------------------------------------------------------------------------
# JSON configuration

_SCHEMA: dict[str, dict[str, Any]] = {
    "array": {
        "n_tx_x": 2, "n_tx_y": 2, "n_rx_x": 4, "n_rx_y": 4,
        "carrier_hz": 28e9, "subcarrier_spacing_hz": 480e3,
        "n_subcarriers": 16, "n_symbols": 16,
    },
    "target": {
        "theta0_deg": 30.0, "delta_theta_deg": 23.5, "phi0_deg": 45.0, "delta_phi_deg": 8.71,
        "d0_m": 25.0, "delta_d_m": 10.25, "grid": None, "snr_db": 20.0, "rcs_variance": None,
    },
    "users": {
        "count": 2, "distance_m": 50.0, "pathloss_exponent": 3.0, "reference_gain_db": -30.0,
        "rician_factor": 10.0, "pure_los": False,
        "theta_sector_deg": [-60.0, 60.0], "phi_sector_deg": [30.0, 60.0],
        "channels": None,
    },
    "budget": {
        "power_w": 1.0, "sinr_db": 10.0, "sinr_db_override": None,
        "noise_comm_dbm": -90.0, "noise_sense_dbm": -90.0,
    },
    "sidelobes": {
        "epsilon_psm": 1e-2, "epsilon_dsm": 1e-2, "count": 5, "spacing_cells": 1.0,
    },
    "weights": None,
    "seed": 0,
}


def _dbm_to_w(dbm: float) -> float:
    return 10 ** ((dbm - 30) / 10)


def _w_to_dbm(w: float) -> float:
    return 10 * math.log10(w) + 30


def _merge_section(name: str, given: Any) -> dict:
    defaults = _SCHEMA[name]
    if given is None:
        return dict(defaults)
    if not isinstance(given, dict):
        raise ConfigError(f"section {name!r} must be an object")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    out = dict(defaults)
    out.update(given)
    return out


def scenario_from_dict(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ConfigError("scenario document must be a JSON object")
    unknown = set(doc) - set(_SCHEMA)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    arr = _merge_section("array", doc.get("array"))
    tgt = _merge_section("target", doc.get("target"))
    usr = _merge_section("users", doc.get("users"))
    bud = _merge_section("budget", doc.get("budget"))
    sl = _merge_section("sidelobes", doc.get("sidelobes"))

    try:
        geometry = ArrayGeometry(**{k: (int(v) if k.startswith("n_") else float(v))
                                    for k, v in arr.items()})
        params = GeometricParams(
            math.radians(tgt["theta0_deg"]), math.radians(tgt["delta_theta_deg"]),
            math.radians(tgt["phi0_deg"]), math.radians(tgt["delta_phi_deg"]),
            float(tgt["d0_m"]), float(tgt["delta_d_m"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    channels = None
    if usr["channels"] is not None:
        ch = usr["channels"]
        try:
            channels = np.asarray(ch["real"], float) + 1j * np.asarray(ch["imag"], float)
        except (KeyError, TypeError) as exc:
            raise ConfigError("users.channels needs 'real' and 'imag' arrays") from exc
        expected = (geometry.n_subcarriers, int(usr["count"]), geometry.n_tx)
        if channels.shape != expected:
            raise ConfigError(f"users.channels has shape {channels.shape}, expected {expected}")
    users = UserConfig(
        count=int(usr["count"]), distance_m=float(usr["distance_m"]),
        pathloss_exponent=float(usr["pathloss_exponent"]),
        reference_gain_db=float(usr["reference_gain_db"]),
        rician_factor=float(usr["rician_factor"]), pure_los=bool(usr["pure_los"]),
        theta_sector_deg=tuple(float(x) for x in usr["theta_sector_deg"]),
        phi_sector_deg=tuple(float(x) for x in usr["phi_sector_deg"]),
    )
    grid = tgt["grid"]
    if grid is not None:
        if len(grid) != 3:
            raise ConfigError("target.grid must list three sizes")
        grid = tuple(int(x) for x in grid)
    weights = doc.get("weights", None)
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (6,) or np.any(weights < 0):
            raise ConfigError("weights must be six nonnegative numbers")
    override = bud["sinr_db_override"]
    if override is not None:
        override = np.asarray(override, dtype=float)

    scen = Scenario(
        geometry=geometry, params=params, prior=RcsPrior(1.0), users=users,
        sinr_db=float(bud["sinr_db"]), sinr_db_override=override,
        power_w=float(bud["power_w"]),
        noise_comm_w=_dbm_to_w(float(bud["noise_comm_dbm"])),
        noise_sense_w=_dbm_to_w(float(bud["noise_sense_dbm"])),
        epsilon_psm=float(sl["epsilon_psm"]), epsilon_dsm=float(sl["epsilon_dsm"]),
        sidelobes=SidelobePolicy(int(sl["count"]), float(sl["spacing_cells"])),
        grid_override=grid, weights=weights, explicit_channels=channels,
        seed=int(doc.get("seed", 0)),
    )
    if tgt["rcs_variance"] is not None:
        if tgt.get("snr_db") is not None and "snr_db" in (doc.get("target") or {}):
            raise ConfigError("give either target.snr_db or target.rcs_variance, not both")
        return replace(scen, prior=RcsPrior(float(tgt["rcs_variance"])))
    return scen.with_snr_db(float(tgt["snr_db"]))


def scenario_to_dict(s: Scenario) -> dict:
    g, p, u = s.geometry, s.params, s.users
    doc = {
        "array": {
            "n_tx_x": g.n_tx_x, "n_tx_y": g.n_tx_y, "n_rx_x": g.n_rx_x, "n_rx_y": g.n_rx_y,
            "carrier_hz": g.carrier_hz, "subcarrier_spacing_hz": g.subcarrier_spacing_hz,
            "n_subcarriers": g.n_subcarriers, "n_symbols": g.n_symbols,
        },
        "target": {
            "theta0_deg": math.degrees(p.theta0), "delta_theta_deg": math.degrees(p.delta_theta),
            "phi0_deg": math.degrees(p.phi0), "delta_phi_deg": math.degrees(p.delta_phi),
            "d0_m": p.d0, "delta_d_m": p.delta_d,
            "grid": list(s.grid_override) if s.grid_override else None,
            "rcs_variance": s.prior.variance,
        },
        "users": {
            "count": u.count, "distance_m": u.distance_m, "pathloss_exponent": u.pathloss_exponent,
            "reference_gain_db": u.reference_gain_db, "rician_factor": u.rician_factor,
            "pure_los": u.pure_los, "theta_sector_deg": list(u.theta_sector_deg),
            "phi_sector_deg": list(u.phi_sector_deg),
            "channels": None if s.explicit_channels is None else {
                "real": s.explicit_channels.real.tolist(),
                "imag": s.explicit_channels.imag.tolist()},
        },
        "budget": {
            "power_w": s.power_w, "sinr_db": s.sinr_db,
            "sinr_db_override": None if s.sinr_db_override is None else
            np.asarray(s.sinr_db_override).tolist(),
            "noise_comm_dbm": _w_to_dbm(s.noise_comm_w),
            "noise_sense_dbm": _w_to_dbm(s.noise_sense_w),
        },
        "sidelobes": {
            "epsilon_psm": s.epsilon_psm, "epsilon_dsm": s.epsilon_dsm,
            "count": s.sidelobes.count, "spacing_cells": s.sidelobes.spacing_cells,
        },
        "weights": None if s.weights is None else np.asarray(s.weights).tolist(),
        "seed": s.seed,
    }
    return doc


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return scenario_from_dict(doc)


def save_scenario(s: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(s), indent=2) + "\n")


def desk_scenario(**overrides) -> Scenario:
    """The reduced-scale default configuration (2x2 transmit, 4x4 receive, N=L=16, K=2)."""
    doc = {"target": {"grid": [3, 2, 2]}}
    scen = scenario_from_dict(doc)
    return replace(scen, **overrides) if overrides else scen


def paper_scenario() -> Scenario:
    """Full-size configuration (4x4 transmit, 36x36 receive, N=128, L=32, K=6)."""
    doc = {
        "array": {"n_tx_x": 4, "n_tx_y": 4, "n_rx_x": 36, "n_rx_y": 36,
                  "n_subcarriers": 128, "n_symbols": 32},
        "target": {"grid": [4, 2, 3]},
        "users": {"count": 6},
    }
    return scenario_from_dict(doc)
