"""Experiment orchestration: sweeps, Monte-Carlo aggregation and CSV/SVG output.

A sweep varies one scenario field over a list of values.  At every point each
optimizer model's beamformer is designed once, its geometric bounds are
computed, and the configured estimators are run for ``trials`` independent
draws of RCS, symbols and noise.  Trials use common random numbers: trial
``m`` at sweep index ``i`` draws from the same streams for every model, so
model differences are not masked by sampling noise.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import fisher
from .ambiguity import normalized_sidelobe
from .beamform import BeamformerSolution, BeamformingInfeasible, beampattern, design
from .estimate import (
    ESTIMATORS,
    EstimatorConfig,
    draw_rcs,
    precoders_from_solution,
    simulate_observations,
)
from .model import PARAM_NAMES, ScattererGrid, resolution_cells
from .scenario import ConfigError, Scenario

log = logging.getLogger(__name__)

SWEEP_AXES = ("snr_db", "sinr_db", "n_rx", "n_subcarriers")
MODELS = ("psm", "dsm", "ucm")
ANGLE_PARAMS = slice(0, 4)
RANGE_PARAMS = slice(4, 6)
AXIS_FILES = {"snr_db": "fig4_snr.csv", "sinr_db": "fig5_sinr.csv", "n_rx": "fig6_nr.csv"}
RUNTIME_FILE = "fig7_runtime.csv"


# ---------------------------------------------------------------------------
# sweep description


@dataclass(frozen=True)
class SweepSpec:
    """One swept axis.

    ``estimators=None`` pairs every optimizer model with its own estimator;
    otherwise every listed estimator runs on every optimizer's design.
    ``n_rx`` is the per-axis receive array size (``N_rx = n_rx**2``).
    """

    axis: str
    values: tuple[float, ...]
    trials: int = 200
    models: tuple[str, ...] = MODELS
    estimators: tuple[str, ...] | None = ("psm",)
    radar_only: bool = False
    sidelobes: bool = True
    noise_free: bool = False
    init_mode: str = "benchmark"
    init_perturbation: float = 0.1

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {self.axis!r}; expected one of {SWEEP_AXES}")
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        for m in self.models + (self.estimators or ()):
            if m not in MODELS:
                raise ConfigError(f"unknown model {m!r}")
        if self.axis in ("n_rx", "n_subcarriers") and any(v != int(v) or v < 1 for v in self.values):
            raise ConfigError(f"{self.axis} values must be positive integers")

    @property
    def combos(self) -> list[tuple[str, str]]:
        if self.estimators is None:
            return [(m, m) for m in self.models]
        return [(m, e) for m in self.models for e in self.estimators]

    def estimator_config(self) -> EstimatorConfig:
        return EstimatorConfig(init_mode=self.init_mode, init_perturbation=self.init_perturbation)

    @classmethod
    def from_dict(cls, doc: dict) -> "SweepSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown sweep keys: {sorted(unknown)}")
        doc = dict(doc)
        for key in ("values", "models"):
            if key in doc:
                doc[key] = tuple(doc[key])
        if doc.get("estimators") is not None:
            doc["estimators"] = tuple(doc["estimators"])
        return cls(**doc)


def load_sweeps(path: str | Path) -> list[SweepSpec]:
    """Read a sweep file: one sweep object, or ``{"sweeps": [...]}``."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    items = doc["sweeps"] if isinstance(doc, dict) and "sweeps" in doc else [doc]
    return [SweepSpec.from_dict(item) for item in items]


def point_scenario(scenario: Scenario, axis: str, value: float, radar_only: bool = False) -> Scenario:
    """The scenario at one sweep value."""
    if radar_only:
        scenario = scenario.radar_only()
    if axis == "snr_db":
        return scenario.with_snr_db(float(value))
    if axis == "sinr_db":
        return replace(scenario, sinr_db=float(value), sinr_db_override=None)
    if axis == "n_rx":
        return scenario.with_geometry(n_rx_x=int(value), n_rx_y=int(value))
    if axis == "n_subcarriers":
        return scenario.with_geometry(n_subcarriers=int(value))
    raise ConfigError(f"unknown sweep axis {axis!r}")


# ---------------------------------------------------------------------------
# results


@dataclass
class ResultRow:
    axis: str
    value: float
    optimizer: str
    estimator: str
    valid: bool
    trials: int
    failures: int
    rcrb_angle: float
    rmse_angle: float
    rcrb_range: float
    rmse_range: float
    mapped_rcrb_angle: float
    mapped_rcrb_range: float
    sinr_margin_db: float
    optimizer_s: float
    estimator_s: float
    rmse: tuple[float, ...] = (math.nan,) * 6
    rcrb: tuple[float, ...] = (math.nan,) * 6
    note: str = ""
    sq_errors: np.ndarray | None = field(default=None, repr=False, compare=False)


_SCALARS = ["axis", "value", "optimizer", "estimator", "valid", "trials", "failures",
            "rcrb_angle", "rmse_angle", "rcrb_range", "rmse_range",
            "mapped_rcrb_angle", "mapped_rcrb_range", "sinr_margin_db"]
_TIMES = ["optimizer_s", "estimator_s"]
_PER_PARAM = [f"rmse_{p}" for p in PARAM_NAMES] + [f"rcrb_{p}" for p in PARAM_NAMES]

RESULT_COLUMNS = _SCALARS + _TIMES + _PER_PARAM + ["note"]
ACCURACY_COLUMNS = _SCALARS + _PER_PARAM + ["note"]
RESULT_SCHEMA = ",".join(RESULT_COLUMNS)
ACCURACY_SCHEMA = ",".join(ACCURACY_COLUMNS)
RUNTIME_COLUMNS = ["axis", "value"] + [f"{m}_optimizer_s" for m in MODELS] + \
    [f"{m}_estimator_s" for m in MODELS] + \
    ["optimizer_ratio_psm_dsm", "optimizer_ratio_psm_ucm",
     "estimator_ratio_psm_dsm", "estimator_ratio_psm_ucm"]
RUNTIME_SCHEMA = ",".join(RUNTIME_COLUMNS)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _row_dict(row: ResultRow) -> dict:
    d = {name: getattr(row, name) for name in _SCALARS + _TIMES + ["note"]}
    for i, p in enumerate(PARAM_NAMES):
        d[f"rmse_{p}"] = row.rmse[i]
        d[f"rcrb_{p}"] = row.rcrb[i]
    return d


@dataclass
class ResultTable:
    rows: list[ResultRow] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return all(r.valid for r in self.rows)

    def select(self, optimizer: str | None = None, estimator: str | None = None) -> list[ResultRow]:
        return [r for r in self.rows if (optimizer is None or r.optimizer == optimizer)
                and (estimator is None or r.estimator == estimator)]

    def to_csv(self, path: str | Path, timing: bool = True) -> Path:
        """Write the table; ``timing=False`` omits the wall-time columns so the file is reproducible."""
        cols = RESULT_COLUMNS if timing else ACCURACY_COLUMNS
        return write_csv(path, cols, ([_fmt(_row_dict(r)[c]) for c in cols] for r in self.rows))

    @classmethod
    def from_csv(cls, path: str | Path) -> "ResultTable":
        header, body = read_csv(path)
        rows = []
        for rec in body:
            d = dict(zip(header, rec))
            rows.append(ResultRow(
                axis=d["axis"], value=float(d["value"]), optimizer=d["optimizer"],
                estimator=d["estimator"], valid=d["valid"] == "1", trials=int(d["trials"]),
                failures=int(d["failures"]),
                **{k: float(d[k]) for k in _SCALARS[7:]},
                **{k: float(d.get(k, "nan")) for k in _TIMES},
                rmse=tuple(float(d[f"rmse_{p}"]) for p in PARAM_NAMES),
                rcrb=tuple(float(d[f"rcrb_{p}"]) for p in PARAM_NAMES),
                note=d["note"]))
        return cls(rows)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if not rows:
        raise ValueError(f"{path} is empty")
    return rows[0], rows[1:]


# ---------------------------------------------------------------------------
# trials


def trial_streams(seed: int, point: int, trial: int) -> dict[str, np.random.Generator]:
    """Independent generators for one trial, derived from ``(seed, sweep index, trial)``."""
    children = np.random.SeedSequence([seed, point, trial]).spawn(4)
    return dict(zip(("rcs", "symbols", "noise", "init"), (np.random.default_rng(c) for c in children)))


def _run_trials(scenario: Scenario, precoders: list[np.ndarray], estimator: str, cfg: EstimatorConfig,
                seed: int, point: int, trials: Sequence[int], noise_free: bool):
    """Errors (trials x 6), per-trial seconds and failure flags for one design/estimator pair."""
    est = ESTIMATORS[estimator]
    truth = scenario.params.as_array()
    errs, secs, failed = [], [], []
    for m in trials:
        g = trial_streams(seed, point, m)
        alpha = draw_rcs(scenario, g["rcs"])
        obs = simulate_observations(scenario, precoders, alpha, g["symbols"],
                                    noise_var=0.0 if noise_free else None, noise_rng=g["noise"])
        t0 = time.perf_counter()
        try:
            res = est(obs, scenario, cfg, g["init"])
        except (ValueError, np.linalg.LinAlgError) as exc:
            log.debug("trial %d failed: %s", m, exc)
            errs.append(np.full(6, np.nan))
            failed.append(True)
        else:
            errs.append(res.params - truth)
            failed.append(False)
        secs.append(time.perf_counter() - t0)
    return np.array(errs).reshape(-1, 6), np.array(secs), np.array(failed, bool)


def _run_trials_packed(args):
    return _run_trials(*args)


def _chunks(n: int, parts: int) -> list[range]:
    parts = max(1, min(parts, n))
    edges = np.linspace(0, n, parts + 1).round().astype(int)
    return [range(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _group_sum(vals: np.ndarray, sl: slice) -> float:
    v = vals[sl]
    v = v[np.isfinite(v)] if np.any(np.isfinite(v)) else v
    return float(np.sum(v)) if v.size else math.nan


def _rcrb(cov, scenario: Scenario) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", fisher.SingularFimWarning)
        crbs = fisher.mapped_geometric_crbs(cov, scenario.grid, scenario.prior, scenario.geometry,
                                            scenario.noise_sense_w)
    return {k: np.sqrt(np.diag(v)) for k, v in crbs.items()}


def _sinr_margin(sol: BeamformerSolution) -> float:
    rep = sol.report
    if rep is None or rep.sinr_db.size == 0:
        return math.nan
    return float(np.mean(rep.sinr_db - rep.sinr_target_db))


def run_sweep(spec: SweepSpec, scenario: Scenario, seed: int | None = None, jobs: int = 1,
              sweep_index_offset: int = 0) -> ResultTable:
    """Design, bound and Monte-Carlo evaluation at every sweep value.

    A point whose design fails is recorded with ``valid=False`` and the sweep
    continues.  With ``jobs > 1`` trials run in worker processes; results are
    merged by index, so the output does not depend on ``jobs``.
    """
    seed = scenario.seed if seed is None else seed
    cfg = spec.estimator_config()
    table = ResultTable()
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        for i, value in enumerate(spec.values):
            point = sweep_index_offset + i
            sc = point_scenario(scenario, spec.axis, value, spec.radar_only)
            designs: dict[str, BeamformerSolution | str] = {}
            for model in spec.models:
                try:
                    designs[model] = design(sc, model, spec.sidelobes)
                except (BeamformingInfeasible, ValueError, np.linalg.LinAlgError) as exc:
                    designs[model] = f"{type(exc).__name__}: {exc}"
                    log.warning("%s=%s %s design failed: %s", spec.axis, value, model, exc)
            for opt, est in spec.combos:
                sol = designs[opt]
                base = dict(axis=spec.axis, value=float(value), optimizer=opt, estimator=est)
                if isinstance(sol, str) or sol.status != "optimal":
                    note = sol if isinstance(sol, str) else f"solver status {sol.status}"
                    table.rows.append(ResultRow(**base, valid=False, trials=0, failures=0,
                                                **{k: math.nan for k in _SCALARS[7:] + _TIMES}, note=note))
                    continue
                rcrbs = _rcrb(sol.R, sc)
                precoders = precoders_from_solution(sol)
                args = [(sc, precoders, est, cfg, seed, point, list(r), spec.noise_free)
                        for r in _chunks(spec.trials, jobs if pool else 1)]
                parts = list(pool.map(_run_trials_packed, args)) if pool else [_run_trials(*a) for a in args]
                errs = np.concatenate([p[0] for p in parts])
                secs = np.concatenate([p[1] for p in parts])
                failed = np.concatenate([p[2] for p in parts])
                ok = ~failed
                rmse = np.sqrt(np.mean(errs[ok] ** 2, axis=0)) if ok.any() else np.full(6, np.nan)
                rmse = np.where(sc.grid.active_mask, rmse, np.nan)
                bound = rcrbs["PSM"]
                mapped = rcrbs[opt.upper()]
                table.rows.append(ResultRow(
                    **base, valid=bool(ok.any()), trials=int(ok.sum()), failures=int(failed.sum()),
                    rcrb_angle=_group_sum(bound, ANGLE_PARAMS), rmse_angle=_group_sum(rmse, ANGLE_PARAMS),
                    rcrb_range=_group_sum(bound, RANGE_PARAMS), rmse_range=_group_sum(rmse, RANGE_PARAMS),
                    mapped_rcrb_angle=_group_sum(mapped, ANGLE_PARAMS),
                    mapped_rcrb_range=_group_sum(mapped, RANGE_PARAMS),
                    sinr_margin_db=_sinr_margin(sol),
                    optimizer_s=sol.build_seconds + sol.solve_seconds,
                    estimator_s=float(np.mean(secs)),
                    rmse=tuple(float(x) for x in rmse), rcrb=tuple(float(x) for x in bound),
                    note="" if ok.all() else f"{int(failed.sum())} estimator failures",
                    sq_errors=errs[ok] ** 2))
    finally:
        if pool is not None:
            pool.shutdown()
    return table


# ---------------------------------------------------------------------------
# statistics


def monotone_trend_test(sq_errors: Sequence[np.ndarray], group: slice = ANGLE_PARAMS,
                        confidence: float = 0.95, n_boot: int = 2000, seed: int = 0) -> tuple[bool, list[float]]:
    """Bootstrap check that a group RMSE sequence is non-increasing.

    ``sq_errors[i]`` holds per-trial squared errors (trials x 6) at sweep point
    ``i``.  For every consecutive pair the RMSE increase is bootstrapped; the
    sequence fails only if some increase is significant, i.e. the lower
    ``(1 - confidence)/2`` quantile of ``RMSE[i+1] - RMSE[i]`` is above zero.
    Returns the verdict and those lower quantiles.
    """
    rng = np.random.default_rng(seed)
    q = (1 - confidence) / 2

    def group_rmse(e, idx):
        return np.nansum(np.sqrt(np.nanmean(e[idx][:, group], axis=-2)), axis=-1)

    lows = []
    for a, b in zip(sq_errors[:-1], sq_errors[1:]):
        ia = rng.integers(0, len(a), (n_boot, len(a)))
        ib = rng.integers(0, len(b), (n_boot, len(b)))
        diff = group_rmse(b, ib) - group_rmse(a, ia)
        lows.append(float(np.quantile(diff, q)))
    return all(v <= 0 for v in lows), lows


# ---------------------------------------------------------------------------
# figure data


def angular_profile(alpha: np.ndarray, grid: ScattererGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``|alpha_t|`` summed over range layers on the (theta, phi) grid.

    Returns ``(theta_axis, phi_axis, map)`` with ``map`` of shape (T_theta, T_phi).
    """
    alpha = np.asarray(alpha)
    if alpha.shape != (grid.size,):
        raise ValueError(f"expected {grid.size} RCS values, got shape {alpha.shape}")
    out = np.zeros((grid.t_theta, grid.t_phi))
    np.add.at(out, (grid.p, grid.q), np.abs(alpha))
    theta_axis = np.array([grid.theta[np.flatnonzero(grid.p == i)[0]] for i in range(grid.t_theta)])
    phi_axis = np.array([grid.phi[np.flatnonzero(grid.q == j)[0]] for j in range(grid.t_phi)])
    return theta_axis, phi_axis, out


def ambiguity_rows(scenario: Scenario, designs: dict[str, BeamformerSolution], span_cells: float = 6.0,
                   points: int = 241) -> tuple[list[str], list[list[float]]]:
    """Normalized range ambiguity (dB) of each design around the target center."""
    geom, grid = scenario.geometry, scenario.grid
    dd = resolution_cells(geom, scenario.params.phi0)[2]
    offsets = np.linspace(-span_cells, span_cells, points)
    ranges = scenario.params.d0 + offsets * dd
    keep = ranges >= 0
    offsets, ranges = offsets[keep], ranges[keep]
    header = ["range_m", "offset_cells"] + [f"{name}_db" for name in designs]
    cols = [10 * np.log10(np.maximum(normalized_sidelobe(sol.R, grid, geom, ranges, scenario.power_w), 1e-300))
            for sol in designs.values()]
    return header, [[r, o, *(c[i] for c in cols)] for i, (r, o) in enumerate(zip(ranges, offsets))]


def beampattern_rows(scenario: Scenario, designs: dict[str, BeamformerSolution],
                     points: int = 361) -> tuple[list[str], list[list[float]]]:
    """Transmit beampattern (dB) over azimuth at the target elevation."""
    theta = np.linspace(-np.pi / 2, np.pi / 2, points)
    header = ["theta_deg"] + [f"{name}_db" for name in designs]
    cols = [10 * np.log10(np.maximum(beampattern(sol.R, scenario, theta, scenario.params.phi0)[:, 0], 1e-300))
            for sol in designs.values()]
    return header, [[np.degrees(t), *(c[i] for c in cols)] for i, t in enumerate(theta)]


def profile_rows(grid: ScattererGrid, profiles: dict[str, np.ndarray]) -> tuple[list[str], list[list]]:
    """Angular profiles stacked by source: one matrix block per entry of ``profiles``."""
    header = ["source", "theta_deg"]
    rows = []
    for name, alpha in profiles.items():
        th, ph, mat = angular_profile(alpha, grid)
        if len(header) == 2:
            header += [f"phi_deg={np.degrees(p)!r}" for p in ph]
        for i, t in enumerate(th):
            rows.append([name, np.degrees(t), *mat[i]])
    return header, rows


def figure_designs(scenario: Scenario) -> dict[str, BeamformerSolution]:
    """Constrained designs of all models plus the sidelobe-free PSM and DSM designs."""
    return {
        "psm": design(scenario, "psm"),
        "psm_unconstrained": design(scenario, "psm", sidelobes=False),
        "dsm": design(scenario, "dsm"),
        "dsm_unconstrained": design(scenario, "dsm", sidelobes=False),
        "ucm": design(scenario, "ucm"),
    }


def figure_profiles(scenario: Scenario, designs: dict[str, BeamformerSolution], seed: int,
                    cfg: EstimatorConfig | None = None) -> dict[str, np.ndarray]:
    """Truth and each matched estimator's RCS estimate from one shared draw."""
    g = trial_streams(seed, 0, 0)
    alpha = draw_rcs(scenario, g["rcs"])
    out = {"truth": alpha}
    for model in MODELS:
        if model not in designs:
            continue
        g = trial_streams(seed, 0, 0)
        draw_rcs(scenario, g["rcs"])
        obs = simulate_observations(scenario, precoders_from_solution(designs[model]), alpha, g["symbols"],
                                    noise_rng=g["noise"])
        try:
            out[model] = ESTIMATORS[model](obs, scenario, cfg, g["init"]).alpha
        except (ValueError, np.linalg.LinAlgError) as exc:
            log.warning("%s estimator failed on the profile draw: %s", model, exc)
    return out


# ---------------------------------------------------------------------------
# output


def runtime_rows(tables: Iterable[ResultTable]) -> list[list]:
    """Matched-model wall times and PSM/DSM, PSM/UCM ratios per sweep value."""
    rows = []
    for table in tables:
        keys = []
        for r in table.rows:
            if (r.axis, r.value) not in keys:
                keys.append((r.axis, r.value))
        for axis, value in keys:
            here = [r for r in table.rows if r.axis == axis and r.value == value and r.valid]
            opt = {m: next((r.optimizer_s for r in here if r.optimizer == m), math.nan) for m in MODELS}
            est = {m: next((r.estimator_s for r in here if r.estimator == m and r.optimizer == m),
                           next((r.estimator_s for r in here if r.estimator == m), math.nan)) for m in MODELS}

            def ratio(a, b):
                return a / b if b and np.isfinite(a) and np.isfinite(b) else math.nan

            rows.append([axis, value, *(opt[m] for m in MODELS), *(est[m] for m in MODELS),
                         ratio(opt["psm"], opt["dsm"]), ratio(opt["psm"], opt["ucm"]),
                         ratio(est["psm"], est["dsm"]), ratio(est["psm"], est["ucm"])])
    return rows


def emit_outputs(tables: Sequence[ResultTable], out_dir: str | Path,
                 extra: dict[str, tuple[list[str], list[list]]] | None = None,
                 plots: bool = False) -> list[Path]:
    """Write the figure CSVs (and SVG renderings when ``plots``).

    Accuracy tables go to ``fig4_snr.csv``, ``fig5_sinr.csv`` and
    ``fig6_nr.csv`` without wall times; every table's timings go to
    ``fig7_runtime.csv``.  ``extra`` maps file stems such as
    ``fig1_ambiguity`` to ``(header, rows)``.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc.strerror or exc}") from exc
    written = []
    by_axis: dict[str, ResultTable] = {}
    for t in tables:
        for r in t.rows:
            by_axis.setdefault(r.axis, ResultTable()).rows.append(r)
    for axis, name in AXIS_FILES.items():
        if axis in by_axis:
            written.append(by_axis[axis].to_csv(out / name, timing=False))
    if tables:
        written.append(write_csv(out / RUNTIME_FILE, RUNTIME_COLUMNS, runtime_rows(tables)))
    for stem, (header, rows) in (extra or {}).items():
        written.append(write_csv(out / f"{stem}.csv", header, rows))
    if plots:
        written += render_plots(written)
    return written


# (x column, first series column) for the line plots
_PLOT_COLUMNS = {"fig1_ambiguity": (1, 2), "fig2_beampattern": (0, 1), "fig7_runtime": (1, 2)}


def render_plots(csv_paths: Sequence[Path]) -> list[Path]:
    """SVG line plots rendered from the CSVs (requires matplotlib)."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib is not installed; skipping plots")
        return []
    out = []
    for path in csv_paths:
        header, rows = read_csv(path)
        if not rows:
            continue
        fig, ax = plt.subplots(figsize=(6, 4))
        stem = path.stem
        if stem in ("fig4_snr", "fig5_sinr", "fig6_nr"):
            idx = {c: i for i, c in enumerate(header)}
            combos = sorted({(r[idx["optimizer"]], r[idx["estimator"]]) for r in rows})
            for opt, est in combos:
                sel = [r for r in rows if r[idx["optimizer"]] == opt and r[idx["estimator"]] == est]
                x = [float(r[idx["value"]]) for r in sel]
                for grp, style in (("angle", "-"), ("range", "--")):
                    ax.semilogy(x, [float(r[idx[f"rcrb_{grp}"]]) for r in sel], style,
                                label=f"RCRB {grp} ({opt})")
                    ax.semilogy(x, [float(r[idx[f"rmse_{grp}"]]) for r in sel], style, marker="o",
                                label=f"RMSE {grp} ({opt}->{est})")
            ax.set_xlabel(rows[0][idx["axis"]])
            ax.legend(fontsize=6)
        elif stem == "fig3_profile":
            blocks = {}
            for r in rows:
                blocks.setdefault(r[0], []).append([float(v) for v in r[2:]])
            plt.close(fig)
            fig, axes = plt.subplots(1, len(blocks), figsize=(3 * len(blocks), 3))
            for a, (name, mat) in zip(np.atleast_1d(axes), blocks.items()):
                a.imshow(np.array(mat), aspect="auto")
                a.set_title(name)
        else:
            xcol, first = _PLOT_COLUMNS.get(stem, (0, 1))
            x = [float(r[xcol]) for r in rows]
            for j, name in enumerate(header[first:], start=first):
                try:
                    ax.plot(x, [float(r[j]) for r in rows], label=name)
                except ValueError:
                    continue
            ax.set_xlabel(header[xcol])
            ax.legend(fontsize=6)
        target = path.with_suffix(".svg")
        fig.savefig(target, format="svg", metadata={"Date": None})
        plt.close(fig)
        out.append(target)
    return out
