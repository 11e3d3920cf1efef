"""Command-line entry point ``isac-xt``.

Subcommands: ``run`` (sweeps), ``crb`` (bounds only), ``ambiguity``,
``beamform`` and ``estimate``.  Scenario files use degrees for angles; when
``--scenario`` is omitted the desk-scale configuration is used.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import fisher, harness
from .ambiguity import normalized_sidelobe
from .beamform import BeamformingInfeasible, beampattern, design, uniform_design
from .estimate import ESTIMATORS, EstimatorConfig, draw_rcs, precoders_from_solution, simulate_observations
from .model import PARAM_NAMES, resolution_cells
from .scenario import ConfigError, Scenario, desk_scenario, load_scenario

log = logging.getLogger("isac_xt")


def _scenario(args) -> Scenario:
    sc = load_scenario(args.scenario) if args.scenario else desk_scenario()
    if getattr(args, "radar_only", False):
        sc = sc.radar_only()
    return sc


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}")


def _covariance(sc: Scenario, which: str):
    if which == "uniform":
        return uniform_design(sc)
    return design(sc, which).R


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> int:
    sc = _scenario(args)
    sweeps = harness.load_sweeps(args.sweep)
    seed = sc.seed if args.seed is None else args.seed
    tables = []
    offset = 0
    for spec in sweeps:
        t0 = time.perf_counter()
        tables.append(harness.run_sweep(spec, sc, seed=seed, jobs=args.jobs, sweep_index_offset=offset))
        offset += len(spec.values)
        log.info("sweep over %s finished in %.1f s", spec.axis, time.perf_counter() - t0)
    extra = {}
    if args.figures:
        designs = harness.figure_designs(sc)
        extra["fig1_ambiguity"] = harness.ambiguity_rows(sc, {k: designs[k] for k in
                                                              ("psm", "psm_unconstrained", "dsm", "dsm_unconstrained")})
        extra["fig2_beampattern"] = harness.beampattern_rows(sc, {k: designs[k] for k in ("psm", "dsm", "ucm")})
        extra["fig3_profile"] = harness.profile_rows(sc.grid, harness.figure_profiles(sc, designs, seed))
    paths = harness.emit_outputs(tables, args.out, extra, plots=args.plots)
    for p in paths:
        print(p)
    bad = [r for t in tables for r in t.rows if not r.valid]
    for r in bad:
        print(f"invalid point {r.axis}={r.value} {r.optimizer}->{r.estimator}: {r.note}", file=sys.stderr)
    return 0 if not bad else 1


def cmd_crb(args) -> int:
    sc = _scenario(args)
    snrs = args.snr_db or [sc.sensing_snr_db]
    header = ["snr_db", "design", "bound"] + [f"rcrb_{p}" for p in PARAM_NAMES] + ["rcrb_angle", "rcrb_range"]
    rows = []
    for snr in snrs:
        point = sc.with_snr_db(snr)
        cov = _covariance(point, args.design)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", fisher.SingularFimWarning)
            bounds = fisher.mapped_geometric_crbs(cov, point.grid, point.prior, point.geometry,
                                                  point.noise_sense_w)
        for name, crb in bounds.items():
            r = np.sqrt(np.diag(crb))
            rows.append([snr, args.design, name, *r,
                         float(np.nansum(r[harness.ANGLE_PARAMS])), float(np.nansum(r[harness.RANGE_PARAMS]))])
    path = harness.write_csv(Path(_out_dir(args.out)) / "crb.csv", header, rows)
    print(path)
    return 0


def cmd_ambiguity(args) -> int:
    sc = _scenario(args)
    sol = design(sc, args.model, sidelobes=not args.no_sidelobes)
    geom = sc.geometry
    dd = resolution_cells(geom, sc.params.phi0)[2]
    offsets = np.linspace(-args.span_cells, args.span_cells, args.points)
    ranges = sc.params.d0 + offsets * dd
    ranges = ranges[ranges >= 0]
    ratio = normalized_sidelobe(sol.R, sc.grid, geom, ranges, sc.power_w)
    rows = [[d, 10 * math.log10(max(v, 1e-300))] for d, v in zip(ranges, ratio)]
    path = harness.write_csv(Path(_out_dir(args.out)) / "ambiguity.csv", ["range_m", "ratio_db"], rows)
    print(path)
    return 0


def write_covariances(R: np.ndarray, path: Path) -> Path:
    """Text matrix format: one ``subcarrier row col real imag`` line per entry."""
    rows = [[n, i, j, R[n, i, j].real, R[n, i, j].imag]
            for n in range(R.shape[0]) for i in range(R.shape[1]) for j in range(R.shape[2])]
    return harness.write_csv(path, ["subcarrier", "row", "col", "real", "imag"], rows)


def read_covariances(path: str | Path) -> np.ndarray:
    header, rows = harness.read_csv(path)
    idx = np.array([[int(r[0]), int(r[1]), int(r[2])] for r in rows])
    vals = np.array([float(r[3]) + 1j * float(r[4]) for r in rows])
    R = np.zeros(tuple(idx.max(axis=0) + 1), dtype=complex)
    R[idx[:, 0], idx[:, 1], idx[:, 2]] = vals
    return R


def cmd_beamform(args) -> int:
    sc = _scenario(args)
    out = _out_dir(args.out)
    try:
        sol = design(sc, args.model, sidelobes=not args.no_sidelobes)
    except BeamformingInfeasible as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    rep = sol.report
    rows = [["power", "", rep.power, rep.power_budget, int(rep.power_ok)]]
    for n, k in np.ndindex(rep.sinr_db.shape):
        rows.append(["sinr_db", f"{n}:{k}", rep.sinr_db[n, k], rep.sinr_target_db[n, k],
                     int(rep.sinr_db[n, k] >= rep.sinr_target_db[n, k] - 0.01)])
    for s, (ratios, eps) in enumerate(zip(rep.sidelobe_ratios, rep.sidelobe_epsilons)):
        for i, v in enumerate(ratios):
            rows.append(["sidelobe_ratio", f"{s}:{i}", v, eps, int(v <= eps * (1 + 1e-3))])
    rows.append(["weighted_crb", "", rep.weighted_crb, "", ""])
    theta = np.linspace(-np.pi / 2, np.pi / 2, args.points)
    pattern = beampattern(sol.R, sc, theta, sc.params.phi0)[:, 0]
    paths = [
        write_covariances(sol.R, out / "covariances.csv"),
        harness.write_csv(out / "constraints.csv", ["kind", "index", "value", "limit", "ok"], rows),
        harness.write_csv(out / "beampattern.csv", ["theta_deg", "pattern_db"],
                          [[math.degrees(t), 10 * math.log10(max(p, 1e-300))] for t, p in zip(theta, pattern)]),
    ]
    for p in paths:
        print(p)
    print(f"status={sol.status} objective={sol.objective:.6g} solve_s={sol.solve_seconds:.2f} ok={rep.ok}")
    return 0 if rep.ok else 1


def cmd_estimate(args) -> int:
    sc = _scenario(args)
    out = _out_dir(args.out)
    seed = sc.seed if args.seed is None else args.seed
    cfg = EstimatorConfig(init_mode=args.init, init_perturbation=args.perturbation)
    est = ESTIMATORS[args.model]
    truth = sc.params.as_array()
    trial_rows, agg_rows = [], []
    snrs = args.snr_db or [sc.sensing_snr_db]
    for i, snr in enumerate(snrs):
        point = sc.with_snr_db(snr)
        sol = design(point, args.design or args.model)
        precoders = precoders_from_solution(sol)
        errs = []
        for m in range(args.trials):
            g = harness.trial_streams(seed, i, m)
            alpha = draw_rcs(point, g["rcs"])
            obs = simulate_observations(point, precoders, alpha, g["symbols"], noise_rng=g["noise"])
            t0 = time.perf_counter()
            res = est(obs, point, cfg, g["init"])
            wall = time.perf_counter() - t0
            err = res.params - truth
            errs.append(err)
            trial_rows.append([snr, m, res.status, res.iterations, wall, *res.params, *err])
        rmse = np.sqrt(np.mean(np.square(errs), axis=0))
        rmse = np.where(point.grid.active_mask, rmse, np.nan)
        agg_rows.append([snr, args.trials, *rmse, float(np.nansum(rmse[harness.ANGLE_PARAMS])),
                         float(np.nansum(rmse[harness.RANGE_PARAMS]))])
    paths = [
        harness.write_csv(out / "trials.csv",
                          ["snr_db", "trial", "status", "iterations", "wall_s"]
                          + [f"est_{p}" for p in PARAM_NAMES] + [f"err_{p}" for p in PARAM_NAMES], trial_rows),
        harness.write_csv(out / "rmse.csv", ["snr_db", "trials"] + [f"rmse_{p}" for p in PARAM_NAMES]
                          + ["rmse_angle", "rmse_range"], agg_rows),
    ]
    for p in paths:
        print(p)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="isac-xt", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    models = ("psm", "ucm", "dsm")

    r = sub.add_parser("run", help="run parameter sweeps and write the figure CSVs")
    r.add_argument("--scenario")
    r.add_argument("--sweep", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--plots", action="store_true", help="also render SVG plots (needs matplotlib)")
    r.add_argument("--figures", action="store_true", help="also write the ambiguity, beampattern and profile CSVs")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("crb", help="geometric bounds of all three models under one design")
    c.add_argument("--scenario")
    c.add_argument("--design", choices=models + ("uniform",), default="psm")
    c.add_argument("--snr-db", type=_floats)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_crb)

    a = sub.add_parser("ambiguity", help="normalized range ambiguity of a design")
    a.add_argument("--scenario")
    a.add_argument("--model", choices=("psm", "dsm"), default="psm")
    a.add_argument("--no-sidelobes", action="store_true")
    a.add_argument("--span-cells", type=float, default=6.0)
    a.add_argument("--points", type=int, default=241)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ambiguity)

    b = sub.add_parser("beamform", help="solve one beamforming design")
    b.add_argument("--scenario")
    b.add_argument("--model", choices=models, default="psm")
    b.add_argument("--radar-only", action="store_true")
    b.add_argument("--no-sidelobes", action="store_true")
    b.add_argument("--points", type=int, default=361)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_beamform)

    e = sub.add_parser("estimate", help="Monte-Carlo estimation trials")
    e.add_argument("--scenario")
    e.add_argument("--model", choices=models, default="psm")
    e.add_argument("--design", choices=models, help="beamformer model (default: same as --model)")
    e.add_argument("--trials", type=int, default=200)
    e.add_argument("--snr-db", type=_floats)
    e.add_argument("--seed", type=int)
    e.add_argument("--init", choices=("benchmark", "blind"), default="benchmark")
    e.add_argument("--perturbation", type=float, default=0.1)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_estimate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
