"""Compare the compiled and NumPy cone projections.

Times one projection of a random vector onto the cone products of the three
desk-scale beamforming programs and of a few synthetic layouts, and checks
that both backends agree.  Run with ``python3 benchmarks/bench_kernels.py``.
"""
from __future__ import annotations

import argparse
import json
import sys
import timeit

import numpy as np

from isac_xt.beamform import build_dsm_problem, build_psm_problem, build_ucm_problem
from isac_xt.conic import kernels
from isac_xt.conic.problem import Cones
from isac_xt.scenario import desk_scenario


def layouts() -> dict[str, Cones]:
    sc = desk_scenario()
    out = {
        "psm-design": build_psm_problem(sc).problem.cones,
        "ucm-design": build_ucm_problem(sc).problem.cones,
        "dsm-design": build_dsm_problem(sc).problem.cones,
        "soc-200x16": Cones(soc=(16,) * 200),
        "psd-64x8": Cones(psd=(8,) * 64),
        "psd-4x64": Cones(psd=(64,) * 4),
    }
    return out


def bench(cones: Cones, repeat: int, rng: np.random.Generator) -> dict:
    layout = kernels.Layout(cones)
    x0 = rng.standard_normal(cones.dim)
    py, cc = x0.copy(), x0.copy()
    kernels.project_python(py, layout)
    row = {"dim": cones.dim}
    number = max(1, repeat)

    def timed(fn):
        buf = x0.copy()

        def run():
            buf[:] = x0
            fn(buf, layout)
        return min(timeit.repeat(run, number=number, repeat=3)) / number

    row["python_ms"] = 1e3 * timed(kernels.project_python)
    if kernels.project_compiled is not None:
        kernels.project_compiled(cc, layout)
        row["compiled_ms"] = 1e3 * timed(kernels.project_compiled)
        row["speedup"] = row["python_ms"] / row["compiled_ms"]
        row["max_abs_diff"] = float(np.max(np.abs(py - cc)))
    return row


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20, help="projections per timing sample")
    p.add_argument("--json", action="store_true", help="print JSON instead of a table")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    results = {name: bench(c, args.repeat, rng) for name, c in layouts().items()}
    if args.json:
        print(json.dumps({"backend": kernels.BACKEND, "results": results}, indent=2))
        return 0
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'layout':<12} {'dim':>7} {'python ms':>10} {'compiled ms':>12} {'speedup':>8} {'max diff':>9}")
    for name, r in results.items():
        print(f"{name:<12} {r['dim']:>7} {r['python_ms']:>10.3f} {r.get('compiled_ms', float('nan')):>12.3f} "
              f"{r.get('speedup', float('nan')):>8.2f} {r.get('max_abs_diff', float('nan')):>9.1e}")
    bad = [n for n, r in results.items() if r.get("max_abs_diff", 0.0) > 1e-9]
    if bad:
        print(f"backends disagree on: {', '.join(bad)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
