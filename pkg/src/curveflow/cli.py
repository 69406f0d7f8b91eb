"""Command line entry point: ``curveflow fit|simulate|project-check|calibrate``.

Exit codes
----------
0  success
1  project-check ran but the orthogonality tolerance was exceeded
2  bad configuration or input data (missing/malformed file, dimension mismatch)
3  curve fit did not converge
4  simulation aborted (non-finite values or coordinates left the family bounds)
5  project-check requested for a non-affine family
6  calibration did not converge (best-so-far estimates are still written)
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .errors import CurveflowError, DataFormatError, FitFailed, NumericalBlowup, OutOfDomain
from .estimation import MomentModel, ls_estimate, optimal_gmm
from .function_space import norm_h
from .hjm import gaussian_increments, simulate_hjm
from .io import fmt, read_curve, read_series, series_to_csv, write_estimates
from .manifold import fit_curve
from .projection_dynamics import CoordSDE, paired_step, simulate_coords

log = logging.getLogger("curveflow")


def _error(msg: str, *args) -> None:
    print("curveflow: " + (msg % args if args else msg), file=sys.stderr)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT = 2
EXIT_FIT_FAILED = 3
EXIT_SIM_ABORTED = 4
EXIT_NONLINEAR = 5
EXIT_NOT_CONVERGED = 6

ORTHOGONALITY_TOL = 1e-8


class _Run:
    """Parsed arguments plus the objects every command needs."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.cfg: RunConfig = load_config(args.config)
        if args.seed is not None:
            self.cfg.sim.seed = args.seed
        self.grid = self.cfg.build_grid()
        self.w = self.cfg.build_weight(self.grid)
        self.fam = self.cfg.build_family(self.grid, resample=args.resample)
        os.makedirs(args.out, exist_ok=True)

    def out(self, name: str) -> str:
        return os.path.join(self.args.out, name)

    def progress(self, msg: str) -> None:
        if self.args.verbose:
            print(msg, flush=True)

    def sde(self) -> CoordSDE:
        return CoordSDE(self.fam, self.cfg.build_vol(), self.grid, self.w)

    def z0(self) -> np.ndarray:
        sim = self.cfg.sim
        if sim.z0 is not None:
            z0 = np.asarray(sim.z0, dtype=float)
            if z0.shape != (self.fam.n,):
                raise ConfigError(f"[sim] z0 has {z0.size} values, family needs {self.fam.n}")
            return z0
        if sim.r0_file is not None:
            target = read_curve(sim.r0_file, self.grid, resample=self.args.resample)
            return fit_curve(target, self.fam, _default_z_init(self.fam, target), self.w)
        raise ConfigError("[sim] needs z0 or r0_file")

    def map(self, fn, items):
        jobs = max(1, self.args.jobs)
        if jobs == 1:
            return [fn(i) for i in items]
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))


def _default_z_init(fam, target) -> np.ndarray:
    if fam.is_affine:
        return np.clip(np.zeros(fam.n), fam.lower, fam.upper)
    if fam.family_tag == "exp_rate":
        return np.array([target.values[0] if target.values[0] != 0 else 1.0, 0.5])
    return np.clip(np.ones(fam.n), fam.lower, fam.upper)


def cmd_fit(run: _Run) -> int:
    target = read_curve(run.args.input, run.grid, resample=run.args.resample)
    z_init = (
        np.asarray(run.cfg.sim.z0, dtype=float)
        if run.cfg.sim.z0 is not None
        else _default_z_init(run.fam, target)
    )
    status = EXIT_OK
    try:
        z = fit_curve(target, run.fam, z_init, run.w)
    except FitFailed as exc:
        _error("fit failed: %s", exc)
        z, status = exc.best, EXIT_FIT_FAILED
    resid = norm_h(target - run.fam.eval(np.clip(z, run.fam.lower, run.fam.upper), run.grid), run.w)
    with open(run.out("fit.csv"), "w") as fh:
        fh.write("name,value\n")
        for i, v in enumerate(z):
            fh.write(f"z{i + 1},{fmt(v)}\n")
        fh.write(f"residual_norm,{fmt(resid)}\n")
    run.progress(f"fitted z = {z}, residual norm {resid:.3e}")
    return status


def _series_name(paths: int, p: int) -> str:
    return "series.csv" if paths == 1 else f"series_{p:03d}.csv"


def cmd_simulate(run: _Run) -> int:
    sim = run.cfg.sim
    sde = run.sde()
    z0 = run.z0()
    dump = run.args.dump_curves

    def one(p: int):
        series = simulate_coords(
            sde, z0, sim.delta, sim.steps, sim.seed, sim.scheme, path_id=p
        )
        curves = None
        if dump:
            r0 = run.fam.eval(z0, run.grid)
            curves = simulate_hjm(r0, sde.vol, sim.delta, sim.steps, sim.seed, path_id=p)
        return series, curves

    try:
        results = run.map(one, range(sim.paths))
    except (NumericalBlowup, OutOfDomain) as exc:
        _error("simulation aborted: %s", exc)
        return EXIT_SIM_ABORTED
    for p, (series, curves) in enumerate(results):
        with open(run.out(_series_name(sim.paths, p)), "w", newline="") as fh:
            fh.write(series_to_csv(series))
        if curves is not None:
            name = "curves.csv" if sim.paths == 1 else f"curves_{p:03d}.csv"
            with open(run.out(name), "w") as fh:
                fh.write("t,x,hjm,projected\n")
                for j in range(0, sim.steps + 1, dump):
                    proj = run.fam.values(series.z[j], run.grid)
                    t = fmt(series.times[j])
                    for x, a, b in zip(run.grid.nodes, curves.values[j], proj):
                        fh.write(f"{t},{fmt(x)},{fmt(a)},{fmt(b)}\n")
        run.progress(f"path {p}: z_T = {series.z[-1]}")
    return EXIT_OK


def cmd_project_check(run: _Run) -> int:
    if not run.fam.is_affine:
        _error(
            "project-check needs an affine family: for %s families G(z + dz) - G(z) is "
            "only first-order linear in dz, so the one-step residual is not exactly orthogonal",
            run.fam.family_tag,
        )
        return EXIT_NONLINEAR
    sim = run.cfg.sim
    sde = run.sde()
    z0 = run.z0()

    def one(p: int):
        eps = gaussian_increments(sim.seed, p, 1, sde.m, sim.delta)[0]
        return paired_step(sde, z0, sim.delta, eps)

    results = run.map(one, range(sim.paths))
    worst = max(r.max_ratio for r in results)
    ok = worst <= ORTHOGONALITY_TOL
    with open(run.out("project_check.txt"), "w") as fh:
        fh.write("path,max_normalized_inner_product,residual_norm\n")
        for p, r in enumerate(results):
            fh.write(f"{p},{fmt(r.max_ratio)},{fmt(norm_h(r.residual, run.w))}\n")
        fh.write(f"# worst {fmt(worst)} tolerance {ORTHOGONALITY_TOL:g} {'PASS' if ok else 'FAIL'}\n")
    run.progress(f"worst normalized inner product {worst:.3e}: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_calibrate(run: _Run) -> int:
    series = read_series(run.args.input)
    if series.n != run.fam.n:
        raise DataFormatError(
            f"series has {series.n} coordinates but the family has {run.fam.n}", run.args.input
        )
    est = run.cfg.estimation
    space = run.cfg.theta_space()
    theta_init = run.cfg.theta_init()
    model = MomentModel(space, run.fam, run.grid, series, run.w)
    lines = [f"# series {run.args.input}: N={len(series)} delta={fmt(series.delta)}"]
    if est.scheme == "ls":
        fit = ls_estimate(model, theta_init)
        theta, round0, converged = fit.theta, fit.theta, fit.converged
        fits = [("round0", fit)]
    else:
        res = optimal_gmm(model, theta_init, est.q, est.max_rounds)
        theta, round0, converged = res.theta, res.ls.theta, res.converged
        fits = [("round0", res.ls)] + [(f"round{i + 1}", f) for i, f in enumerate(res.rounds)]
        lines.append(f"# newey-west lag q={res.q}")
    for label, f in fits:
        lines.append(
            f"{label} evals={f.n_evals} converged={f.converged} objective={fmt(f.objective)} "
            f"theta={','.join(fmt(v) for v in f.theta)}"
        )
        lines.append(f"{label} trace=" + ",".join(fmt(v) for v in f.trace))
    write_estimates(run.out("estimate.csv"), space.names, theta, round0)
    with open(run.out("calibrate.log"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    run.progress(f"theta = {theta} (round 0: {round0})")
    if not converged:
        _error("calibration did not converge; best-so-far estimates written")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "project-check": cmd_project_check,
    "calibrate": cmd_calibrate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="curveflow",
        description="Project HJM forward-curve dynamics onto a curve family and calibrate it.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration file")
    common.add_argument("--seed", type=int, help="override [sim] seed")
    common.add_argument("--jobs", type=int, default=1, help="worker threads for multi-path runs")
    common.add_argument("--resample", action="store_true", help="interpolate input curves onto the grid")
    common.add_argument("--dump-curves", type=int, default=0, metavar="K",
                        help="simulate: also write every K-th grid HJM curve")
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("--verbose", action="store_true", help="print progress to stdout")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("fit", parents=[common], help="fit the family to a curve CSV")
    p.add_argument("input", help="curve CSV (x,value)")
    sub.add_parser("simulate", parents=[common], help="simulate projected coordinates")
    sub.add_parser("project-check", parents=[common], help="one-step orthogonality check")
    p = sub.add_parser("calibrate", parents=[common], help="GMM calibration from a series CSV")
    p.add_argument("input", help="coordinate series CSV (t,z1,...)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="curveflow: %(message)s", stream=sys.stderr)
    if args.dump_curves < 0 or args.jobs < 1:
        _error("--dump-curves must be >= 0 and --jobs >= 1")
        return EXIT_INPUT
    try:
        run = _Run(args)
        return COMMANDS[args.command](run)
    except CurveflowError as exc:
        _error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
