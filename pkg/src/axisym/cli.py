"""Command line entry point: basis, evolve, verify, report."""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import asymptotics as asy
from . import basis, config, suites
from . import evolve as ev
from .field import load_checkpoint, save_checkpoint

log = logging.getLogger("axisym")

OUT_ENV = "AXISYM_OUT"
EXIT_OK, EXIT_IO, EXIT_TOL, EXIT_SOLVER = 0, 1, 2, 3
BASIS_TOL = {"orthonormality": 1e-10, "normalization": 1e-10,
             "eigenrelation": 1e-6, "weight_sum_error": 1e-12}


def out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, basis.EigenIndex):
        return o.label
    raise TypeError(type(o))


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=_json_default, allow_nan=True)
        fh.write("\n")


def list_files(root: Path) -> list:
    """Every file under root, plus the manifest that is about to be written."""
    files = {str(p.relative_to(root)) for p in root.rglob("*") if p.is_file()}
    return sorted(files | {"manifest.json"})


# ------------------------------------------------------------------ basis

def cmd_basis(args) -> int:
    out = Path(args.out) if args.out else out_root() / "basis"
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create {out}: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        t0 = time.perf_counter()
        rep = basis.basis_report(args.max_level, args.quad_nodes)
        rep["seconds"] = time.perf_counter() - t0
    except basis.QuadratureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TOL
    breaches = {k: rep[k] for k, tol in BASIS_TOL.items() if not rep[k] <= tol}
    rep["tolerances"] = BASIS_TOL
    rep["passed"] = not breaches
    try:
        basis.write_mode_table(out / "modes.csv", args.max_level)
        basis.write_nodes(out / "nodes.csv", basis.build_quadrature(args.quad_nodes))
        write_json(out / "report.json", rep)
    except OSError as exc:
        print(f"error: cannot write to {out}: {exc}", file=sys.stderr)
        return EXIT_IO
    for k in BASIS_TOL:
        print(f"{k:18s} {rep[k]:.3e}  (tol {BASIS_TOL[k]:.0e})")
    if breaches:
        print("tolerance breach: " + ", ".join(breaches), file=sys.stderr)
        return EXIT_TOL
    return EXIT_OK


# ------------------------------------------------------------------ evolve

def _manifest(out: Path, cfg, text: str, seconds: float, status: str, extra=None) -> dict:
    g = cfg.grid
    m = {
        "code_version": __version__,
        "config_sha256": config.digest(text),
        "config": text,
        "grid": {"r_max": g.r_max, "z_max": g.z_max, "nr": g.nr, "nz": g.nz},
        "dt": cfg.dt,
        "t_end": cfg.t_end,
        "nonlinear": cfg.nonlinear_on,
        "preset": cfg.initial.preset,
        "impulse": cfg.initial.impulse,
        "modes": [[i.ell, i.n, a] for i, a in cfg.initial.modes],
        "wall_seconds": seconds,
        "status": status,
    }
    m.update(extra or {})
    m["files"] = list_files(out)
    return m


def _write_run(out: Path, traj):
    traj.write_csv(out / "trace.csv")
    for t, f in traj.checkpoints:
        save_checkpoint(out / f"checkpoint_t{t:09.4f}.bin", f, t)
    if traj.final is not None:
        save_checkpoint(out / "final.bin", traj.final, traj.final_time)


def cmd_evolve(args) -> int:
    try:
        cfg, text = config.load(args.config)
    except (config.ConfigError, OSError, UnicodeDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_IO
    out = Path(args.out) if args.out else out_root() / Path(args.config).stem
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.cfg").write_text(text)
    except OSError as exc:
        print(f"error: cannot create {out}: {exc}", file=sys.stderr)
        return EXIT_IO
    start = None
    if args.resume:
        try:
            h, t = load_checkpoint(args.resume)
        except (OSError, ValueError) as exc:
            print(f"error: cannot resume from {args.resume}: {exc}", file=sys.stderr)
            return EXIT_IO
        start = (h, t)

    nsteps = int(round(cfg.t_end / cfg.dt))
    every = max(1, nsteps // 10)

    def progress(k, n):
        if k % every == 0:
            log.info("step %d / %d", k, n)

    t0 = time.perf_counter()
    status, code, extra = "ok", EXIT_OK, {}
    try:
        traj = ev.run(cfg, start, progress)
    except ev.StepError as exc:
        traj = exc.trajectory
        status, code = "solver_failure", EXIT_SOLVER
        extra["error"] = str(exc)
        print(f"solver failure: {exc}", file=sys.stderr)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_IO
    seconds = time.perf_counter() - t0
    if args.resume:
        extra["resumed_from"] = str(args.resume)
    try:
        if traj is not None:
            _write_run(out, traj)
        write_json(out / "manifest.json", _manifest(out, cfg, text, seconds, status, extra))
    except OSError as exc:
        print(f"error: cannot write run files: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"{status}: {out} ({seconds:.1f} s)")
    return code


# ------------------------------------------------------------------ verify

def cmd_verify(args) -> int:
    scale = suites.SCALES[args.scale]
    t0 = time.perf_counter()
    results = suites.run_suite(args.suite, scale, log=print)
    summary = {
        "suite": args.suite,
        "scale": args.scale,
        "code_version": __version__,
        "wall_seconds": time.perf_counter() - t0,
        "passed": all(c.passed for c in results),
        "criteria": [{"number": c.number, "name": c.name, "passed": c.passed,
                      "seconds": c.seconds, "measured": c.measured} for c in results],
    }
    out = Path(args.out) if args.out else out_root() / f"verify_{args.suite}.json"
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        write_json(out, summary)
    except OSError as exc:
        print(f"error: cannot write {out}: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"{'PASS' if summary['passed'] else 'FAIL'} suite {args.suite} in {summary['wall_seconds']:.1f} s")
    return EXIT_OK if summary["passed"] else EXIT_TOL


# ------------------------------------------------------------------ report

def read_trace(path):
    with open(path) as fh:
        cols = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return cols, data


def _safe_log(y):
    y = np.abs(np.asarray(y, dtype=float))
    with np.errstate(divide="ignore"):
        return np.where(y > 0, np.log(y), -np.inf)


def report_data(cols, data, t_end):
    t = data[:, 0]
    series = {"log_l2mu_residual": _safe_log(data[:, cols.index("l2mu_residual")])}
    fits = {}
    window = (min(2.0, 0.2 * t_end), 0.9 * t_end)
    for c in cols:
        if c.startswith("coef_") and c != "coef_0_0":
            series[f"log_abs_{c}"] = _safe_log(data[:, cols.index(c)])
    for name in ["l2mu_residual"] + [c for c in cols if c.startswith("coef_") and c != "coef_0_0"]:
        y = np.abs(data[:, cols.index(name)])
        try:
            fit = asy.fit_rate(t, y, window=window)
            fits[name] = {"rate": fit.lambda_hat, "r_squared": fit.r_squared, "window": list(window)}
        except ValueError:
            fits[name] = None
    return t, series, fits


def cmd_report(args) -> int:
    run = Path(args.run_dir)
    mpath = run / "manifest.json"
    if not mpath.is_file():
        print(f"error: no manifest in {run}", file=sys.stderr)
        return EXIT_IO
    try:
        manifest = json.loads(mpath.read_text())
        cols, data = read_trace(run / "trace.csv")
    except (OSError, ValueError) as exc:
        print(f"error: cannot read run: {exc}", file=sys.stderr)
        return EXIT_IO
    if data.shape[0] == 0:
        print("error: empty trace", file=sys.stderr)
        return EXIT_IO
    t, series, fits = report_data(cols, data, float(manifest.get("t_end", data[-1, 0])))
    rep = run / "report"
    rep.mkdir(exist_ok=True)
    names = list(series)
    table = np.column_stack([t] + [series[n] for n in names])
    if args.format == "json":
        write_json(rep / "report.json", {
            "t": t.tolist(),
            "series": {n: [None if not math.isfinite(v) else v for v in series[n]] for n in names},
            "fits": fits})
    elif args.format == "csv":
        with open(rep / "report.csv", "w") as fh:
            fh.write("# t: self-similar time\n")
            fh.write("# log_l2mu_residual: natural log of ||f - <f>||_{L2(mu)}\n")
            fh.write("# log_abs_coef_<l>_<n>: natural log of |<f, psi_(l,n)>|\n")
            for n, f in fits.items():
                if f:
                    fh.write(f"# fit {n}: rate={f['rate']:.6g} r2={f['r_squared']:.6g} "
                             f"window={f['window']}\n")
            fh.write(",".join(["t"] + names) + "\n")
            for row in table:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    else:
        with open(rep / "report.dat", "w") as fh:
            fh.write("# " + " ".join(["t"] + names) + "\n")
            for row in table:
                fh.write(" ".join("nan" if not math.isfinite(v) else repr(float(v)) for v in row) + "\n")
        lines = ["# run from this directory: gnuplot report.gp", "set terminal svg size 900,600 noenhanced", "set output 'report.svg'",
                 "set xlabel 't'", "set ylabel 'log amplitude'", "set key outside right",
                 "set datafile missing 'nan'"]
        fit = fits.get("l2mu_residual")
        if fit:
            lines.append(f"set title 'L2(mu) residual rate {fit['rate']:.4f}'")
        plots = [f"'report.dat' using 1:{k + 2} with lines title '{n}'" for k, n in enumerate(names)]
        lines.append("plot " + ", \\\n     ".join(plots))
        (rep / "report.gp").write_text("\n".join(lines) + "\n")
    manifest["files"] = list_files(run)
    write_json(mpath, manifest)
    print(f"report written to {rep}")
    return EXIT_OK


# ------------------------------------------------------------------ main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="axisym", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("basis", help="check the eigenbasis on a tensor quadrature")
    b.add_argument("--max-level", type=int, default=8)
    b.add_argument("--quad-nodes", type=int, default=18)
    b.add_argument("--out")
    b.set_defaults(func=cmd_basis)

    e = sub.add_parser("evolve", help="run a configured evolution")
    e.add_argument("config")
    e.add_argument("--out")
    e.add_argument("--resume", help="checkpoint file to continue from")
    e.set_defaults(func=cmd_evolve)

    v = sub.add_parser("verify", help="run an acceptance suite")
    v.add_argument("suite", choices=sorted(suites.SUITES))
    v.add_argument("--scale", choices=sorted(suites.SCALES), default="desk")
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("report", help="emit decay curves for a finished run")
    r.add_argument("run_dir")
    r.add_argument("--format", choices=["csv", "json", "gnuplot"], default="csv")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
