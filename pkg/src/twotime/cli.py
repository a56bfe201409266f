"""Command-line front end: ``twotime <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 degenerate run (including
non-convergence of a relaxation), 4 resource limit.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .ensemble import SampledStates, simulate
from .errors import (ConfigError, ConvergenceError, DegenerateError, ResourceError,
                     StructuralError)
from .estimator import fit_tunneling_time, kinsler_drummond_T, spectrum
from .oracle import EXACT_MAX_DIM, exact_correlator
from .config import RunConfig, density_of, resolve_initial
from .seriesio import read_series, write_series
from .skew import ENGINES

EXIT_CONFIG, EXIT_DEGENERATE, EXIT_RESOURCE = 2, 3, 4


def _load(args) -> RunConfig:
    overrides = list(args.set or [])
    for flag, key in (("seed", "run.seed"), ("workers", "run.workers"),
                      ("trajectories", "run.trajectories"), ("output", "output.path")):
        val = getattr(args, flag, None)
        if val is not None:
            overrides.append(f"{key}={val!r}" if isinstance(val, str) else f"{key}={val}")
    return RunConfig.load(args.config, overrides)


def _setup(cfg: RunConfig):
    model = cfg.build_model()
    A = cfg.operator(cfg.observable["A"], model)
    B = cfg.operator(cfg.initial["B"], model)
    return model, A, B


def _run(cfg, model, A, B, engine, initial):
    return simulate(model, engine, A, B, initial, cfg.times(), cfg.run["trajectories"],
                    dt=cfg.step(model), seed=cfg.run["seed"], workers=cfg.run["workers"])


def cmd_simulate(args) -> int:
    cfg = _load(args)
    model, A, B = _setup(cfg)
    engine = cfg.build_engine(model)
    initial = resolve_initial(cfg, model)
    res = _run(cfg, model, A, B, engine, initial)
    meta = {"command": "simulate", "engine": engine.name, "seed": cfg.run["seed"],
            "normalized": cfg.output["normalized"], "mean_jumps": res.mean_jumps,
            "error_bound_final": float(res.error_bound[-1]), "dead": res.dead,
            "aborted": res.aborted}
    write_series(res.series, cfg.output["path"], cfg.output["format"], meta)
    last = res.series.values(cfg.output["normalized"])[-1]
    print(f"K={res.K} engine={engine.name} mean_jumps={res.mean_jumps:.6g} "
          f"wall_time={res.wall_time:.3f}s error_bound={res.error_bound[-1]:.6g} "
          f"dead={res.dead} aborted={res.aborted} g(t_max)={last:.6g}")
    print(f"wrote {cfg.output['path']}")
    return 0


def cmd_exact(args) -> int:
    cfg = _load(args)
    model, A, B = _setup(cfg)
    if model.dim > EXACT_MAX_DIM:
        raise ResourceError(f"exact propagation limited to dim <= {EXACT_MAX_DIM}, got {model.dim}")
    rho0 = density_of(resolve_initial(cfg, model))
    series = exact_correlator(model, A, B, rho0, cfg.times())
    write_series(series, cfg.output["path"], cfg.output["format"],
                 {"command": "exact", "normalized": cfg.output["normalized"]})
    print(f"K=0 (exact) points={series.times.size} g(0)={series.mean[0]:.6g}")
    print(f"wrote {cfg.output['path']}")
    return 0


REPORT_COLUMNS = ("engine", "time", "g_norm_real", "g_norm_imag", "stderr_norm", "error_bound",
                  "needed_K", "second_moment_ratio", "survival", "K")


def compare_rows(name, res, target):
    """Per-time report rows; ``needed_K`` is the K giving relative error ``target``."""
    s = res.series
    g0 = s.normalization
    scale = abs(g0) if g0 not in (None, 0) else 1.0
    g = s.mean / scale if g0 in (None, 0) else s.normalized
    se = s.stderr / scale
    var = se ** 2 * s.K
    with np.errstate(divide="ignore", invalid="ignore"):
        needed = np.maximum(1.0, var / (target * np.abs(g)) ** 2)
        ratio = res.second_moment / np.abs(s.mean) ** 2
    return [(name, s.times[i], g[i].real, g[i].imag, se[i], res.error_bound[i], needed[i],
             ratio[i], res.survival[i], s.K) for i in range(s.times.size)]


def cmd_compare(args) -> int:
    if len(args.engines) < 2:
        raise ConfigError("compare needs at least two engines")
    cfg = _load(args)
    model, A, B = _setup(cfg)
    initial = resolve_initial(cfg, model)
    if isinstance(initial, SampledStates):
        raise ConfigError("compare needs an exactly specified initial state")
    rows = []
    for name in args.engines:
        if name not in ENGINES:
            raise ConfigError(f"unknown engine {name!r}")
        sub = RunConfig(**{**cfg.__dict__, "engine": {**cfg.engine, "kind": name}})
        res = _run(cfg, model, A, B, sub.build_engine(model), initial)
        rows.extend(compare_rows(name, res, args.target))
        last = rows[-1]
        print(f"{name:16s} t={last[1]:.4g} g={complex(last[2], last[3]):.6g} "
              f"stderr={last[4]:.3g} error_bound={last[5]:.3g} needed_K={last[6]:.4g} "
              f"E|x|^2/|Ex|^2={last[7]:.4g} no_jump={last[8]:.4g}")
    out = args.report or cfg.output["path"]
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow([r[0]] + ["%.17g" % x for x in r[1:-1]] + [r[-1]])
    print(f"wrote {out}")
    return 0


def _omega_grid(args) -> np.ndarray:
    lo = -args.omega_max if args.omega_min is None else args.omega_min
    if not args.omega_step > 0 or args.omega_max <= lo:
        raise ConfigError("need omega_step > 0 and omega_max > omega_min")
    n = int(np.floor((args.omega_max - lo) / args.omega_step + 1e-9))
    return lo + args.omega_step * np.arange(n + 1)


def cmd_spectrum(args) -> int:
    series = read_series(args.input)
    omega = _omega_grid(args)
    s = spectrum(series, omega, normalized=not args.raw)
    out = args.output or str(Path(args.input).with_suffix("")) + "_spectrum.csv"
    with open(out, "w") as fh:
        fh.write("omega,S\n")
        for o, v in zip(omega, s):
            fh.write("%.17g,%.17g\n" % (o, v))
    peak = omega[int(np.argmax(s))]
    print(f"points={omega.size} peak_omega={peak:.6g} peak_S={s.max():.6g}")
    print(f"wrote {out}")
    return 0


def cmd_fit(args) -> int:
    series = read_series(args.input)
    T = fit_tunneling_time(series, tuple(args.window), normalized=not args.raw)
    print("%.17g" % T)
    return 0


def cmd_dk_time(args) -> int:
    if args.G is not None:
        G = args.G
    else:
        G = args.kappa / np.sqrt(2.0 * args.gamma1 * args.gamma2)
    T = kinsler_drummond_T(args.lam, G, args.gamma1)
    print("%.17g" % T)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twotime", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def run_opts(sp):
        sp.add_argument("config", nargs="?", help="TOML run configuration")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one configuration value (repeatable)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--trajectories", type=int)
        sp.add_argument("--output", "-o")

    sp = sub.add_parser("simulate", help="run a trajectory ensemble")
    run_opts(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("exact", help="exact propagation for dim <= 64")
    run_opts(sp)
    sp.set_defaults(func=cmd_exact)

    sp = sub.add_parser("compare", help="run several engines on one configuration")
    run_opts(sp)
    sp.add_argument("--engines", nargs="+", default=["gardiner_zoller", "doubled_hilbert",
                                                     "optimized"])
    sp.add_argument("--target", type=float, default=0.05, help="relative error for needed_K")
    sp.add_argument("--report", help="report path (default: output.path)")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("spectrum", help="S(w) = 2 Re int g(t) exp(iwt) dt of a series file")
    sp.add_argument("input")
    sp.add_argument("--omega-max", type=float, default=12.0)
    sp.add_argument("--omega-min", type=float)
    sp.add_argument("--omega-step", type=float, default=0.25)
    sp.add_argument("--raw", action="store_true", help="use the unnormalized columns")
    sp.add_argument("--output", "-o")
    sp.set_defaults(func=cmd_spectrum)

    sp = sub.add_parser("fit", help="tunneling time from ln|g| on a window")
    sp.add_argument("input")
    sp.add_argument("--window", nargs=2, type=float, required=True, metavar=("T_LO", "T_HI"))
    sp.add_argument("--raw", action="store_true")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("dk-time", help="barrier estimate of the DOPO tunneling time")
    sp.add_argument("--lam", type=float, required=True)
    sp.add_argument("--G", type=float)
    sp.add_argument("--kappa", type=float, default=1.0)
    sp.add_argument("--gamma1", type=float, default=1.0)
    sp.add_argument("--gamma2", type=float, default=4.0)
    sp.set_defaults(func=cmd_dk_time)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, StructuralError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DegenerateError, ConvergenceError) as exc:
        print(f"degenerate run: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except ResourceError as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
