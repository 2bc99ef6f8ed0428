"""Command-line driver.

Exit status: 0 on success, 1 on invalid input or configuration, 2 on a
runtime or solver failure (including a failed gradient check).
"""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config, parse_config, serialize_config
from .errors import ConfigurationError
from .geometry import geometry_hash
from .io import (load_observed, save_observed, write_eps_csv, write_json, write_spectrum_csv,
                 write_vtk_grid, write_vtk_triangles)
from .objective import ObservedData
from .pipeline import (build_mesh, forward_run, gradcheck, gradcheck_config, observed_for,
                       optimize_guess)
from .spectral import default_frequencies, dft_modulus, incident_energy, reflection_metric
from .synthesis import observation_meta

log = logging.getLogger("photodesign")
COMMANDS = ("forward", "generate-data", "optimize", "spectrum", "gradcheck")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration")
    common.add_argument("--out", type=Path, help="output directory (default: run.out)")
    common.add_argument("--seed", type=int, help="seed for data noise and random designs")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="photodesign", description="Adjoint-based permittivity design for 2D waves")
    sub = p.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}", parser_class=_Parser)
    sub.required = True

    f = sub.add_parser("forward", parents=[common], help="forward solve; traces and snapshots")
    f.add_argument("--guess", type=float, action="append", help="eps in D2 (default 1)")
    f.add_argument("--snapshots", type=int, default=0, help="number of VTK field snapshots")

    sub.add_parser("generate-data", parents=[common], help="synthesize observed data")

    o = sub.add_parser("optimize", parents=[common], help="adaptive design optimization")
    o.add_argument("--guess", type=float, action="append", help="initial eps in D2 (repeatable)")
    o.add_argument("--parallel-guesses", action="store_true", help="one process per guess")

    s = sub.add_parser("spectrum", parents=[common], help="Fourier moduli of boundary traces")
    s.add_argument("--traces", type=Path, help="trace CSV from `forward` (default: run one)")
    s.add_argument("--guess", type=float, action="append", help="eps in D2 when solving")

    g = sub.add_parser("gradcheck", parents=[common], help="adjoint gradient vs finite differences")
    g.add_argument("--guess", type=float, action="append", help="base eps in D2 (default 1.5)")
    g.add_argument("--tol", type=float, default=0.02)
    return p


def _config(args, default=None):
    if args.config is not None:
        return load_config(args.config)
    return default if default is not None else RunConfig()


def _outdir(args, cfg):
    out = args.out if args.out is not None else Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _single_guess(args, default):
    guesses = args.guess or [default]
    if len(guesses) != 1:
        raise ConfigurationError(f"`{args.command}` takes a single --guess")
    if not guesses[0] > 0:
        raise ConfigurationError("--guess must be positive")
    return guesses[0]


def cmd_forward(args):
    cfg = _config(args)
    if args.snapshots < 0:
        raise ConfigurationError("--snapshots must be >= 0")
    guess = _single_guess(args, 1.0)
    out = _outdir(args, cfg)
    mesh = build_mesh(cfg)
    tp = cfg.time_partition(mesh, eps_min=min(1.0, guess))
    stride = max(1, tp.N // args.snapshots) if args.snapshots else 0
    snaps = []

    def snapshot(k, merged, fe):
        if len(snaps) < args.snapshots:
            path = write_vtk_grid(out / f"snapshot_{k:05d}.vtk", mesh.grid, {"E": merged},
                                  title=f"E at t={k * tp.tau:.6f}")
            write_vtk_triangles(out / f"snapshot_fe_{k:05d}.vtk", mesh.tri, point_data={"E": fe})
            snaps.append(path.name)

    mesh, eps, tp, hist, traces = forward_run(cfg, guess, mesh, snapshot, stride)
    src = cfg.source.spec()
    obs = ObservedData.from_traces(traces, **observation_meta(mesh, src, tp, guess=guess))
    save_observed(out / "traces.csv", obs)
    write_vtk_triangles(out / "eps.vtk", mesh.tri, {"eps": eps})
    write_json(out / "report.json", {
        "command": "forward", "guess": guess, "tau": tp.tau, "N": tp.N,
        "geometry_hash": geometry_hash(mesh.spec, mesh.h),
        "max_abs_E": float(np.abs(hist.values).max()),
        "reflection_metric": reflection_metric(traces, src, tp),
        "incident_energy": incident_energy(traces, src, tp), "snapshots": snaps,
    })
    print(f"forward: N={tp.N} tau={tp.tau:g} -> {out}")
    return 0


def cmd_generate(args):
    cfg = _config(args)
    out = _outdir(args, cfg)
    mesh = build_mesh(cfg)
    tp = cfg.time_partition(mesh, eps_min=1.0)
    obs = observed_for(cfg, mesh, tp, seed=args.seed)
    path = save_observed(out / "observed.csv", obs)
    print(f"generate-data: {path}")
    return 0


def _guess_job(payload):
    text, guess = payload
    return optimize_guess(parse_config(text), guess)


def _write_guess(out, cfg, res):
    d = out / f"guess_{res.guess:g}"
    d.mkdir(parents=True, exist_ok=True)
    a = res.adaptive
    write_eps_csv(d / "eps.csv", a.mesh.tri, a.eps)
    write_vtk_triangles(d / "eps.vtk", a.mesh.tri, {"eps": a.eps})
    freqs = default_frequencies(cfg.source.omega)
    cols = {}
    for name, tr in (("initial", res.traces_initial), ("final", res.traces_final)):
        for side, tag in ((1, "back"), (2, "trans")):
            sub = tr.subset(side)
            cols[f"{tag}_{name}"] = dft_modulus(sub.values, sub.times, freqs) @ sub.weights
    write_spectrum_csv(d / "spectrum.csv", freqs, cols)
    write_json(d / "report.json", {**res.summary(), **a.report})


def cmd_optimize(args):
    cfg = _config(args)
    guesses = args.guess or list(cfg.run.guesses)
    if any(not g > 0 for g in guesses):
        raise ConfigurationError("--guess must be positive")
    out = _outdir(args, cfg)
    if args.seed is not None:
        cfg = replace(cfg, data=replace(cfg.data, seed=args.seed))
    if args.parallel_guesses and len(guesses) > 1:
        text = serialize_config(cfg)
        with ProcessPoolExecutor(max_workers=len(guesses)) as pool:
            results = list(pool.map(_guess_job, [(text, g) for g in guesses]))
    else:
        mesh = build_mesh(cfg)
        results = [optimize_guess(cfg, g, mesh=mesh) for g in guesses]
    summary = []
    for res in results:
        _write_guess(out, cfg, res)
        summary.append(res.summary())
        print(f"guess {res.guess:g}: reflection {res.reflection_initial:.6e} -> "
              f"{res.reflection_final:.6e} ({res.seconds:.1f} s)")
    ranking = sorted(summary, key=lambda r: r["reflection_final"])
    write_json(out / "report.json", {"command": "optimize", "guesses": summary,
                                     "ranking": [r["guess"] for r in ranking]})
    return 0


def cmd_spectrum(args):
    cfg = _config(args)
    out = _outdir(args, cfg)
    if args.traces is not None:
        obs = load_observed(args.traces)
        times, values, side, weights = obs.times, obs.values, obs.side, obs.weights
        omega = float(obs.meta.get("omega", cfg.source.omega))
    else:
        _, _, _, _, tr = forward_run(cfg, _single_guess(args, 1.0))
        times, values, side, weights = tr.times, tr.values, tr.side, tr.weights
        omega = cfg.source.omega
    freqs = default_frequencies(omega)
    cols = {}
    for s, tag in ((1, "back"), (2, "trans")):
        keep = side == s
        cols[tag] = dft_modulus(values[:, keep], times, freqs) @ weights[keep]
    path = write_spectrum_csv(out / "spectrum.csv", freqs, cols)
    print(f"spectrum: {path}")
    return 0


def cmd_gradcheck(args):
    cfg = _config(args, gradcheck_config())
    guess = _single_guess(args, 1.5)
    res = gradcheck(cfg, guess=guess, tol=args.tol, seed=args.seed or 0)
    print(f"{'cell':>6} {'adjoint':>14} {'finite-diff':>14} {'rel.err':>10}")
    for K, a, f, r, c in zip(res.cells, res.adjoint, res.fd, res.rel_error, res.checked):
        print(f"{K:6d} {a:14.6e} {f:14.6e} {r:10.2e}{'' if c else '  (below floor)'}")
    status = "PASS" if res.passed else "FAIL"
    print(f"gradcheck {status}: max relative error {res.max_rel_error:.3e} (tol {res.tol:g})")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        write_json(args.out / "gradcheck.json", {
            "cells": res.cells, "adjoint": res.adjoint, "fd": res.fd, "rel_error": res.rel_error,
            "checked": res.checked, "max_rel_error": res.max_rel_error, "passed": res.passed})
    return 0 if res.passed else 2


HANDLERS = {"forward": cmd_forward, "generate-data": cmd_generate, "optimize": cmd_optimize,
            "spectrum": cmd_spectrum, "gradcheck": cmd_gradcheck}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return HANDLERS[args.command](args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeError, ArithmeticError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
