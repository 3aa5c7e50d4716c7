"""Command line entry point: simulate, verify and diagnose.

Exit status: 0 success, 2 validation failure, 3 numerical failure
(blow-up, non-finite state, failed verification), 4 I/O failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .auxiliary import AuxError, build_cutoffs, check_structural, detect_critical_curve
from .config import ConfigError, RunConfig, initial_fields, load_config, outer_flow
from .gevrey import NormEvaluator, TRINORM_LINES
from .io import SnapshotError, read_snapshot, write_csv, write_json, write_manifest, write_snapshot
from .solver import SolverError, run
from .state import check_bernoulli, check_compatibility, divergence_report, make_state
from .suites import SUITES, run_suite
from .verifier import TrajectoryError, monitor_apriori, trajectory_residuals

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
ENV_OUTPUT = "PRANDTL3D_OUTPUT"
COMPAT_TOL = 1e-2


class StrictWarning(Exception):
    """A warning promoted to an error by --strict."""


def output_dir(explicit: str | None, cfg_output: str | None, name: str) -> Path:
    if explicit:
        return Path(explicit)
    if cfg_output:
        return Path(cfg_output)
    return Path(os.environ.get(ENV_OUTPUT, "prandtl3d-out")) / name


def print_summary(title: str, items: dict):
    width = max((len(k) for k in items), default=0)
    print(title)
    for k, v in items.items():
        if isinstance(v, float):
            v = f"{v:.6g}"
        print(f"  {k.ljust(width)}  {v}")


class Warnings:
    def __init__(self, strict: bool):
        self.strict = strict
        self.items: list[str] = []

    def add(self, msg: str):
        self.items.append(msg)
        print(f"warning: {msg}", file=sys.stderr)
        if self.strict:
            raise StrictWarning(msg)


# ----- per-snapshot diagnostics -----

def norm_row(state, outer, cfg_gevrey, cutoffs) -> dict:
    ev = NormEvaluator(state, outer, cfg_gevrey, cutoffs, extended=True)
    tri = ev.trinorm(cfg_gevrey.rho)
    ext = ev.extended(cfg_gevrey.rho)
    row = {"t": state.t, "norm_total": tri.total, "extended_total": ext.total}
    for k in TRINORM_LINES:
        row[f"norm_{k}"] = tri.lines[k]
    return row


def structural_entry(state, sp) -> dict:
    curve = detect_critical_curve(state.psi, state.grid, state.xi)
    rep = check_structural(state, curve, sp)
    d = rep.to_dict()
    d["t"] = state.t
    d["curve"].pop("gamma", None)
    d["curve"].pop("xi_at_gamma", None)
    return d


def _diagnose_states(states, outer, gevrey, cutoffs, sp, diag, out: Path, warn: Warnings,
                     residual_ms=(1,)) -> dict:
    """Norms, structural reports, monitor and residuals shared by simulate and diagnose."""
    summary: dict = {}
    finite = [s for s in states if np.all(np.isfinite(s.u)) and np.all(np.isfinite(s.v))]
    if diag.norms:
        rows = []
        for s in finite:
            row = norm_row(s, outer, gevrey, cutoffs)
            row["divergence"] = divergence_report(s)["interior"]
            rows.append(row)
        write_csv(out / "norms.csv", rows)
        summary["final_norm"] = rows[-1]["norm_total"] if rows else None
        summary["max_divergence"] = max(r["divergence"] for r in rows) if rows else None
        if diag.figures and rows:
            from .plotting import plot_norm_series
            plot_norm_series(rows, out / "figures" / "norms.png")
    if diag.structural:
        entries = [structural_entry(s, sp) for s in finite]
        write_json(out / "structural.json", {"epochs": entries})
        summary["structural_ok_initial"] = bool(entries[0]["ok"]) if entries else None
        summary["structural_ok_final"] = bool(entries[-1]["ok"]) if entries else None
        if diag.figures and finite:
            from .plotting import plot_critical_curve
            c = detect_critical_curve(finite[0].psi, finite[0].grid, finite[0].xi)
            if np.any(np.isfinite(c.gamma)):
                plot_critical_curve(finite[0].grid, c.gamma, out / "figures" / "critical_curve.png")
    if diag.monitor and len(states) >= 2:
        tr = monitor_apriori(states, gevrey, diag.rho_grid, outer, cutoffs, c_max=diag.c_max)
        write_json(out / "apriori.json", tr.to_dict())
        write_csv(out / "apriori.csv", tr.to_rows())
        summary["c_star"] = tr.worst_c_star
        summary["apriori_flagged"] = tr.flagged
        summary["apriori_violation_time"] = tr.violation_time
        if diag.figures:
            from .plotting import plot_apriori
            plot_apriori(tr, out / "figures" / "apriori.png")
    if diag.residuals:
        if len(finite) >= 3:
            reps = trajectory_residuals(finite, outer, cutoffs, residual_ms)
            write_csv(out / "residuals.csv", [r.to_row() for r in reps])
            summary["residual_rows"] = len(reps)
        else:
            warn.add("fewer than three snapshots: time derivative unavailable, residuals skipped")
    return summary


# ----- commands -----

def cmd_simulate(config_path, output=None, seed=None, strict=False) -> int:
    warn = Warnings(strict)
    try:
        cfg: RunConfig = load_config(config_path)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"error: cannot read config {config_path}: {e}", file=sys.stderr)
        return EXIT_IO
    if seed is not None:
        cfg.seed = seed
    out = output_dir(output, cfg.output, cfg.name)
    try:
        grid = cfg.grid.build()
        u0, v0 = initial_fields(cfg, grid)
        outer = outer_flow(cfg, grid, u0)
        cutoffs = build_cutoffs(cfg.eps_c, cfg.gamma_ref, grid)
    except (ConfigError, AuxError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    try:
        (out / "figures").mkdir(parents=True, exist_ok=True)
        if cfg.diagnostics.snapshots:
            (out / "snapshots").mkdir(exist_ok=True)
    except OSError as e:
        print(f"error: cannot create output directory {out}: {e}", file=sys.stderr)
        return EXIT_IO

    status = EXIT_OK
    summary: dict = {"name": cfg.name, "seed": cfg.seed, "version": __version__}
    try:
        compat = check_compatibility(u0, v0, outer, COMPAT_TOL, grid)
        bern = check_bernoulli(outer, COMPAT_TOL, grid)
        summary["compatibility"] = compat.to_dict()
        summary["bernoulli"] = bern.to_dict()
        if not compat.ok:
            warn.add(f"initial data violate compatibility condition(s) {compat.failed}")
        if not bern.ok:
            warn.add("outer flow violates the Bernoulli relation")
        s0 = make_state(grid, u0, v0, 0.0, cfg.solver.epsilon)
        traj = run(s0, outer, cfg.solver, stride=cfg.diagnostics.stride)
        states = list(traj.snapshots)
        if traj.blowup:
            states.append(traj.blowup_state)
            status = EXIT_NUMERICAL
        summary.update({"final_time": states[-1].t, "blowup": traj.blowup,
                        "blowup_time": traj.blowup_time, "n_snapshots": len(traj.snapshots)})
        if cfg.diagnostics.snapshots:
            for k, s in enumerate(traj.snapshots):
                write_snapshot(out / "snapshots" / f"snap_{k:04d}.npz", s)
        summary.update(_diagnose_states(states, outer, cfg.gevrey, cutoffs, cfg.structural_params(),
                                        cfg.diagnostics, out, warn))
    except StrictWarning as e:
        print(f"error (strict): {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except SolverError as e:
        print(f"error: {e}", file=sys.stderr)
        summary.update({"blowup": True, "error": str(e)})
        status = EXIT_NUMERICAL
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    summary["warnings"] = warn.items
    summary["exit_status"] = status
    try:
        write_json(out / "config.json", cfg.to_dict())
        write_json(out / "summary.json", summary)
        write_manifest(out)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    print_summary(f"simulate {cfg.name} -> {out}",
                  {k: v for k, v in summary.items() if not isinstance(v, (dict, list))})
    return status


def cmd_verify(suite, output=None, seed=None, strict=False) -> int:
    seed = 0 if seed is None else seed
    out = output_dir(output, None, f"verify-{suite}")
    try:
        checks = run_suite(suite, seed)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    passed = all(c.passed for c in checks)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "verify.json", {"suite": suite, "seed": seed, "passed": passed,
                                         "checks": [c.to_row() for c in checks]})
        write_csv(out / "verify.csv", [c.to_row() for c in checks])
        write_manifest(out)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    width = max(len(f"{c.suite}/{c.name}") for c in checks)
    print(f"verify {suite} -> {out}")
    for c in checks:
        val = "" if c.value is None else f"{c.value:.4g}"
        thr = "" if c.threshold is None else f"(threshold {c.threshold:g})"
        print(f"  {'PASS' if c.passed else 'FAIL'}  {f'{c.suite}/{c.name}'.ljust(width)}  {val} {thr} {c.detail}".rstrip())
    return EXIT_OK if passed else EXIT_NUMERICAL


def cmd_diagnose(paths, params, output=None, seed=None, strict=False) -> int:
    warn = Warnings(strict)
    try:
        cfg = load_config(params, partial=True)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"error: cannot read parameters {params}: {e}", file=sys.stderr)
        return EXIT_IO
    try:
        states = [read_snapshot(p) for p in paths]
    except SnapshotError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    spec0 = states[0].grid.spec
    for p, s in zip(paths, states):
        if s.grid.spec != spec0:
            print(f"error: {p}: grid {s.grid.shape} differs from {paths[0]}", file=sys.stderr)
            return EXIT_VALIDATION
    out = output_dir(output, cfg.output, "diagnose")
    try:
        grid = states[0].grid
        outer = outer_flow(cfg, grid, states[0].u)
        cutoffs = build_cutoffs(cfg.eps_c, cfg.gamma_ref, grid)
        (out / "figures").mkdir(parents=True, exist_ok=True)
        diag = cfg.diagnostics
        diag.residuals = True
        summary = {"snapshots": [str(p) for p in paths], "times": [s.t for s in states]}
        if len(states) < 3:
            warn.add("fewer than three snapshots: norms and structural reports only")
            diag.residuals = False
        summary.update(_diagnose_states(states, outer, cfg.gevrey, cutoffs, cfg.structural_params(),
                                        diag, out, warn))
        summary["warnings"] = warn.items
        write_json(out / "summary.json", summary)
        write_manifest(out)
    except StrictWarning as e:
        print(f"error (strict): {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValueError, TrajectoryError, AuxError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    print_summary(f"diagnose -> {out}", {k: v for k, v in summary.items() if not isinstance(v, (dict, list))})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="prandtl3d", description="Boundary-layer simulator and verification lab")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", help=f"output directory (default ${ENV_OUTPUT}/<name>)")
    common.add_argument("--seed", type=int, help="seed for property-test sampling")
    common.add_argument("--strict", action="store_true", help="treat warnings as errors")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", parents=[common], help="run a configured simulation")
    p.add_argument("config")
    p = sub.add_parser("verify", parents=[common], help="run built-in verification suites")
    p.add_argument("suite", choices=SUITES + ("all",))
    p = sub.add_parser("diagnose", parents=[common], help="recompute diagnostics from snapshots")
    p.add_argument("files", nargs="+")
    p.add_argument("--params", required=True, help="JSON parameter file")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and not (0 <= args.seed < 2 ** 64):
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_VALIDATION
    # blow-up is detected from the fields themselves; numpy's overflow chatter adds nothing
    with np.errstate(over="ignore", invalid="ignore"):
        if args.command == "simulate":
            return cmd_simulate(args.config, args.output, args.seed, args.strict)
        if args.command == "verify":
            return cmd_verify(args.suite, args.output, args.seed, args.strict)
        return cmd_diagnose(args.files, args.params, args.output, args.seed, args.strict)


if __name__ == "__main__":
    sys.exit(main())
