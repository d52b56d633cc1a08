"""Command line entry point: ``chdyn {run,sweep,check,steady,report}``.

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 invariant violation.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import checkpoint as ck
from .config import RunConfig, initial_field, parse_config, physics_text, serialize, validate
from .diagnostics import TrajectoryRecord, h1_distance
from .errors import ChdynError, ConfigError, ConvergenceError, DomainError, ParseError, SolverError, \
    ValidationError
from .fields import generalized_mean, total_energy
from .grid import build_grid, self_test
from .potentials import check_assumptions
from .stationary import mu_infty_formula, solve_stationary, steady_residual
from .stepper import Scheme, SimState, initial_state, run_trajectory

log = logging.getLogger("chdyn")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INVARIANT = 0, 2, 3, 4
MASS_TOL = 1e-12
ENERGY_SLACK = 1e-10
MU_TOL = 1e-8

SOLVER_ERRORS = (ConvergenceError, DomainError, SolverError)


class InvariantViolation(ChdynError):
    pass


def format_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_keyvals(path: Path, rows) -> None:
    path.write_text("".join(f"{k} = {format_value(v)}\n" for k, v in rows))


def params_hash(cfg: RunConfig) -> bytes:
    return ck.params_digest(physics_text(cfg))


# -- run ------------------------------------------------------------------

@dataclass
class RunResult:
    record: TrajectoryRecord
    state: SimState
    summary: list
    violations: list


def load_initial(cfg: RunConfig, grid, params, step_cfg):
    if cfg.init.kind != "checkpoint":
        return initial_state(grid, params, step_cfg, initial_field(cfg, grid))
    c = ck.read_checkpoint(cfg.init.path)
    if (c.Nx, c.Ny, c.Lx) != (grid.Nx, grid.Ny, grid.Lx):
        raise ConfigError("checkpoint grid does not match the configuration")
    if len(c.pairs) == 2 and not c.stationary:
        if c.params_hash != params_hash(cfg):
            raise ConfigError("checkpoint was written under different model or step settings")
        return SimState(c.t, c.pairs[0], c.pairs[1], c.step)
    return initial_state(grid, params, step_cfg, c.pairs[0], t0=c.t)


def execute(cfg: RunConfig, out: Optional[Path] = None) -> RunResult:
    """Run one trajectory; with ``out`` also write CSV, checkpoints and summary."""
    grid, params, step_cfg = cfg.build_grid(), cfg.params(), cfg.step_config()
    state0 = load_initial(cfg, grid, params, step_cfg)
    digest = params_hash(cfg)
    every = cfg.output.checkpoint_every

    def save(state, name):
        ck.write_checkpoint(out / name, ck.Checkpoint(
            grid.Lx, grid.Nx, grid.Ny, [state.phi, state.mu], state.t, state.step,
            params_hash=digest))

    def on_step(state, diag):
        if every and state.step % every == 0:
            save(state, f"ckpt_{state.step:08d}.bin")
            log.info("t=%.6g step=%d E=%.12g", state.t, state.step, diag.energy)

    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    rec = run_trajectory(grid, params, step_cfg, state0, cfg.run.T_end,
                         output_every=cfg.output.cadence, steady_tol=cfg.run.steady_tol,
                         on_step=on_step if out is not None else None)
    state = rec.final_state
    summary = summarize(cfg, grid, params, rec, state)
    violations = []
    if rec.max_mean_drift > MASS_TOL:
        violations.append(f"mass drift {rec.max_mean_drift:.3e} exceeds {MASS_TOL:g}")
    if step_cfg.scheme is Scheme.CONVEX_SPLIT and rec.steps and rec.max_energy_increase > ENERGY_SLACK:
        violations.append(f"energy increased by {rec.max_energy_increase:.3e}")
    if out is not None:
        with open(out / "diagnostics.csv", "w", newline="") as fh:
            rec.to_csv(fh)
        save(state, "final.bin")
        write_keyvals(out / "summary.txt", summary + [("violations", len(violations))])
    return RunResult(rec, state, summary, violations)


def summarize(cfg, grid, params, rec: TrajectoryRecord, state: SimState):
    rows = [
        ("status", rec.status),
        ("t_start", rec.t0),
        ("t_final", state.t),
        ("steps", rec.steps),
        ("init", cfg.init.kind),
        ("seed", cfg.init.seed),
        ("E_start", rec.energy0),
        ("E_final", rec.final_energy),
        ("energy_drop", rec.energy0 - rec.final_energy),
        ("dissipated", rec.cum_dissipation),
        ("balance_defect", rec.energy0 - rec.final_energy - rec.cum_dissipation),
        ("max_energy_increase", rec.max_energy_increase if rec.steps else 0.0),
        ("mean_start", rec.mean0),
        ("mass_drift", rec.max_mean_drift),
        ("min_delta_sep", min(rec.delta0, rec.min_delta_sep)),
        ("newton_total", rec.newton_total),
        ("newton_mean", rec.newton_total / rec.steps if rec.steps else 0.0),
        ("mu_mean", generalized_mean(grid, state.mu)),
    ]
    if rec.status == "converged":
        mu = generalized_mean(grid, state.mu)
        rows += [
            ("steady_residual", steady_residual(grid, params.potential, state.phi, mu)),
            ("mu_inf_formula", mu_infty_formula(grid, params.potential, state.phi)),
        ]
    return rows


def failure_record(out: Optional[Path], exc: Exception) -> None:
    rows = [("error", type(exc).__name__), ("message", str(exc).replace("\n", " "))]
    for attr in ("residual", "iterations"):
        if getattr(exc, attr, None) is not None:
            rows.append((attr, getattr(exc, attr)))
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_keyvals(out / "failure.txt", rows)
    print("\n".join(f"{k} = {format_value(v)}" for k, v in rows), file=sys.stderr)


def cmd_run(cfg: RunConfig, out: Path, quiet=False) -> int:
    try:
        res = execute(cfg, out)
    except SOLVER_ERRORS as exc:
        failure_record(out, exc)
        return EXIT_SOLVER
    if not quiet:
        for k, v in res.summary:
            print(f"{k} = {format_value(v)}")
    for v in res.violations:
        print(f"invariant violation: {v}", file=sys.stderr)
    return EXIT_INVARIANT if res.violations else EXIT_OK


# -- sweep ----------------------------------------------------------------

def axis_config(cfg: RunConfig, axis: str, value: str) -> RunConfig:
    if axis == "L":
        return cfg.with_value("model", "L", float(value))
    if axis == "eps":
        return cfg.with_value("model", "eps", None if value == "exact" else float(value))
    if axis == "mean":
        return cfg.with_value("init", "mean", float(value))
    if axis == "tau":
        return cfg.with_value("step", "tau", float(value))
    if axis == "grid":
        nx, ny = (int(p) for p in value.lower().split("x"))
        return replace(cfg, grid=replace(cfg.grid, Nx=nx, Ny=ny))
    raise ConfigError(f"unknown sweep axis {axis}")


def axis_key(axis: str, value: str):
    if axis == "grid":
        return tuple(int(p) for p in value.lower().split("x"))
    if axis == "eps" and value == "exact":
        return 0.0
    return float(value)


def _sweep_case(args):
    text, axis, value = args
    cfg = axis_config(parse_config(text), axis, value)
    try:
        validate(cfg)
        res = execute(cfg)
    except (ChdynError, ValueError) as exc:
        return {"value": value, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}
    s = dict(res.summary)
    return {
        "value": value, "status": res.record.status, "error": "",
        "E_final": s["E_final"], "mass_drift": s["mass_drift"], "min_delta_sep": s["min_delta_sep"],
        "newton_total": s["newton_total"], "bulk": res.state.phi.bulk, "surf": res.state.phi.surf,
    }


def reference_value(axis: str, values):
    if axis == "L":
        return next((v for v in values if float(v) == 0.0), None)
    if axis == "eps":
        return "exact" if "exact" in values else None
    if axis == "tau":
        return min(values, key=float)
    return None


SWEEP_COLUMNS = ["value", "status", "distance", "E_final", "mass_drift", "min_delta_sep",
                 "newton_total", "error"]


def run_sweep(cfg: RunConfig, axis: Optional[str] = None, values=None, workers=None):
    """Run one trajectory per axis value and return rows sorted by axis value."""
    axis = axis or cfg.sweep.axis
    values = list(values or cfg.sweep.values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    for v in values:
        axis_key(axis, v)
    text = serialize(cfg)
    jobs = [(text, axis, v) for v in values]
    workers = workers or cfg.sweep.workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_case, jobs))
    else:
        results = [_sweep_case(j) for j in jobs]
    results.sort(key=lambda r: axis_key(axis, r["value"]))
    ref_value = reference_value(axis, values)
    ref = next((r for r in results if r["value"] == ref_value and "bulk" in r), None)
    grid = cfg.build_grid()
    for r in results:
        if ref is not None and "bulk" in r:
            r["distance"] = h1_distance(grid, (r["bulk"], r["surf"]), (ref["bulk"], ref["surf"]))
        else:
            r["distance"] = math.nan
    return results


def self_convergence_order(results) -> Optional[float]:
    """Observed order from three step sizes in ratio 2 (largest first after reversing)."""
    ok = [r for r in results if "bulk" in r]
    if len(ok) < 3:
        return None
    ok = sorted(ok, key=lambda r: -float(r["value"]))[:3]
    a, b, c = ok
    d1 = np.sqrt(np.sum((a["bulk"] - b["bulk"]) ** 2))
    d2 = np.sqrt(np.sum((b["bulk"] - c["bulk"]) ** 2))
    ratio = float(a["value"]) / float(b["value"])
    return float(np.log(d1 / d2) / np.log(ratio)) if d2 > 0 else None


def cmd_sweep(cfg: RunConfig, out: Path, quiet=False) -> int:
    import csv

    results = run_sweep(cfg)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["axis"] + SWEEP_COLUMNS)
        for r in results:
            w.writerow([cfg.sweep.axis] + [format_value(r.get(c, "")) for c in SWEEP_COLUMNS])
    if cfg.sweep.axis == "tau":
        order = self_convergence_order(results)
        write_keyvals(out / "sweep_summary.txt", [("self_convergence_order", order)])
    if not quiet:
        for r in results:
            print(f"{r['value']}: status={r['status']} distance={format_value(r['distance'])}")
    return EXIT_OK


# -- check, steady, report -------------------------------------------------

def cmd_check(cfg: RunConfig, out: Optional[Path], quiet=False) -> int:
    report = check_assumptions(cfg.potential(), mean0=cfg.init.mean)
    tests = self_test(cfg.build_grid())
    lines = report.to_text().splitlines()
    lines += [f"grid.{name} = {'pass' if ok else 'FAIL'} ({value:.3e})" for name, ok, value in tests]
    ok = report.passed and all(t[1] for t in tests)
    lines.append(f"overall = {'pass' if ok else 'FAIL'}")
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "check.txt").write_text("\n".join(lines) + "\n")
    if not quiet:
        print("\n".join(lines))
    return EXIT_OK if ok else EXIT_INVARIANT


def cmd_steady(cfg: RunConfig, out: Path, quiet=False) -> int:
    grid, params = cfg.build_grid(), cfg.params()
    if cfg.init.kind == "checkpoint":
        guess = ck.read_checkpoint(cfg.init.path).pairs[0]
    else:
        guess = initial_field(cfg, grid)
    try:
        st = solve_stationary(grid, params.potential, cfg.init.mean, guess, fallback_params=params)
    except SOLVER_ERRORS as exc:
        failure_record(out, exc)
        return EXIT_SOLVER
    rows = [("mu_inf", st.mu_inf), ("mu_inf_formula", st.mu_formula),
            ("residual", st.residual_norm), ("delta", st.delta), ("iterations", st.iterations)]
    out.mkdir(parents=True, exist_ok=True)
    ck.write_checkpoint(out / "steady.bin", ck.Checkpoint(
        grid.Lx, grid.Nx, grid.Ny, [st.phi], stationary=True, mu_inf=st.mu_inf,
        params_hash=params_hash(cfg)))
    write_keyvals(out / "steady.txt", rows)
    if not quiet:
        print("\n".join(f"{k} = {format_value(v)}" for k, v in rows))
    return EXIT_OK if abs(st.mu_inf - st.mu_formula) <= MU_TOL and st.delta > 0 else EXIT_INVARIANT


def report_rows(c: ck.Checkpoint, cfg: Optional[RunConfig] = None):
    grid = build_grid(c.Lx, c.Nx, c.Ny)
    phi = c.pairs[0]
    amax = max(float(np.max(np.abs(phi.bulk))), float(np.max(np.abs(phi.surf))))
    rows = [("Lx", c.Lx), ("Nx", c.Nx), ("Ny", c.Ny), ("t", c.t), ("step", c.step),
            ("stationary", int(c.stationary)), ("mean", generalized_mean(grid, phi)),
            ("delta_sep", 1.0 - amax), ("params_hash", c.params_hash.hex())]
    if c.stationary:
        rows.append(("mu_inf", c.mu_inf))
    if cfg is not None and c.params_hash == params_hash(cfg):
        rows.append(("energy", total_energy(grid, cfg.potential(), phi, cfg.model.eps)))
    return rows


def cmd_report(paths, cfg: Optional[RunConfig], quiet=False) -> int:
    for p in paths:
        rows = report_rows(ck.read_checkpoint(p), cfg)
        if not quiet:
            print(f"[{p}]")
            print("\n".join(f"{k} = {format_value(v)}" for k, v in rows))
    return EXIT_OK


# -- entry point ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI configuration file")
    common.add_argument("--out", type=Path, help="output directory (overrides [output] dir)")
    common.add_argument("--seed", type=int, help="override the initial-data seed")
    common.add_argument("--quiet", action="store_true", help="suppress summaries on stdout")
    p = argparse.ArgumentParser(prog="chdyn", description="Bulk-surface Cahn-Hilliard simulator")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="integrate one trajectory")
    sw = sub.add_parser("sweep", parents=[common], help="one trajectory per axis value")
    sw.add_argument("--axis", help="override [sweep] axis")
    sw.add_argument("--values", help="comma separated axis values")
    sw.add_argument("--workers", type=int, help="worker processes")
    sub.add_parser("check", parents=[common], help="assumption report and operator self-tests")
    sub.add_parser("steady", parents=[common], help="solve for a steady state")
    rp = sub.add_parser("report", parents=[common], help="summaries of checkpoint files")
    rp.add_argument("checkpoints", nargs="+", type=Path)
    return p


def load_config(args) -> RunConfig:
    text = args.config.read_text(encoding="utf-8") if args.config else ""
    cfg = parse_config(text)
    if args.seed is not None:
        cfg = cfg.with_value("init", "seed", args.seed)
    if getattr(args, "axis", None):
        cfg = cfg.with_value("sweep", "axis", args.axis)
    if getattr(args, "values", None):
        cfg = cfg.with_value("sweep", "values", tuple(v.strip() for v in args.values.split(",")))
    if getattr(args, "workers", None):
        cfg = cfg.with_value("sweep", "workers", args.workers)
    validate(cfg)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args)
    except ValidationError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_CONFIG
    except ParseError as exc:
        where = f" (line {exc.line})" if exc.line else ""
        print(f"config error{where}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or Path(cfg.output.dir)
    try:
        if args.command == "run":
            return cmd_run(cfg, out, args.quiet)
        if args.command == "sweep":
            return cmd_sweep(cfg, out, args.quiet)
        if args.command == "check":
            return cmd_check(cfg, args.out, args.quiet)
        if args.command == "steady":
            return cmd_steady(cfg, out, args.quiet)
        return cmd_report(args.checkpoints, cfg if args.config else None, args.quiet)
    except (ConfigError, ParseError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
