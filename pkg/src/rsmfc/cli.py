"""Batch command-line interface.

Every run writes ``manifest.json`` (scenario, resolved run parameters,
command, package version) next to its CSVs and ``summary.json``.
``rsmfc replay manifest.json`` reruns it bit for bit.

Exit codes: 0 success, 1 a check failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, build_scenario, load_config, resolve_run
from .filtering import closed_form_filter, particle_filter
from .io import read_json, write_csv, write_json
from .model import TimeGrid
from .montecarlo import (certify_smp, cost_from_trajectory, expansion_rows, fit_slope)
from .policies import ConstantControl, LqFeedback, ansatz_ell, filter_feedback
from .riccati import RiccatiBlowUp, riccati_residual, solve
from .sde import (density_terminal_check, evolve_system, evolve_vtheta, generate_drivers,
                  mean_with_se)

COMMANDS = ("simulate", "riccati", "filter", "cost", "check-smp", "sweep-theta")


def _need_lq(scn, command):
    if scn.lq is None:
        raise ConfigError(f"scenario.kind: '{command}' needs an 'lq' scenario")
    return scn.lq


def _policy(scn, run, grid, record=False):
    if scn.lq is None:
        return ConstantControl(0.0), None
    sol = solve(scn.lq, grid, run["case"])
    return LqFeedback(scn.lq, sol, run["form"], record=record), sol


def cmd_simulate(scn, run, out: Path) -> dict:
    grid = TimeGrid(scn.n_steps, scn.model.horizon_T)
    drivers = generate_drivers(grid, run["paths"], run["seed"])
    policy, sol = _policy(scn, run, grid)
    traj = evolve_system(scn.model, policy, drivers)
    dens = density_terminal_check(traj)
    checks = {"density": abs(dens.mean - 1.0) <= 3.0 * dens.se}
    summary = {"rho_T": {"mean": dens.mean, "se": dens.se, "n": dens.n}}
    if sol is not None:
        vp = evolve_vtheta(scn.model, ansatz_ell(sol), drivers, traj, 1.0)
        L = mean_with_se(vp.L[:, -1])
        summary["L_T"] = {"mean": L.mean, "se": L.se, "n": L.n}
        checks["tilting_martingale"] = abs(L.mean - 1.0) <= 3.0 * L.se
    n_dump = min(run["dump_paths"], traj.n_paths)
    rho = traj.rho
    rows = ((i, k, traj.times[k], rho[i, k], traj.x[i, k], traj.xi[i, k], traj.m[k])
            for i in range(n_dump) for k in range(traj.times.size))
    write_csv(out / "trajectory.csv", ["path_id", "step", "t", "rho", "x", "xi", "m"], rows)
    summary["checks"] = checks
    return summary


def cmd_riccati(scn, run, out: Path) -> dict:
    spec = _need_lq(scn, "riccati")
    grid = TimeGrid(scn.n_steps, spec.horizon_T)
    sol = solve(spec, grid, run["case"])
    write_csv(out / "riccati.csv", ["step", "t", "gamma"],
              ((k, t, g) for k, (t, g) in enumerate(zip(grid.times, sol.gamma))))
    res = riccati_residual(sol)
    return {"case": run["case"], "lambda": sol.lam, "gamma_0": float(sol.gamma[0]),
            "residual": res, "checks": {"residual": res <= 1e-8}}


def cmd_filter(scn, run, out: Path) -> dict:
    grid = TimeGrid(scn.n_steps, scn.model.horizon_T)
    y = generate_drivers(grid, 1, (run["seed"], 0)).dY[0]
    if run["source"] == "closed-form":
        spec = _need_lq(scn, "filter --source closed-form")
        sol = solve(spec, grid, run["case"])
        est = closed_form_filter(spec, sol, y, form=run["form"])
        ess = np.full(grid.n_steps + 1, np.nan)
    else:
        m_path = None
        if scn.lq is None:
            ell = lambda k, t, x: (0.0 * x, 0.0 * x)  # noqa: E731
            control = None
            # the mean field of an uncontrolled reference ensemble
            ref = evolve_system(scn.model, ConstantControl(0.0),
                                generate_drivers(grid, run["paths"], (run["seed"], 2)), keep_paths=False)
            m_path = ref.aux["m_path"]
        else:
            sol = solve(scn.lq, grid, run["case"])
            ell, control = ansatz_ell(sol), filter_feedback(scn.lq, sol)
        est = particle_filter(scn.model, ell, y, run["particles"], (run["seed"], 1), control=control,
                              m_path=m_path)
        ess = est.ess
    write_csv(out / "filter.csv", ["step", "t", "mean", "variance", "ess"],
              ((k, t, est.mean[k], est.variance[k], ess[k]) for k, t in enumerate(grid.times)))
    return {"source": run["source"], "terminal_mean": float(est.mean[-1]),
            "terminal_variance": float(est.variance[-1]), "checks": {}}


def cmd_cost(scn, run, out: Path) -> dict:
    grid = TimeGrid(scn.n_steps, scn.model.horizon_T)
    policy, _ = _policy(scn, run, grid)
    traj = evolve_system(scn.model, policy, generate_drivers(grid, run["paths"], run["seed"]),
                         keep_paths=False)
    est = cost_from_trajectory(traj, scn.model, policy.label)
    write_csv(out / "cost.csv", ["theta", "j_theta", "se", "n_paths", "control"],
              [(est.theta, est.j_theta, est.se, est.n_paths, est.control_label)])
    return {"j_theta": est.j_theta, "se": est.se, "checks": {"positive": est.j_theta > 0}}


def cmd_check_smp(scn, run, out: Path) -> dict:
    spec = _need_lq(scn, "check-smp")
    grid = TimeGrid(scn.n_steps, spec.horizon_T)
    sol = solve(spec, grid, run["case"])
    t_idx = sorted({int(round(f * grid.n_steps)) for f in run["t_fractions"]})
    rep = certify_smp(spec, sol, run["records"], run["particles"], run["seed"],
                      np.asarray(run["u_offsets"]), t_idx)
    write_csv(out / "vi.csv",
              ["record", "step", "t", "u", "u_bar", "estimate", "se", "analytic", "violation", "collapse_ok"],
              ((c.path, c.step, c.t, c.u, c.u_bar, c.estimate, c.se, c.analytic, c.violation, c.collapse_ok)
               for c in rep.cells))
    for c in rep.violations:
        print(f"VI violated at t={c.t:.6g}, u={c.u:.6g} (record {c.path}): "
              f"estimate {c.estimate:.3g} > 3 SE {3 * c.se:.3g}", file=sys.stderr)
    return {"cells": len(rep.cells), "violations": len(rep.violations),
            "collapse_failures": len(rep.collapse_failures),
            "checks": {"variational_inequality": not rep.violations,
                       "analytic_collapse": not rep.collapse_failures}}


def cmd_sweep_theta(scn, run, out: Path) -> dict:
    grid = TimeGrid(scn.n_steps, scn.model.horizon_T)
    policy, _ = _policy(scn, run, grid)
    traj = evolve_system(scn.model, policy, generate_drivers(grid, run["paths"], run["seed"]),
                         keep_paths=False)
    Psi = traj.xi[:, -1] + scn.model.term_cost_h(traj.x[:, -1], traj.m[-1])
    rows = expansion_rows(traj.log_rho[:, -1], Psi, run["thetas"])
    write_csv(out / "sweep_theta.csv", ["theta", "j_theta", "scaled_log_j", "residual"],
              ((r.theta, r.j_theta, r.scaled_log, r.residual) for r in rows))
    slope = fit_slope([r.theta for r in rows], [r.residual for r in rows])
    return {"slope": slope, "checks": {}}


HANDLERS = {
    "simulate": cmd_simulate,
    "riccati": cmd_riccati,
    "filter": cmd_filter,
    "cost": cmd_cost,
    "check-smp": cmd_check_smp,
    "sweep-theta": cmd_sweep_theta,
}


def execute(command: str, config: dict, overrides: dict, out: Path) -> int:
    """Run one command; returns the exit code."""
    try:
        unknown = set(config) - {"scenario", "run"}
        if unknown:
            raise ConfigError(f"{sorted(unknown)[0]}: unknown table")
        scn = build_scenario(config.get("scenario", {"kind": "lq"}))
        run = resolve_run(config.get("run"), overrides)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"command": command, "version": __version__,
                "scenario": config.get("scenario", {"kind": "lq"}),
                "run": {k: v for k, v in run.items() if k != "out"}}
    write_json(out / "manifest.json", manifest)
    try:
        summary = HANDLERS[command](scn, run, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (RiccatiBlowUp, FloatingPointError, OverflowError, RuntimeError) as exc:
        write_json(out / "summary.json", {"command": command, "error": str(exc), "passed": False})
        print(f"{command}: {exc}", file=sys.stderr)
        return 1
    passed = all(summary["checks"].values())
    summary.update(command=command, passed=passed)
    write_json(out / "summary.json", summary)
    print(f"{command}: {'pass' if passed else 'FAIL'} -> {out}")
    return 0 if passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rsmfc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path)
        p.add_argument("--seed", type=int)
        p.add_argument("--paths", type=int)
        p.add_argument("--particles", type=int)
        p.add_argument("--out", type=Path)
        p.add_argument("--case", type=int, choices=(1, 2))
        if name == "filter":
            p.add_argument("--source", choices=("particle", "closed-form"))
    rp = sub.add_parser("replay", help="rerun the command recorded in a manifest")
    rp.add_argument("manifest", type=Path)
    rp.add_argument("--out", type=Path)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "replay":
        try:
            man = read_json(args.manifest)
            command = man["command"]
            config = {"scenario": man["scenario"], "run": man["run"]}
        except (OSError, ValueError, KeyError) as exc:
            print(f"config error: unreadable manifest: {exc}", file=sys.stderr)
            return 2
        if command not in HANDLERS:
            print(f"config error: command: unknown {command!r}", file=sys.stderr)
            return 2
        out = args.out or args.manifest.parent
        return execute(command, config, {}, out)
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    overrides = {"seed": args.seed, "paths": args.paths, "particles": args.particles,
                 "case": args.case, "source": getattr(args, "source", None)}
    out = args.out or Path(config.get("run", {}).get("out", "rsmfc-out"))
    return execute(args.command, config, overrides, out)


if __name__ == "__main__":
    sys.exit(main())
