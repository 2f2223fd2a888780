"""Command-line interface: terminal design, closed-loop simulation, and
verification suites, all driven by a JSON configuration file.

Exit codes: 0 success, 1 verification failure, 2 usage or configuration
error, 3 runtime infeasibility.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .attitude import SpacecraftAttitudeSystem, spinning_state
from .errors import ConfigError, Infeasible, NoConvergence, NoFeasibleLevel, So3MpcError
from .experiments import (
    audit_lyapunov,
    certify_local_law,
    probe_discontinuity,
    verify_conservation,
    write_diagnostics_csv,
    write_snapshot_csv,
    write_trajectory_csv,
)
from .mpc import MpcConfig, SolverSettings, closed_loop
from .terminal import (
    StageWeights,
    TerminalDesign,
    build_cost_data,
    build_linearization,
    dare_residual,
    design_terminal,
)
from .validation import as_matrix3, check_vector3

VERIFY_SUITES = ("conservation", "local-law", "lyapunov", "discontinuity", "all")


@dataclass
class RunConfig:
    """Parsed configuration; every field has a working default."""

    inertia: np.ndarray
    h: float
    weights: StageWeights
    horizon: int
    torque_bound: float
    solver: SolverSettings
    terminal_samples: int
    terminal_shrink: float
    initial_attitude: np.ndarray
    initial_rate: np.ndarray
    n_steps: int
    seed: int
    distance_tol: float
    out_dir: str
    csv_cadence: int
    snapshot_seconds: float
    raw: dict = field(default_factory=dict)


def default_config_dict() -> dict:
    return {
        "physical": {"J_kgm2": [1.0, 1.2, 1.5], "h_seconds": 0.1},
        "weights": {"Q_g": 1.0, "Q_f": [1.0, 1.2, 1.5], "R": 2.0, "lambda": 0.1},
        "mpc": {
            "N": 10,
            "tau_max_Nm": 100.0,
            "solver": {},
        },
        "terminal": {"n_samples": 1000, "shrink": 0.9},
        "experiment": {
            "initial_attitude_axis_angle_rad": [0.0, 0.0, 3.141592653589793],
            "initial_rate_rad_s": [0.0, 0.0, 0.0],
            "n_steps": 120,
            "seed": 0,
            "distance_tol": 0.01,
        },
        "output": {"directory": "out", "csv_cadence_steps": 1, "snapshot_seconds": 2.0},
    }


def _get(section: dict, key: str, path: str, default=None):
    if key in section:
        return section[key]
    if default is not None:
        return default
    raise ConfigError(f"{path}.{key}", "missing required key")


def _positive(value, path: str, allow_inf: bool = False) -> float:
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ConfigError(path, f"must be a number, got {value!r}") from None
    if np.isnan(number) or number <= 0 or (not allow_inf and np.isinf(number)):
        raise ConfigError(path, f"must be positive and finite, got {number}")
    return number


def parse_config(data: dict) -> RunConfig:
    """Validate a configuration dictionary, naming the offending key on error."""
    merged = default_config_dict()
    for section, content in data.items():
        if section not in merged:
            raise ConfigError(section, "unknown configuration section")
        if not isinstance(content, dict):
            raise ConfigError(section, "must be an object")
        merged[section].update(content)

    phys = merged["physical"]
    inertia = as_matrix3(_get(phys, "J_kgm2", "physical"), "physical.J_kgm2")
    h = _positive(_get(phys, "h_seconds", "physical"), "physical.h_seconds")

    wsec = merged["weights"]
    decay = wsec.get("lambda", 0.1)
    try:
        decay = float(decay)
        weights = StageWeights(
            as_matrix3(wsec.get("Q_g", 1.0), "weights.Q_g"),
            as_matrix3(wsec.get("Q_f", np.diag(inertia).tolist()), "weights.Q_f"),
            as_matrix3(wsec.get("R", 2.0), "weights.R"),
            decay,
        )
    except (ValueError, TypeError) as err:
        raise ConfigError("weights.lambda", str(err)) from None

    mpc = merged["mpc"]
    horizon = int(_get(mpc, "N", "mpc", 10))
    if horizon < 1:
        raise ConfigError("mpc.N", f"must be at least 1, got {horizon}")
    torque_bound = _positive(
        _get(mpc, "tau_max_Nm", "mpc", 100.0), "mpc.tau_max_Nm", allow_inf=True
    )
    solver_kwargs = mpc.get("solver", {})
    if not isinstance(solver_kwargs, dict):
        raise ConfigError("mpc.solver", "must be an object")
    try:
        solver = SolverSettings(**solver_kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError("mpc.solver", str(err)) from None

    term = merged["terminal"]
    terminal_samples = int(_get(term, "n_samples", "terminal", 1000))
    terminal_shrink = float(_get(term, "shrink", "terminal", 0.9))
    if not 0.0 < terminal_shrink <= 1.0:
        raise ConfigError("terminal.shrink", f"must lie in (0, 1], got {terminal_shrink}")

    exp = merged["experiment"]
    try:
        initial_attitude = check_vector3(
            exp.get("initial_attitude_axis_angle_rad", [0.0, 0.0, 0.0]),
            "experiment.initial_attitude_axis_angle_rad",
        )
        initial_rate = check_vector3(
            exp.get("initial_rate_rad_s", [0.0, 0.0, 0.0]),
            "experiment.initial_rate_rad_s",
        )
    except ValueError as err:
        raise ConfigError("experiment", str(err)) from None
    n_steps = int(exp.get("n_steps", 120))
    if n_steps < 1:
        raise ConfigError("experiment.n_steps", f"must be at least 1, got {n_steps}")
    seed = int(exp.get("seed", 0))
    distance_tol = _positive(exp.get("distance_tol", 0.01), "experiment.distance_tol")

    out = merged["output"]
    out_dir = str(out.get("directory", "out"))
    csv_cadence = int(out.get("csv_cadence_steps", 1))
    if csv_cadence < 1:
        raise ConfigError("output.csv_cadence_steps", "must be at least 1")
    snapshot_seconds = _positive(out.get("snapshot_seconds", 2.0), "output.snapshot_seconds")

    return RunConfig(
        inertia=inertia,
        h=h,
        weights=weights,
        horizon=horizon,
        torque_bound=torque_bound,
        solver=solver,
        terminal_samples=terminal_samples,
        terminal_shrink=terminal_shrink,
        initial_attitude=initial_attitude,
        initial_rate=initial_rate,
        n_steps=n_steps,
        seed=seed,
        distance_tol=distance_tol,
        out_dir=out_dir,
        csv_cadence=csv_cadence,
        snapshot_seconds=snapshot_seconds,
        raw=merged,
    )


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return parse_config({})
    try:
        with open(path) as handle:
            data = json.load(handle)
    except FileNotFoundError:
        raise ConfigError(path, "configuration file not found") from None
    except json.JSONDecodeError as err:
        raise ConfigError(path, f"invalid JSON: {err}") from None
    if not isinstance(data, dict):
        raise ConfigError(path, "top-level JSON value must be an object")
    return parse_config(data)


def _ensure_out_dir(cfg: RunConfig) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg.out_dir


def _write_summary(path: str, payload: dict) -> None:
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def cmd_design(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out_dir = args.out or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    try:
        design = design_terminal(
            cfg.inertia,
            cfg.h,
            cfg.weights,
            torque_bound=cfg.torque_bound,
            n_samples=cfg.terminal_samples,
            shrink=cfg.terminal_shrink,
            seed=cfg.seed,
        )
    except (NoFeasibleLevel, NoConvergence) as err:
        print(f"design failed: {err}", file=sys.stderr)
        return 2
    path = args.design or os.path.join(out_dir, "design.json")
    design.save(path)

    lin = build_linearization(cfg.h, cfg.inertia)
    cost = build_cost_data(cfg.weights)
    residual = dare_residual(design.P, lin, cost)
    rho = float(np.max(np.abs(np.linalg.eigvals(lin.A - lin.B @ design.K))))
    print(f"design written to {path}")
    print(f"riccati residual: {residual:.3e}")
    print(f"closed-loop spectral radius: {rho:.6f}")
    print(f"terminal level c: {design.c:.6g}")
    print(
        "certification: n_samples=%d max_violation=%.3e"
        % (design.certification.n_samples, design.certification.max_violation)
    )
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out_dir = args.out or cfg.out_dir
    design_path = args.design or os.path.join(out_dir, "design.json")
    if not os.path.exists(design_path):
        print(f"design file not found: {design_path} (run the design command first)", file=sys.stderr)
        return 2
    design = TerminalDesign.load(design_path)
    os.makedirs(out_dir, exist_ok=True)

    system = SpacecraftAttitudeSystem(design, torque_bound=cfg.torque_bound)
    state0 = spinning_state(cfg.initial_attitude, cfg.initial_rate, design.h)
    mpc_config = MpcConfig(horizon=cfg.horizon, solver=cfg.solver)
    try:
        run = closed_loop(
            system, state0, mpc_config, cfg.n_steps, distance_tol=cfg.distance_tol
        )
    except Infeasible as err:
        print(f"closed loop infeasible at step {err.step}: {err}", file=sys.stderr)
        return 3

    stride = cfg.csv_cadence
    traj_path = os.path.join(out_dir, "trajectory.csv")
    diag_path = os.path.join(out_dir, "diagnostics.csv")
    snap_path = os.path.join(out_dir, "snapshots.csv")
    write_trajectory_csv(traj_path, run.states[::stride], run.controls[::stride], design.h)
    write_diagnostics_csv(diag_path, run, design.h)
    write_snapshot_csv(snap_path, run.states, design.h, cfg.snapshot_seconds)
    summary = {
        "config": cfg.raw,
        "design_file": design_path,
        "steps": run.n_steps,
        "converged": run.converged,
        "converged_step": run.converged_step,
        "final_distance": float(run.distances[-1]),
        "total_stage_cost": float(run.stage_costs.sum()),
        "traces": {"trajectory": traj_path, "diagnostics": diag_path, "snapshots": snap_path},
    }
    _write_summary(os.path.join(out_dir, "summary.json"), summary)
    print(
        "steps=%d converged=%s final_distance=%.3e total_stage_cost=%.6g"
        % (run.n_steps, run.converged, run.distances[-1], run.stage_costs.sum())
    )
    return 0


def _design_for_verify(cfg: RunConfig, design_path: str | None) -> TerminalDesign:
    if design_path is not None and os.path.exists(design_path):
        return TerminalDesign.load(design_path)
    return design_terminal(
        cfg.inertia,
        cfg.h,
        cfg.weights,
        torque_bound=cfg.torque_bound,
        n_samples=cfg.terminal_samples,
        shrink=cfg.terminal_shrink,
        seed=cfg.seed,
    )


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    suites = VERIFY_SUITES[:-1] if args.suite == "all" else (args.suite,)
    out_dir = args.out or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)

    reports = []
    design = None
    mpc_config = MpcConfig(horizon=cfg.horizon, solver=cfg.solver)
    for suite in suites:
        if suite == "conservation":
            reports.append(
                verify_conservation(cfg.inertia, cfg.h, n_steps=cfg.n_steps, seed=cfg.seed, out_dir=out_dir)
            )
            continue
        if design is None:
            design = _design_for_verify(cfg, args.design)
        if suite == "local-law":
            reports.append(
                certify_local_law(design, cfg.torque_bound, n_samples=cfg.terminal_samples, seed=cfg.seed + 20_000)
            )
        elif suite == "lyapunov":
            system = SpacecraftAttitudeSystem(design, torque_bound=cfg.torque_bound)
            state0 = spinning_state(cfg.initial_attitude, cfg.initial_rate, design.h)
            try:
                run = closed_loop(system, state0, mpc_config, cfg.n_steps, distance_tol=cfg.distance_tol)
            except Infeasible as err:
                print(f"lyapunov suite: closed loop infeasible at step {err.step}", file=sys.stderr)
                return 3
            reports.append(audit_lyapunov(run))
        elif suite == "discontinuity":
            try:
                reports.append(
                    probe_discontinuity(
                        design,
                        mpc_config,
                        torque_bound=cfg.torque_bound,
                        n_steps=cfg.n_steps,
                        attitude_tol=cfg.distance_tol,
                        out_dir=out_dir,
                        seed=cfg.seed,
                    )
                )
            except Infeasible as err:
                print(f"discontinuity suite: closed loop infeasible at step {err.step}", file=sys.stderr)
                return 3

    payload = {
        "config": cfg.raw,
        "passed": all(r.passed for r in reports),
        "suites": [r.to_json_dict() for r in reports],
    }
    verdict_path = os.path.join(out_dir, f"verify_{args.suite}.json")
    _write_summary(verdict_path, payload)
    for report in reports:
        for verdict in report.verdicts:
            status = "PASS" if verdict.passed else "FAIL"
            print(f"[{status}] {report.name}: {verdict.invariant} (margin {verdict.margin:.3e})")
    print(f"verdicts written to {verdict_path}")
    return 0 if payload["passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="so3mpc",
        description="Geometric receding-horizon attitude control on SO(3).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON configuration file")
    common.add_argument("--design", metavar="PATH", help="terminal design JSON file")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--seed", type=int, metavar="N", help="override the configured seed")

    p_design = sub.add_parser("design", parents=[common], help="compute and store the terminal design")
    p_design.set_defaults(func=cmd_design)
    p_sim = sub.add_parser("simulate", parents=[common], help="run a closed-loop simulation")
    p_sim.set_defaults(func=cmd_simulate)
    p_verify = sub.add_parser("verify", parents=[common], help="run a verification suite")
    p_verify.add_argument("suite", choices=VERIFY_SUITES, help="which suite to run")
    p_verify.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        # argparse exits with 2 on usage errors; keep that contract.
        return int(err.code) if err.code is not None else 2
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except Infeasible as err:
        print(f"infeasible: {err}", file=sys.stderr)
        return 3
    except So3MpcError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
