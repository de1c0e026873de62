"""
Command-line front end
shearflow/cli.py

    shearctl <command> --config <path> [--out <dir>] [--seed <int>] [--log-json] [--verbose]

Commands: solve-state, optimize, certify, verify-properties.

Exit status: 0 when every declared tolerance is met, 1 when the artifacts were
written but a tolerance failed (unconverged run, uncertified stationarity,
failed property), 2 on an error, with failure.json in the output directory.
"""

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from shearflow import fem
from shearflow.adjoint_control import ControlProblem, delta_path
from shearflow.config import config
from shearflow.exceptions import ConfigError, FieldError, ShearflowError
from shearflow.fields import FeField, FieldRole
from shearflow.io_export import (
    cell_average,
    strain_cell_scalars,
    write_json,
    write_nodal_csv,
    write_table_csv,
    write_vtk,
)
from shearflow.logger import (
    attach_file_handler,
    attach_json_handler,
    detach_handler,
    enable_debug_logging,
    get_logger,
    set_package_level,
)
from shearflow.run_config import (
    RunConfig,
    build_control,
    build_dofmap,
    build_problem,
    optimizer_config,
    parse_config,
    path_schedule,
    solver_config,
)
from shearflow.state_solver import solve_state_nonsmooth
from shearflow.stationarity import (
    certify,
    classify_sets,
    compute_multiplier,
    pointwise_table,
    random_directions,
)
from shearflow.tensor_core import ddot
from shearflow.tensor_properties import run_property_suite

logger = get_logger(__name__)

COMMANDS = ("solve-state", "optimize", "certify", "verify-properties")
EXIT_OK, EXIT_TOLERANCE, EXIT_ERROR = 0, 1, 2
FINAL_STATE = "final_state.npz"


# ============================================================================
# ARTIFACTS
# ============================================================================

def _mesh_summary(dofmap: fem.DofMap) -> Dict:
    mesh = dofmap.mesh
    return {
        "n_vertices": mesh.n_vertices,
        "n_triangles": mesh.n_triangles,
        "h_max": mesh.h_max,
        "fingerprint": mesh.fingerprint(),
        "n_velocity_dofs": dofmap.n_velocity,
        "n_pressure_dofs": dofmap.n_pressure,
    }


def _problem_digest(cfg: RunConfig, problem: ControlProblem) -> str:
    """MD5 over the problem section and the target values a saved state belongs to"""
    digest = hashlib.md5()
    section = cfg.problem.model_dump(exclude={"control", "control_strength"})
    digest.update(json.dumps(section, sort_keys=True).encode("utf-8"))
    digest.update(np.ascontiguousarray(problem.z_d.coefficients).tobytes())
    return digest.hexdigest()

def _write_fields(
    out: Path,
    cfg: RunConfig,
    name: str,
    vectors: Dict[str, FeField],
    cells: Dict[str, np.ndarray],
    extra: Tuple[FeField, ...] = (),
) -> List[str]:
    written = []
    dofmap = next(iter(vectors.values())).dofmap
    if "vtk" in cfg.output.formats:
        written.append(str(write_vtk(out / f"{name}.vtk", dofmap, vectors, cells, title=f"shearflow {name}")))
    if "csv" in cfg.output.formats:
        for key, fe in list(vectors.items()) + [(f.role.value, f) for f in extra]:
            written.append(str(write_nodal_csv(out / f"{name}_{key}.csv", fe)))
    return written


def _state_cells(y: FeField, lam=None) -> Dict[str, np.ndarray]:
    eps_y = fem.eval_sym_gradient(y)
    cells = {"abs_eps_y": strain_cell_scalars(eps_y)}
    if lam is not None:
        cells["lambda_dot_eps_y"] = cell_average(ddot(lam.values, eps_y.values), eps_y.weights)
    return cells


# ============================================================================
# COMMANDS
# ============================================================================

def _solve_state(cfg: RunConfig, out: Path) -> Tuple[int, Dict]:
    dofmap = build_dofmap(cfg)
    u = build_control(cfg, dofmap)
    state = solve_state_nonsmooth(u, cfg.params, solver_config(cfg))

    files = _write_fields(out, cfg, "state", {"velocity": state.velocity}, _state_cells(state.velocity),
                          extra=(state.pressure,))
    files.append(str(write_table_csv(out / "state_residuals.csv", pd.DataFrame(state.history))))
    report = {
        "converged": state.converged,
        "residual": state.residual,
        "iterations": state.iterations,
        "velocity_h1": fem.h1_norm(state.velocity),
        "history": state.history,
        "mesh": _mesh_summary(dofmap),
    }
    if "json" in cfg.output.formats:
        files.append(str(write_json(out / "state_report.json", report)))
    code = EXIT_OK if state.converged else EXIT_TOLERANCE
    return code, {"files": files, "converged": state.converged}


def _optimize(cfg: RunConfig, out: Path) -> Tuple[int, Dict]:
    dofmap = build_dofmap(cfg)
    problem = build_problem(cfg, dofmap)
    path = delta_path(problem, path_schedule(cfg), None, optimizer_config(cfg))
    if not path.stages:
        raise ShearflowError(f"delta path produced no stage: {path.error}")

    files = [str(write_table_csv(out / "path_table.csv", path.table()))]
    final = path.final.result
    y, p, u = final.state.velocity, final.adjoint.adjoint, final.control
    lam = compute_multiplier(y, p, cfg.problem.g, final.delta)
    files += _write_fields(out, cfg, "final", {"velocity": y, "adjoint": p, "control": u}, _state_cells(y, lam))

    np.savez(
        out / FINAL_STATE,
        control=u.coefficients,
        velocity=y.coefficients,
        pressure=final.state.pressure.coefficients,
        adjoint=p.coefficients,
        adjoint_pressure=final.adjoint.pressure.coefficients,
        delta=final.delta,
        converged=path.converged,
        fingerprint=dofmap.fingerprint,
        problem_digest=_problem_digest(cfg, problem),
    )
    files.append(str(out / FINAL_STATE))

    report = {
        "stages": path.records(),
        "halted": path.halted,
        "error": path.error,
        "converged": path.converged,
        "final_delta": final.delta,
        "mesh": _mesh_summary(dofmap),
    }
    if "json" in cfg.output.formats:
        files.append(str(write_json(out / "path_report.json", report)))
    code = EXIT_OK if path.converged else EXIT_TOLERANCE
    return code, {"files": files, "converged": path.converged, "stages": len(path.stages)}


def _load_final_state(path: Path, dofmap: fem.DofMap, problem_digest: str) -> Dict:
    with np.load(path) as data:
        saved = {key: data[key] for key in data.files}
    if str(saved["fingerprint"]) != dofmap.fingerprint:
        raise FieldError(f"{path} was written for a different mesh")
    if "problem_digest" not in saved or str(saved["problem_digest"]) != problem_digest:
        raise FieldError(f"{path} was written for a different problem section or target; rerun optimize")
    return {
        "control": FeField(dofmap, saved["control"], FieldRole.CONTROL),
        "velocity": FeField(dofmap, saved["velocity"], FieldRole.VELOCITY),
        "adjoint": FeField(dofmap, saved["adjoint"], FieldRole.ADJOINT),
        "delta": float(saved["delta"]),
        "converged": bool(saved["converged"]),
    }


def _certify(cfg: RunConfig, out: Path) -> Tuple[int, Dict]:
    files = []
    if not (out / FINAL_STATE).exists():
        logger.info(f"No {FINAL_STATE} in {out}; running optimize first")
        _, info = _optimize(cfg, out)
        files += info["files"]

    dofmap = build_dofmap(cfg)
    problem = build_problem(cfg, dofmap)
    saved = _load_final_state(out / FINAL_STATE, dofmap, _problem_digest(cfg, problem))
    u, y, p, delta = saved["control"], saved["velocity"], saved["adjoint"], saved["delta"]

    directions = random_directions(dofmap, cfg.output.n_directions, cfg.output.seed)
    report = certify(problem, u, y, p, delta, directions, solver_config(cfg), eps_a=cfg.output.report_band)
    if not saved["converged"]:
        report.notes.append("the optimization run being certified did not converge")

    data = report.to_dict()
    data["run_converged"] = saved["converged"]
    data["seed"] = cfg.output.seed
    files.append(str(write_json(out / "stationarity_report.json", data)))

    lam = compute_multiplier(y, p, cfg.problem.g, delta)
    masks = classify_sets(y, cfg.problem.g, cfg.output.report_band)
    if "csv" in cfg.output.formats:
        files.append(str(write_table_csv(out / "stationarity_points.csv", pointwise_table(y, lam, masks))))

    ok = report.certified and saved["converged"]
    return (EXIT_OK if ok else EXIT_TOLERANCE), {"files": files, "certified": report.certified}


def _verify_properties(cfg: RunConfig, out: Path) -> Tuple[int, Dict]:
    report = run_property_suite(
        n_samples=cfg.output.property_samples,
        seed=cfg.output.seed,
        g=cfg.problem.g,
        deltas=cfg.deltas,
    )
    files = [str(write_json(out / "properties.json", report.to_dict()))]
    if "csv" in cfg.output.formats:
        files.append(str(write_table_csv(out / "properties.csv", report.table())))
    return (EXIT_OK if report.passed else EXIT_TOLERANCE), {"files": files, "passed": report.passed}


_HANDLERS = {
    "solve-state": _solve_state,
    "optimize": _optimize,
    "certify": _certify,
    "verify-properties": _verify_properties,
}


def run_command(cmd: str, cfg: RunConfig, out: Optional[Path] = None, seed: Optional[int] = None) -> int:
    """
    Run one command and write its artifacts plus run_summary.json.
    ShearflowError is turned into failure.json and exit status 2.
    """
    if cmd not in _HANDLERS:
        raise ValueError(f"unknown command {cmd!r}; expected one of {COMMANDS}")
    if seed is not None:
        cfg = cfg.model_copy(update={"output": cfg.output.model_copy(update={"seed": int(seed)})})
    out = Path(out or cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)

    summary = {
        "command": cmd,
        "config": cfg.summary(),
        "app_version": config.app.APP_VERSION,
        "seed": cfg.output.seed,
        "defaults": config.get_summary(),
    }
    try:
        code, info = _HANDLERS[cmd](cfg, out)
    except ShearflowError as e:
        logger.error(f"❌ {cmd} failed: {e}")
        # full traceback on the console only in development
        logger.log(logging.ERROR if config.is_development() else logging.DEBUG, "failure details", exc_info=True)
        failure = {
            "command": cmd,
            "error_type": type(e).__name__,
            "message": str(e),
            "details": e.details(),
        }
        write_json(out / "failure.json", failure)
        write_json(out / "run_summary.json", {**summary, "exit_code": EXIT_ERROR, "status": "error"})
        return EXIT_ERROR

    status = "ok" if code == EXIT_OK else "tolerance_failed"
    write_json(out / "run_summary.json", {**summary, **info, "exit_code": code, "status": status})
    icon = "✅" if code == EXIT_OK else "⚠️"
    logger.info(f"{icon} {cmd} finished with status {status}; artifacts in {out}")
    return code


# ============================================================================
# ENTRY POINT
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shearctl",
        description="Optimal control of shear-thickening flows: state solves, delta-path optimization, "
                    "stationarity certification.",
    )
    parser.add_argument("command", choices=COMMANDS, help="workflow to run")
    parser.add_argument("--config", required=True, type=Path, help="INI run configuration")
    parser.add_argument("--out", type=Path, default=None, help="output directory (default: [output] directory)")
    parser.add_argument("--seed", type=int, default=None, help="seed for random probes and property samples")
    parser.add_argument("--log-json", action="store_true", help="emit log records as JSON lines on stderr")
    parser.add_argument("--verbose", action="store_true", help="debug output on the console")
    return parser


def _configure_logging(args, out: Path) -> List[logging.Handler]:
    level = logging.DEBUG if args.verbose else getattr(logging, config.app.LOG_LEVEL, logging.INFO)
    if args.verbose:
        enable_debug_logging()
    else:
        set_package_level(level)
    handlers = []
    if args.log_json:
        handlers.append(attach_json_handler(level=level))
    if config.app.LOG_TO_FILE:
        handlers.append(attach_file_handler(
            "shearflow.log",
            log_dir=str(out / config.app.LOG_DIR),
            max_bytes=config.app.LOG_MAX_SIZE,
            backup_count=config.app.LOG_BACKUP_COUNT,
        ))
    return handlers


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    is_valid, error = config.validate()
    if not is_valid:
        print(f"Invalid package defaults: {error}", file=sys.stderr)
        return EXIT_ERROR

    try:
        cfg = parse_config(args.config)
    except ConfigError as e:
        out = Path(args.out or config.app.OUTPUT_DIR)
        out.mkdir(parents=True, exist_ok=True)
        print(str(e), file=sys.stderr)
        write_json(out / "failure.json", {
            "command": args.command,
            "error_type": type(e).__name__,
            "message": str(e),
            "details": e.details(),
        })
        return EXIT_ERROR

    out = Path(args.out or cfg.output.directory)
    handlers = _configure_logging(args, out)
    try:
        return run_command(args.command, cfg, out, args.seed)
    finally:
        for handler in handlers:
            detach_handler(handler)
