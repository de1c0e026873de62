"""
Regularized optimal control
shearflow/adjoint_control.py

Reduced functional of the regularized problem
    j_delta(u) = 1/2 ||S_delta(u) - z_d||^2 + alpha/2 ||u||^2 + 1/2 ||u - u_bar||^2
its adjoint-based gradient, a Barzilai-Borwein optimizer with an Armijo
safeguard, and the delta -> 0 continuation driver.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from shearflow import fem
from shearflow import tensor_core as tc
from shearflow.config import config
from shearflow.exceptions import ConvergenceError, FieldError, ParameterError, ShearflowError
from shearflow.fields import FeField, FieldRole
from shearflow.logger import get_logger, log_iteration
from shearflow.stationarity import compute_multiplier
from shearflow.state_solver import SolverConfig, StateSolution, solve_state_nonsmooth, solve_state_regularized

logger = get_logger(__name__)

MODES = ("proximal", "original")
ANCHORS = ("previous", "fixed")
MAX_BB_STEP = 1e6


# ============================================================================
# TYPES
# ============================================================================

@dataclass
class ControlProblem:
    """Model parameters, control cost alpha, target z_d and anchor u_bar"""

    params: tc.PlasticityParams
    alpha: float
    z_d: FeField
    u_bar: Optional[FeField] = None

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha <= 0:
            raise ParameterError(f"alpha must be strictly positive, got {self.alpha}")
        if self.u_bar is None:
            self.u_bar = FeField.zeros(self.z_d.dofmap, FieldRole.CONTROL)
        if self.u_bar.dofmap is not self.z_d.dofmap:
            raise FieldError("z_d and u_bar must share a dof map")
        if not (self.z_d.role.is_vector and self.u_bar.role.is_vector):
            raise FieldError("z_d and u_bar must be vector fields")

    @property
    def dofmap(self) -> fem.DofMap:
        return self.z_d.dofmap

    def with_anchor(self, u_bar: FeField) -> "ControlProblem":
        return ControlProblem(self.params, self.alpha, self.z_d, u_bar.as_role(FieldRole.CONTROL))

    def zero_control(self) -> FeField:
        return FeField.zeros(self.dofmap, FieldRole.CONTROL)


@dataclass
class PathSchedule:
    """
    Decreasing regularization widths with optional per-stage solver overrides.

    anchor: "previous" re-anchors u_bar at the previous stage's control,
        "fixed" keeps problem.u_bar throughout.
    anchor_refinements: proximal re-solves at the last delta with u_bar := u.
    polish: finish with an unanchored solve at the last delta, so that the
        gradient equation alpha u + p = 0 is met to tolerance.
    """

    deltas: List[float]
    stage_overrides: List[Dict] = field(default_factory=list)
    anchor: str = "previous"
    anchor_refinements: int = 0
    polish: bool = True

    def __post_init__(self):
        self.deltas = [float(d) for d in self.deltas]
        if not self.deltas:
            raise ParameterError("schedule needs at least one delta")
        if any(d <= 0 for d in self.deltas):
            raise ParameterError("schedule deltas must be positive")
        if any(b >= a for a, b in zip(self.deltas, self.deltas[1:])):
            raise ParameterError("schedule deltas must be strictly decreasing")
        if self.anchor not in ANCHORS:
            raise ParameterError(f"anchor must be one of {ANCHORS}, got {self.anchor!r}")
        if self.anchor_refinements < 0:
            raise ParameterError("anchor_refinements must be non-negative")

    def validate(self, g: float) -> None:
        for d in self.deltas:
            tc.RegParam(d).check_against(g)

    def overrides(self, stage: int) -> Dict:
        return self.stage_overrides[stage] if stage < len(self.stage_overrides) else {}


@dataclass
class OptimizerConfig:
    max_iters: int = field(default_factory=lambda: config.solver.OPTIMIZER_MAX_ITERS)
    tol_grad: Optional[float] = None
    armijo_c1: float = field(default_factory=lambda: config.solver.ARMIJO_C1)
    bb_step_min: float = field(default_factory=lambda: config.solver.BB_STEP_MIN)
    mode: str = "proximal"
    state: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}, got {self.mode!r}")
        if int(self.max_iters) < 0:
            raise ParameterError("max_iters must be non-negative")

    def grad_tolerance(self, problem: ControlProblem) -> float:
        if self.tol_grad is not None:
            return float(self.tol_grad)
        return config.tol.GRAD_TOL_REL * (1.0 + fem.l2_norm(problem.z_d))


@dataclass
class AdjointSolution:
    adjoint: FeField
    pressure: FeField
    residual: float


@dataclass
class OptimizationResult:
    control: FeField
    state: StateSolution
    adjoint: AdjointSolution
    history: List[Dict[str, float]]
    converged: bool
    j_value: float
    grad_norm: float
    delta: float
    mode: str = "proximal"

    @property
    def iterations(self) -> int:
        return max(len(self.history) - 1, 0)


# ============================================================================
# ADJOINT AND GRADIENT
# ============================================================================

def _delta(delta) -> float:
    return delta.delta if isinstance(delta, tc.RegParam) else float(delta)


def solve_adjoint_regularized(
    y_delta: FeField, problem: ControlProblem, delta, order: Optional[int] = None,
) -> AdjointSolution:
    """
    mu (eps p, eps v) + nu (m_delta'(eps y) eps p, eps v) = (y - z_d, v), div p = 0.
    The Jacobian is self-adjoint, so the forward Jacobian is reused.
    """
    dofmap = y_delta.dofmap
    operator = fem.assemble_jacobian(y_delta, problem.params, _delta(delta), order)
    rhs = fem.mass_matrix(dofmap) @ (y_delta.coefficients - problem.z_d.coefficients)
    p, q = fem.SaddleSolver(dofmap, operator).solve(rhs)

    momentum = operator.A @ p + operator.B.T @ q - rhs
    momentum[dofmap.dirichlet_mask] = 0.0
    residual = float(np.sqrt(momentum @ momentum + np.sum((operator.B @ p) ** 2)))
    return AdjointSolution(
        adjoint=FeField(dofmap, p, FieldRole.ADJOINT),
        pressure=FeField(dofmap, q, FieldRole.PRESSURE),
        residual=residual,
    )


def reduced_gradient(u: FeField, p: FeField, problem: ControlProblem, mode: str = "proximal") -> FeField:
    """
    L2 representative of the reduced gradient:
        proximal: p + (alpha + 1) u - u_bar
        original: p + alpha u
    """
    if mode not in MODES:
        raise ParameterError(f"mode must be one of {MODES}, got {mode!r}")
    coefs = p.coefficients + problem.alpha * u.coefficients
    if mode == "proximal":
        coefs = coefs + u.coefficients - problem.u_bar.coefficients
    return FeField(problem.dofmap, coefs, FieldRole.CONTROL)


def _objective_value(u: FeField, y: FeField, problem: ControlProblem, mode: str) -> float:
    value = 0.5 * fem.l2_norm(y.as_role(FieldRole.CONTROL) - problem.z_d) ** 2 + 0.5 * problem.alpha * fem.l2_norm(u) ** 2
    if mode == "proximal":
        value += 0.5 * fem.l2_norm(u - problem.u_bar) ** 2
    return float(value)


def reduced_objective(
    u: FeField,
    problem: ControlProblem,
    delta=None,
    mode: str = "proximal",
    cfg: Optional[SolverConfig] = None,
    initial: Optional[StateSolution] = None,
):
    """
    j_delta(u) (or j(u) with the nonsmooth state when delta is None).

    Returns:
        (value, state)
    """
    if delta is None:
        state = solve_state_nonsmooth(u, problem.params, cfg, initial)
    else:
        state = solve_state_regularized(u, problem.params, delta, cfg, initial)
    return _objective_value(u, state.velocity, problem, mode), state


def gradient_check(
    problem: ControlProblem,
    delta,
    u: FeField,
    directions: Sequence[FeField],
    t: Optional[float] = None,
    mode: str = "proximal",
    cfg: Optional[SolverConfig] = None,
) -> pd.DataFrame:
    """
    Central differences (j(u + t h) - j(u - t h)) / 2t against (grad, h)_L2.
    """
    _, state = reduced_objective(u, problem, delta, mode, cfg)
    adjoint = solve_adjoint_regularized(state.velocity, problem, delta)
    grad = reduced_gradient(u, adjoint.adjoint, problem, mode)

    rows = []
    for k, h in enumerate(directions):
        h_norm = fem.l2_norm(h)
        if h_norm == 0:
            rows.append({"direction": k, "t": 0.0, "fd": 0.0, "adjoint": 0.0, "rel_error": 0.0})
            continue
        step = t if t is not None else 1e-4 * (1.0 + fem.l2_norm(u)) / h_norm
        j_plus, _ = reduced_objective(u + step * h, problem, delta, mode, cfg, initial=state)
        j_minus, _ = reduced_objective(u - step * h, problem, delta, mode, cfg, initial=state)
        fd = (j_plus - j_minus) / (2 * step)
        exact = fem.l2_inner(grad, h)
        rel = abs(fd - exact) / max(abs(exact), abs(fd), 1e-14)
        rows.append({"direction": k, "t": step, "fd": fd, "adjoint": exact, "rel_error": rel})
    return pd.DataFrame(rows)


# ============================================================================
# OPTIMIZER
# ============================================================================

def optimize_regularized(
    problem: ControlProblem,
    delta,
    u0: Optional[FeField] = None,
    cfg: Optional[OptimizerConfig] = None,
    initial_state: Optional[StateSolution] = None,
) -> OptimizationResult:
    """
    Minimize j_delta by gradient descent with Barzilai-Borwein steps and an
    Armijo backtracking safeguard. A stalled line search returns the best
    iterate flagged as non-converged.
    """
    cfg = cfg or OptimizerConfig()
    delta = _delta(delta)
    tc.RegParam(delta).check_against(problem.params.g)
    tol = cfg.grad_tolerance(problem)
    mode = cfg.mode

    u = (u0 or problem.zero_control()).as_role(FieldRole.CONTROL)
    j, state = reduced_objective(u, problem, delta, mode, cfg.state, initial_state)
    adjoint = solve_adjoint_regularized(state.velocity, problem, delta, cfg.state.quadrature_order)
    grad = reduced_gradient(u, adjoint.adjoint, problem, mode)
    gnorm = fem.l2_norm(grad)

    history = [{"iteration": 0, "j": j, "grad_norm": gnorm, "step": 0.0, "backtracks": 0}]
    step = 1.0 / (problem.alpha + (1.0 if mode == "proximal" else 0.0))
    u_prev = grad_prev = None
    converged = gnorm <= tol

    for it in range(1, cfg.max_iters + 1):
        if converged:
            break
        if u_prev is not None:
            s = u - u_prev
            yk = grad - grad_prev
            sy = fem.l2_inner(s, yk)
            if sy > 0:
                step = min(fem.l2_inner(s, s) / sy, MAX_BB_STEP)

        backtracks = 0
        accepted = False
        while step >= cfg.bb_step_min:
            trial = u - step * grad
            try:
                j_trial, state_trial = reduced_objective(trial, problem, delta, mode, cfg.state, state)
            except ConvergenceError:
                j_trial = np.inf
            if j_trial <= j - cfg.armijo_c1 * step * gnorm ** 2:
                accepted = True
                break
            step *= 0.5
            backtracks += 1

        if not accepted:
            logger.warning(f"Optimizer stalled at iteration {it} (delta={delta:.3e}, |grad|={gnorm:.3e})")
            break

        u_prev, grad_prev = u, grad
        u, j, state = trial, j_trial, state_trial
        adjoint = solve_adjoint_regularized(state.velocity, problem, delta, cfg.state.quadrature_order)
        grad = reduced_gradient(u, adjoint.adjoint, problem, mode)
        gnorm = fem.l2_norm(grad)
        history.append({"iteration": it, "j": j, "grad_norm": gnorm, "step": step, "backtracks": backtracks})
        log_iteration(logger, "optimizer", iteration=it, j=j, grad_norm=gnorm, step=step, delta=delta)
        converged = gnorm <= tol

    status = "converged" if converged else "not converged"
    logger.info(f"Optimizer {status} at delta={delta:.3e}: j={j:.6e}, |grad|={gnorm:.3e}, "
                f"{len(history) - 1} iterations")
    return OptimizationResult(u, state, adjoint, history, converged, j, gnorm, delta, mode)


# ============================================================================
# DELTA PATH
# ============================================================================

@dataclass
class StageResult:
    stage: int
    delta: float
    result: OptimizationResult
    multiplier_norm: float
    control_distance: Optional[float]
    state_distance: Optional[float]
    state_residual: float
    adjoint_residual: float
    gradient_residual_proximal: float
    gradient_residual_original: float
    proximal_term: float = 0.0
    kind: str = "stage"

    def record(self) -> Dict:
        return {
            "stage": self.stage,
            "kind": self.kind,
            "delta": self.delta,
            "iters": self.result.iterations,
            "converged": self.result.converged,
            "j_value": self.result.j_value,
            "grad_norm": self.result.grad_norm,
            "state_residual": self.state_residual,
            "adjoint_residual": self.adjoint_residual,
            "gradient_residual_proximal": self.gradient_residual_proximal,
            "gradient_residual_original": self.gradient_residual_original,
            "proximal_term": self.proximal_term,
            "multiplier_norm": self.multiplier_norm,
            "control_distance": self.control_distance,
            "state_distance": self.state_distance,
        }


@dataclass
class PathResult:
    stages: List[StageResult]
    problem: ControlProblem
    halted: bool = False
    error: Optional[str] = None

    @property
    def final(self) -> StageResult:
        return self.stages[-1]

    def table(self) -> pd.DataFrame:
        return pd.DataFrame([s.record() for s in self.stages])

    def records(self) -> List[Dict]:
        return [s.record() for s in self.stages]

    @property
    def converged(self) -> bool:
        return not self.halted and bool(self.stages) and all(s.result.converged for s in self.stages)


def _stage_result(stage, kind, problem, result: OptimizationResult, previous: Optional[StageResult]) -> StageResult:
    dofmap = problem.dofmap
    y, p, u = result.state.velocity, result.adjoint.adjoint, result.control
    lam = compute_multiplier(y, p, problem.params.g, result.delta)

    state_res = fem.solenoidal_dual_norm(
        dofmap,
        fem.assemble_nonlinear_residual(y, u, problem.params, result.delta, result.state.pressure).momentum,
    )
    prox = fem.l2_norm(reduced_gradient(u, p, problem, "proximal"))
    orig = fem.l2_norm(reduced_gradient(u, p, problem, "original"))
    # 0.5 |u - u_bar|^2 as it enters the stage objective
    proximal = 0.5 * fem.l2_norm(u - problem.u_bar) ** 2 if result.mode == "proximal" else 0.0
    return StageResult(
        stage=stage,
        delta=result.delta,
        result=result,
        multiplier_norm=lam.l2_norm(),
        control_distance=None if previous is None else fem.l2_norm(u - previous.result.control),
        state_distance=None if previous is None else fem.h1_norm(y - previous.result.state.velocity),
        state_residual=state_res,
        adjoint_residual=result.adjoint.residual,
        gradient_residual_proximal=prox,
        gradient_residual_original=orig,
        proximal_term=proximal,
        kind=kind,
    )


def _stage_config(base: OptimizerConfig, overrides: Dict) -> OptimizerConfig:
    state_keys = {"tol_residual", "max_iters", "linesearch", "picard_relax", "min_step", "quadrature_order", "semismooth"}
    state_over = {k: v for k, v in overrides.items() if k in state_keys}
    opt_over = {k: v for k, v in overrides.items() if k not in state_keys}
    return OptimizerConfig(
        max_iters=opt_over.get("optimizer_max_iters", base.max_iters),
        tol_grad=opt_over.get("tol_grad", base.tol_grad),
        armijo_c1=base.armijo_c1,
        bb_step_min=base.bb_step_min,
        mode=base.mode,
        state=base.state.updated(**state_over),
    )


def delta_path(
    problem: ControlProblem,
    schedule: PathSchedule,
    u0: Optional[FeField] = None,
    cfg: Optional[OptimizerConfig] = None,
) -> PathResult:
    """
    Warm-started sequence of regularized solves along schedule.deltas.

    A failing stage halts the path; the stages completed so far are returned.
    """
    cfg = cfg or OptimizerConfig()
    schedule.validate(problem.params.g)
    stages: List[StageResult] = []
    u = u0 or problem.zero_control()
    state = None
    anchor = problem.u_bar
    path = PathResult(stages, problem)

    plan = [("stage", k, d) for k, d in enumerate(schedule.deltas)]
    last = len(schedule.deltas) - 1
    plan += [("refinement", last, schedule.deltas[-1])] * schedule.anchor_refinements
    if schedule.polish:
        plan.append(("polish", last, schedule.deltas[-1]))

    for kind, k, delta in plan:
        stage_problem = problem.with_anchor(anchor)
        stage_cfg = _stage_config(cfg, schedule.overrides(k))
        if kind == "polish":
            stage_cfg.mode = "original"
        try:
            result = optimize_regularized(stage_problem, delta, u, stage_cfg, state)
        except ShearflowError as e:
            logger.error(f"Path halted at {kind} {k} (delta={delta:.3e}): {e}")
            path.halted, path.error = True, str(e)
            break

        previous = stages[-1] if stages else None
        stages.append(_stage_result(len(stages), kind, stage_problem, result, previous))
        rec = stages[-1].record()
        logger.info(f"Path {kind} {k}: delta={delta:.3e}, j={rec['j_value']:.6e}, "
                    f"|lambda|={rec['multiplier_norm']:.3e}, control distance={rec['control_distance']}")
        if not result.converged:
            logger.warning(f"Path {kind} {k} (delta={delta:.3e}) stopped after {result.iterations} iterations "
                           f"with gradient norm {result.grad_norm:.3e}; continuing")

        u, state = result.control, result.state
        if schedule.anchor == "previous" or kind == "refinement":
            anchor = u

    return path
