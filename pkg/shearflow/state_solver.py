"""
State equation solvers
shearflow/state_solver.py

Realizes the control-to-state maps:
- S(u):       mu (eps y, eps v) + nu (m(eps y), eps v) = (u, v), div y = 0
- S_delta(u): the same with m replaced by m_delta

The nonsmooth system is solved by damped Picard iteration on the monotone
splitting m(E) = E - proj(E): each step is a Stokes solve with viscosity
mu + nu and the lagged projection as source, contracting at rate
nu / (mu + nu) in the energy norm. Near convergence it is accelerated by
semismooth Newton steps with the generalized derivative of m.

The regularized system is solved by Newton's method with residual
backtracking; a failed line search falls back to the Picard step.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from shearflow import fem
from shearflow import tensor_core as tc
from shearflow.config import config
from shearflow.exceptions import ConvergenceError, ParameterError
from shearflow.fields import FeField, FieldRole
from shearflow.logger import get_logger, log_iteration

logger = get_logger(__name__)

# switch to semismooth Newton below this residual, relative to the load
SEMISMOOTH_SWITCH = 1e-3
ARMIJO = 1e-4


@dataclass
class SolverConfig:
    """Nonlinear solver settings; defaults come from config.solver"""

    tol_residual: float = field(default_factory=lambda: config.solver.TOL_RESIDUAL)
    max_iters: int = field(default_factory=lambda: config.solver.MAX_ITERS)
    linesearch: float = field(default_factory=lambda: config.solver.LINESEARCH)
    picard_relax: float = field(default_factory=lambda: config.solver.PICARD_RELAX)
    min_step: float = field(default_factory=lambda: config.solver.MIN_STEP)
    quadrature_order: int = field(default_factory=lambda: config.solver.QUADRATURE_ORDER)
    semismooth: bool = True

    def __post_init__(self):
        if not self.tol_residual > 0:
            raise ParameterError(f"tol_residual must be positive, got {self.tol_residual}")
        if int(self.max_iters) < 1:
            raise ParameterError(f"max_iters must be at least 1, got {self.max_iters}")
        if not 0 < self.linesearch < 1:
            raise ParameterError(f"linesearch must lie in (0, 1), got {self.linesearch}")
        if not 0 < self.picard_relax <= 1:
            raise ParameterError(f"picard_relax must lie in (0, 1], got {self.picard_relax}")
        self.max_iters = int(self.max_iters)

    def updated(self, **overrides) -> "SolverConfig":
        values = {**self.__dict__, **{k: v for k, v in overrides.items() if v is not None}}
        return SolverConfig(**values)


@dataclass
class StateSolution:
    velocity: FeField
    pressure: FeField
    history: List[Dict[str, float]] = field(default_factory=list)
    converged: bool = True
    residual: float = 0.0
    delta: Optional[float] = None

    @property
    def iterations(self) -> int:
        return len(self.history)


# ============================================================================
# HELPERS
# ============================================================================

def _control_load(u) -> np.ndarray:
    if isinstance(u, FeField):
        return fem.load_vector(u)
    return np.asarray(u, dtype=float)


def _tolerance(cfg: SolverConfig, load: np.ndarray) -> float:
    # absolute tolerance, scaled up for loads larger than one
    return cfg.tol_residual * max(1.0, float(np.linalg.norm(load)))


def _residual(y: np.ndarray, pi: np.ndarray, load: np.ndarray, params, delta, dofmap, order) -> fem.MixedResidual:
    velocity = FeField(dofmap, y, FieldRole.VELOCITY)
    pressure = FeField(dofmap, pi, FieldRole.PRESSURE)
    zero = FeField.zeros(dofmap, FieldRole.CONTROL)
    return fem.assemble_nonlinear_residual(velocity, zero, params, delta, pressure, order, load=load)


def _picard_solver(dofmap, params) -> fem.SaddleSolver:
    return fem.SaddleSolver(dofmap, fem.assemble_stokes(dofmap, params.mu + params.nu), cache=True)


def _picard_step(y, pi, load, params, delta, dofmap, order, relax) -> Tuple[np.ndarray, np.ndarray]:
    """
    Solve (mu + nu) K w + B^T q = load + nu int (eps y - m(eps y)) : eps v.
    E - m_delta(E) is nonexpansive too (its Jacobian has spectrum in [-3/4, 1]).
    """
    eps_y = fem.eval_sym_gradient(FeField(dofmap, y, FieldRole.VELOCITY), order).values
    if delta is None:
        lagged = tc.projection_ball_array(eps_y, params.g)
    else:
        lagged = eps_y - tc.m_delta_array(eps_y, params.g, delta)
    rhs = load + params.nu * fem.assemble_tensor_load(dofmap, lagged, order)
    w, q = _picard_solver(dofmap, params).solve(rhs)
    return y + relax * (w - y), pi + relax * (q - pi)


def _newton_direction(y, residual: fem.MixedResidual, params, delta, dofmap, order):
    velocity = FeField(dofmap, y, FieldRole.VELOCITY)
    if delta is None:
        eps_y = fem.eval_sym_gradient(velocity, order).values
        a, b, n = tc.m_dir_linear_coefficients(eps_y, params.g)
        A = params.mu * fem.strain_stiffness(dofmap) + params.nu * fem.assemble_tensor_operator(dofmap, a, b, n, order)
        operator = fem.SaddleOperator(A.tocsr(), fem.divergence_matrix(dofmap), tag="semismooth")
    else:
        operator = fem.assemble_jacobian(velocity, params, delta, order)
    return fem.SaddleSolver(dofmap, operator).solve(-residual.momentum, -residual.divergence)


def _line_search(y, pi, dy, dpi, r0: float, load, params, delta, dofmap, cfg):
    """Backtracking on the residual norm; returns None when the step gets too small"""
    t = 1.0
    while t >= cfg.min_step:
        y_t, pi_t = y + t * dy, pi + t * dpi
        res = _residual(y_t, pi_t, load, params, delta, dofmap, cfg.quadrature_order)
        if res.norm() <= (1.0 - ARMIJO * t) * r0:
            return y_t, pi_t, res, t
        t *= cfg.linesearch
    return None


def _finish(dofmap, y, pi, history, converged, residual, delta) -> StateSolution:
    return StateSolution(
        velocity=FeField(dofmap, y, FieldRole.VELOCITY),
        pressure=FeField(dofmap, pi, FieldRole.PRESSURE),
        history=history,
        converged=converged,
        residual=residual,
        delta=delta,
    )


def _initial_guess(dofmap, load, params, initial: Optional[StateSolution]) -> Tuple[np.ndarray, np.ndarray]:
    if initial is not None:
        return initial.velocity.coefficients.copy(), initial.pressure.coefficients.copy()
    start = stokes_solve(dofmap, load, params.mu)
    return start.velocity.coefficients, start.pressure.coefficients


# ============================================================================
# STOKES
# ============================================================================

def stokes_solve(dofmap: fem.DofMap, load, viscosity: float) -> StateSolution:
    """Pure Stokes solve; `load` is a control field or an assembled load vector"""
    solver = fem.SaddleSolver(dofmap, fem.assemble_stokes(dofmap, viscosity), cache=True)
    y, pi = solver.solve(_control_load(load))
    return _finish(dofmap, y, pi, [], True, 0.0, None)


# ============================================================================
# NONSMOOTH STATE
# ============================================================================

def solve_state_nonsmooth(
    u: FeField,
    params: tc.PlasticityParams,
    cfg: Optional[SolverConfig] = None,
    initial: Optional[StateSolution] = None,
    load: Optional[np.ndarray] = None,
) -> StateSolution:
    """
    Solve the nonsmooth state equation, y = S(u).

    Args:
        u: control field
        params: g, mu, nu
        cfg: solver settings
        initial: warm start (default: Stokes solution)
        load: assembled right-hand side replacing (u, v)

    Raises:
        ConvergenceError: residual above tolerance after max_iters
    """
    return _solve(u, params, None, cfg or SolverConfig(), initial, load)


def solve_state_regularized(
    u: FeField,
    params: tc.PlasticityParams,
    delta,
    cfg: Optional[SolverConfig] = None,
    initial: Optional[StateSolution] = None,
    load: Optional[np.ndarray] = None,
) -> StateSolution:
    """Solve the regularized state equation, y_delta = S_delta(u), by Newton's method"""
    d = delta.delta if isinstance(delta, tc.RegParam) else tc.RegParam(float(delta)).delta
    tc.RegParam(d).check_against(params.g)
    return _solve(u, params, d, cfg or SolverConfig(), initial, load)


def _solve(u, params, delta, cfg: SolverConfig, initial, load) -> StateSolution:
    dofmap = u.dofmap
    load = _control_load(u) if load is None else np.asarray(load, dtype=float)
    order = cfg.quadrature_order
    tol = _tolerance(cfg, load)
    label = "regularized" if delta is not None else "nonsmooth"

    y, pi = _initial_guess(dofmap, load, params, initial)
    res = _residual(y, pi, load, params, delta, dofmap, order)
    r = res.norm()
    history: List[Dict[str, float]] = []
    newton_ok = delta is not None or cfg.semismooth
    switch = SEMISMOOTH_SWITCH * max(1.0, float(np.linalg.norm(load)))

    for it in range(cfg.max_iters):
        if r <= tol:
            break

        step, method = None, "picard"
        use_newton = newton_ok and (delta is not None or r <= switch)
        if use_newton:
            dy, dpi = _newton_direction(y, res, params, delta, dofmap, order)
            found = _line_search(y, pi, dy, dpi, r, load, params, delta, dofmap, cfg)
            if found is not None:
                y, pi, res, step = found
                method = "newton"

        if method == "picard":
            y_new, pi_new = _picard_step(y, pi, load, params, delta, dofmap, order, cfg.picard_relax)
            increment = float(np.sqrt(max((y_new - y) @ (fem.strain_stiffness(dofmap) @ (y_new - y)), 0.0)))
            y, pi = y_new, pi_new
            res = _residual(y, pi, load, params, delta, dofmap, order)
            step = cfg.picard_relax
        else:
            increment = float("nan")

        r = res.norm()
        history.append({"iteration": it + 1, "residual": r, "step": step, "method": method, "increment": increment})
        log_iteration(logger, f"state_{label}", iteration=it + 1, residual=r, step=step, method=method)

    if r > tol:
        logger.warning(f"State solve ({label}) stopped at residual {r:.3e} > {tol:.3e} after {cfg.max_iters} iterations")
        raise ConvergenceError(
            f"{label} state solve did not reach {tol:.3e} in {cfg.max_iters} iterations (residual {r:.3e})",
            history,
        )

    logger.debug(f"State solve ({label}) converged in {len(history)} iterations, residual {r:.3e}")
    return _finish(dofmap, y, pi, history, True, r, delta)


# ============================================================================
# PROBES
# ============================================================================

def _solve_any(u, params, delta, cfg):
    if delta is None:
        return solve_state_nonsmooth(u, params, cfg)
    return solve_state_regularized(u, params, delta, cfg)


def monotonicity_probe(u1: FeField, u2: FeField, params, cfg: Optional[SolverConfig] = None, delta=None) -> Dict[str, float]:
    """
    Both sides of mu ||eps(y1 - y2)||^2 <= (u1 - u2, y1 - y2)_L2.
    """
    y1 = _solve_any(u1, params, delta, cfg).velocity
    y2 = _solve_any(u2, params, delta, cfg).velocity
    dy = y1 - y2
    lhs = params.mu * fem.energy_norm(dy) ** 2
    rhs = fem.l2_inner(u1 - u2, dy)
    return {"lhs": lhs, "rhs": rhs, "gap": rhs - lhs}


def lipschitz_probe(
    pairs: Sequence[Tuple[FeField, FeField]], params, delta=None, cfg: Optional[SolverConfig] = None,
) -> pd.DataFrame:
    """
    Ratios ||S(u1) - S(u2)||_H1 / ||u1 - u2||_L2 (S_delta when delta is given).
    The L2 norm of the controls stands in for the dual norm.
    """
    rows = []
    for k, (u1, u2) in enumerate(pairs):
        y1 = _solve_any(u1, params, delta, cfg).velocity
        y2 = _solve_any(u2, params, delta, cfg).velocity
        du = fem.l2_norm(u1 - u2)
        dy = fem.h1_norm(y1 - y2)
        rows.append({"pair": k, "state_distance_h1": dy, "control_distance_l2": du,
                     "ratio": dy / du if du > 0 else 0.0})
    return pd.DataFrame(rows)


def regularization_error_bound(
    u: FeField,
    params: tc.PlasticityParams,
    deltas: Sequence[float],
    cfg: Optional[SolverConfig] = None,
    reference: Optional[StateSolution] = None,
) -> pd.DataFrame:
    """
    For each delta: ||y - y_delta||_H1 and the bound
    (nu / (mu c_h)) ||m_delta(eps y_delta) - m(eps y_delta)||_L2
    with c_h the measured discrete Korn constant.
    """
    cfg = cfg or SolverConfig()
    dofmap = u.dofmap
    y = (reference or solve_state_nonsmooth(u, params, cfg)).velocity
    c_h = fem.korn_constant(dofmap)
    # both solves stop at the residual tolerance; that much error is not regularization
    slack = 2.0 * _tolerance(cfg, fem.load_vector(u)) / (params.mu * c_h ** 2)

    rows = []
    previous = None
    for delta in deltas:
        sol = solve_state_regularized(u, params, delta, cfg, initial=previous)
        previous = sol
        eps = fem.eval_sym_gradient(sol.velocity, cfg.quadrature_order)
        gap = eps.with_values(tc.m_delta_array(eps.values, params.g, delta) - tc.m_array(eps.values, params.g))
        error = fem.h1_norm(y - sol.velocity)
        bound = params.nu / (params.mu * c_h) * gap.l2_norm()
        rows.append({"delta": float(delta), "error_h1": error, "bound": bound,
                     "energy_error": fem.energy_norm(y - sol.velocity), "holds": bool(error <= bound * (1 + 1e-8) + slack)})
        logger.info(f"delta={delta:.3e}: ||y - y_delta||_H1 = {error:.3e} (bound {bound:.3e})")
    return pd.DataFrame(rows)
