"""
Directional derivatives of the control-to-state map
shearflow/sensitivity.py

z = S'(u; h) solves the linearized equation
    mu (eps z, eps v) + nu (m'(eps y; eps z), eps v) = (h, v),  div z = 0.
On the kink band the derivative is max(0, E:H) E / g^2, positively homogeneous
but not additive in H, so the solve is a damped active-set Picard iteration:
band points whose n:eps z is positive carry the lagged linear term, the
others none.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from shearflow import fem
from shearflow import tensor_core as tc
from shearflow.config import config
from shearflow.exceptions import ConvergenceError, ParameterError
from shearflow.fields import FeField, FieldRole
from shearflow.logger import get_logger, log_iteration
from shearflow.state_solver import SolverConfig, StateSolution, solve_state_nonsmooth

logger = get_logger(__name__)


@dataclass
class LinearizedSolution:
    direction: FeField
    pressure: FeField
    history: List[Dict[str, float]] = field(default_factory=list)
    band_fraction: float = 0.0
    converged: bool = True
    residual: float = 0.0


def _band_tol(params: tc.PlasticityParams, band_tol: Optional[float]) -> float:
    if band_tol is None:
        return config.tol.SENSITIVITY_BAND_REL * params.g
    if band_tol <= 0:
        raise ParameterError(f"band tolerance must be positive, got {band_tol}")
    return float(band_tol)


@dataclass(frozen=True, eq=False)
class _Regions:
    """Pointwise linearization data of one state"""

    eps_y: np.ndarray
    above: np.ndarray
    band: np.ndarray
    a: np.ndarray        # Case-2 coefficients (zero off "above")
    b: np.ndarray
    n: np.ndarray
    band_weight: np.ndarray   # |E|^2 / g^2 on the band, zero elsewhere


def _regions(y: FeField, params, eps_a: float, order) -> _Regions:
    eps_y = fem.eval_sym_gradient(y, order).values
    nrm = tc.frobenius(eps_y)
    above = nrm > params.g + eps_a
    band = np.abs(nrm - params.g) <= eps_a
    a, b, n = tc.m_dir_linear_coefficients(eps_y, params.g)
    a, b = np.where(above, a, 0.0), np.where(above, b, 0.0)
    band_weight = np.where(band, nrm ** 2 / params.g ** 2, 0.0)
    return _Regions(eps_y, above, band, a, b, n, band_weight)


def apply_linearized_operator(
    y: FeField, z: FeField, params: tc.PlasticityParams, band_tol: Optional[float] = None, order: Optional[int] = None,
) -> np.ndarray:
    """T(z) = mu K z + nu int m'(eps y; eps z) : eps v (momentum rows, Dirichlet rows zeroed)"""
    eps_a = _band_tol(params, band_tol)
    eps_y = fem.eval_sym_gradient(y, order).values
    eps_z = fem.eval_sym_gradient(z, order).values
    derivative = tc.m_dir_array(eps_y, eps_z, params.g, tol_eq=eps_a)
    out = params.mu * (fem.strain_stiffness(y.dofmap) @ z.coefficients)
    out += params.nu * fem.assemble_tensor_load(y.dofmap, derivative, order)
    out[y.dofmap.dirichlet_mask] = 0.0
    return out


def solve_linearized(
    y: FeField,
    h: FeField,
    params: tc.PlasticityParams,
    cfg: Optional[SolverConfig] = None,
    band_tol: Optional[float] = None,
    damping: Optional[float] = None,
) -> LinearizedSolution:
    """
    Solve the linearized equation for z = S'(u; h) at the state y.

    Args:
        y: state solving the nonsmooth equation
        h: control direction
        band_tol: half-width eps_A of the kink band (default 1e-6 g)
        damping: Picard damping (default config.solver.LINEARIZED_DAMPING)

    Raises:
        ConvergenceError: residual above tolerance after max_iters
    """
    cfg = cfg or SolverConfig()
    damping = config.solver.LINEARIZED_DAMPING if damping is None else float(damping)
    if not 0 < damping <= 1:
        raise ParameterError(f"damping must lie in (0, 1], got {damping}")
    dofmap = y.dofmap
    order = cfg.quadrature_order
    eps_a = _band_tol(params, band_tol)
    reg = _regions(y, params, eps_a, order)
    data = dofmap.element_data(order)
    band_fraction = float(np.sum(data.weights[reg.band]) / dofmap.mesh.area)

    load = fem.load_vector(h)
    tol = cfg.tol_residual * max(1.0, float(np.linalg.norm(load)))
    K = fem.strain_stiffness(dofmap)
    B = fem.divergence_matrix(dofmap)
    base = params.mu * K + params.nu * fem.assemble_tensor_operator(dofmap, reg.a, reg.b, reg.n, order)

    def residual(z, q) -> float:
        zf = FeField(dofmap, z, FieldRole.DIRECTION)
        mom = apply_linearized_operator(y, zf, params, eps_a, order) + B.T @ q - load
        mom[dofmap.dirichlet_mask] = 0.0
        div = B @ z
        return float(np.sqrt(mom @ mom + div @ div))

    def linear_solve(active: np.ndarray):
        weight = np.where(active, reg.band_weight, 0.0)
        A = base
        if np.any(weight > 0):
            A = base + params.nu * fem.assemble_tensor_operator(dofmap, np.zeros_like(weight), weight, reg.n, order)
        return fem.SaddleSolver(dofmap, fem.SaddleOperator(A.tocsr(), B, tag="linearized")).solve(load)

    z, q = linear_solve(np.zeros_like(reg.band))
    r = residual(z, q)
    history: List[Dict[str, float]] = [{"iteration": 0, "residual": r, "active": 0}]

    it = 0
    while r > tol and it < cfg.max_iters:
        it += 1
        eps_z = fem.eval_sym_gradient(FeField(dofmap, z, FieldRole.DIRECTION), order).values
        active = reg.band & (tc.ddot(reg.n, eps_z) > 0)
        z_hat, q_hat = linear_solve(active)
        z, q = z + damping * (z_hat - z), q + damping * (q_hat - q)
        r = residual(z, q)
        history.append({"iteration": it, "residual": r, "active": int(active.sum())})
        log_iteration(logger, "linearized", iteration=it, residual=r, active=int(active.sum()))

    if r > tol:
        raise ConvergenceError(
            f"linearized solve did not reach {tol:.3e} in {cfg.max_iters} iterations "
            f"(residual {r:.3e}, band fraction {band_fraction:.3e})",
            history,
        )

    return LinearizedSolution(
        direction=FeField(dofmap, z, FieldRole.DIRECTION),
        pressure=FeField(dofmap, q, FieldRole.PRESSURE),
        history=history,
        band_fraction=band_fraction,
        converged=True,
        residual=r,
    )


def solve_linearized_regularized(y_delta: FeField, h: FeField, params: tc.PlasticityParams, delta,
                                 order: Optional[int] = None) -> FeField:
    """S_delta'(u) h: one linear solve with the Jacobian of the regularized operator"""
    operator = fem.assemble_jacobian(y_delta, params, delta, order)
    z, _ = fem.SaddleSolver(y_delta.dofmap, operator).solve(fem.load_vector(h))
    return FeField(y_delta.dofmap, z, FieldRole.DIRECTION)


# ============================================================================
# DIFFERENCE-QUOTIENT CHECK
# ============================================================================

@dataclass
class DerivativeCheckReport:
    table: pd.DataFrame
    derivative_norm: Dict[str, float]
    order: Dict[str, float]
    band_fraction: float

    def final_ratio(self, sign: str = "+") -> float:
        rows = self.table[self.table["sign"] == sign]
        norm = self.derivative_norm[sign]
        return float(rows["r"].iloc[-1] / norm) if norm > 0 else float(rows["r"].iloc[-1])

    def to_dict(self) -> Dict:
        return {
            "rows": self.table.to_dict(orient="records"),
            "derivative_norm": self.derivative_norm,
            "order": self.order,
            "band_fraction": self.band_fraction,
        }


def _fit_order(ts: np.ndarray, rs: np.ndarray) -> float:
    mask = rs > 0
    if mask.sum() < 2:
        return float("inf")
    slope, _ = np.polyfit(np.log(ts[mask]), np.log(rs[mask]), 1)
    return float(slope)


def derivative_check(
    u: FeField,
    h: FeField,
    params: tc.PlasticityParams,
    t_seq: Sequence[float] = (1e-2, 1e-3, 1e-4, 1e-5),
    cfg: Optional[SolverConfig] = None,
    state: Optional[StateSolution] = None,
    band_tol: Optional[float] = None,
) -> DerivativeCheckReport:
    """
    r(t) = ||(S(u + t h) - S(u)) / t - S'(u; h)||_H1 for both h and -h,
    with a least-squares fit of the decay order.
    """
    ts = np.asarray(t_seq, dtype=float)
    if np.any(ts <= 0) or np.any(np.diff(ts) >= 0):
        raise ParameterError("t_seq must be positive and strictly decreasing")
    cfg = cfg or SolverConfig()
    base = state or solve_state_nonsmooth(u, params, cfg)

    rows, norms, orders = [], {}, {}
    band_fraction = 0.0
    for sign, direction in (("+", h), ("-", -h)):
        lin = solve_linearized(base.velocity, direction, params, cfg, band_tol)
        band_fraction = lin.band_fraction
        z = lin.direction
        norms[sign] = fem.h1_norm(z)
        rs = []
        for t in ts:
            shifted = solve_state_nonsmooth(u + direction * t, params, cfg, initial=base)
            quotient = (shifted.velocity - base.velocity) * (1.0 / t)
            r = fem.h1_norm(quotient.as_role(FieldRole.DIRECTION) - z)
            rs.append(r)
            rows.append({"sign": sign, "t": float(t), "r": r})
        orders[sign] = _fit_order(ts, np.asarray(rs))
        logger.info(f"Derivative check ({sign}h): r(t_min) = {rs[-1]:.3e}, ||z|| = {norms[sign]:.3e}, "
                    f"order {orders[sign]:.2f}")

    return DerivativeCheckReport(pd.DataFrame(rows), norms, orders, band_fraction)


def linearized_monotonicity(
    y: FeField, z: FeField, w: FeField, params: tc.PlasticityParams, band_tol: Optional[float] = None,
) -> Dict[str, float]:
    """<T(z) - T(w), z - w> against mu c_h^2 ||z - w||_H1^2"""
    lhs = float((apply_linearized_operator(y, z, params, band_tol) - apply_linearized_operator(y, w, params, band_tol))
                @ (z - w).coefficients)
    c_h = fem.korn_constant(y.dofmap)
    rhs = params.mu * c_h ** 2 * fem.h1_norm(z - w) ** 2
    return {"pairing": lhs, "lower_bound": rhs, "gap": lhs - rhs}
