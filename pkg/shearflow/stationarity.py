"""
Stationarity certification
shearflow/stationarity.py

Builds the multiplier lambda_delta = m_delta'(eps y) eps p, splits the
domain into below / band / above regions of |eps y| relative to g, and
evaluates:
- the weak stationarity system (multiplier residuals, adjoint and gradient equations)
- the pointwise sign condition lambda : eps y <= 0 on the band
- B-stationarity probes j'(u; h) >= 0 along sampled directions
- the multiplier inequality int lambda : eps xi >= int m'(eps y; eps xi) : eps p

Convention: lambda carries no factor nu; the adjoint equation is
mu (eps p, eps v) + nu (lambda, eps v) = (y - z_d, v). The residual without
nu is reported alongside.
"""

from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from shearflow import fem
from shearflow import tensor_core as tc
from shearflow.config import config
from shearflow.exceptions import ParameterError, ShearflowError
from shearflow.fields import FeField, FieldRole, QuadTensorField
from shearflow.logger import get_logger
from shearflow.sensitivity import solve_linearized
from shearflow.state_solver import SolverConfig, StateSolution, solve_state_nonsmooth

if TYPE_CHECKING:
    from shearflow.adjoint_control import ControlProblem

logger = get_logger(__name__)

NU_CONVENTION = (
    "lambda := m_delta'(eps y) eps p without a nu factor; the adjoint residual multiplies "
    "the lambda term by nu. adjoint_residual_without_nu reports the alternative reading."
)

BELOW, BAND, ABOVE = 0, 1, 2


# ============================================================================
# TYPES
# ============================================================================

@dataclass(eq=False)
class RegionMasks:
    """Pointwise classification of |eps y| against g with band half-width eps_a"""

    labels: np.ndarray      # (nt, nq) in {BELOW, BAND, ABOVE}
    weights: np.ndarray
    eps_a: float
    g: float

    @property
    def below(self) -> np.ndarray:
        return self.labels == BELOW

    @property
    def band(self) -> np.ndarray:
        return self.labels == BAND

    @property
    def above(self) -> np.ndarray:
        return self.labels == ABOVE

    @property
    def measures(self) -> Dict[str, float]:
        return {
            "below": float(self.weights[self.below].sum()),
            "band": float(self.weights[self.band].sum()),
            "above": float(self.weights[self.above].sum()),
        }

    @property
    def total_measure(self) -> float:
        return float(sum(self.measures.values()))


@dataclass
class StationarityReport:
    weak_residuals: Dict[str, float] = field(default_factory=dict)
    weak_scale: Dict[str, float] = field(default_factory=dict)
    strong_sign_stat: Dict[str, float] = field(default_factory=dict)
    b_stat_probes: List[Dict] = field(default_factory=list)
    multiplier_inequality: List[Dict] = field(default_factory=list)
    region_measures: Dict[str, float] = field(default_factory=dict)
    state_gap: float = 0.0
    delta: Optional[float] = None
    eps_a: float = 0.0
    checks: Dict[str, bool] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)

    @property
    def certified(self) -> bool:
        return bool(self.checks) and all(self.checks.values())

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["certified"] = self.certified
        return data


# ============================================================================
# MULTIPLIER AND REGIONS
# ============================================================================

def compute_multiplier(y: FeField, p: FeField, g: float, delta, order: Optional[int] = None) -> QuadTensorField:
    """lambda_delta = m_delta'(eps y) eps p at quadrature points (the Jacobian is self-adjoint)"""
    eps_y = fem.eval_sym_gradient(y, order)
    eps_p = fem.eval_sym_gradient(p, order)
    return eps_y.with_values(tc.m_delta_jac_apply_array(eps_y.values, eps_p.values, g, delta))


def classify_sets(y: FeField, g: float, eps_a: Optional[float] = None, order: Optional[int] = None) -> RegionMasks:
    eps_a = config.tol.REPORT_BAND_REL * g if eps_a is None else float(eps_a)
    if eps_a <= 0:
        raise ParameterError(f"band half-width must be positive, got {eps_a}")
    eps_y = fem.eval_sym_gradient(y, order)
    s = eps_y.norms() - g
    labels = np.where(s < -eps_a, BELOW, np.where(s > eps_a, ABOVE, BAND))
    return RegionMasks(labels, eps_y.weights, eps_a, g)


def limit_multiplier(y: FeField, p: FeField, g: float, order: Optional[int] = None) -> np.ndarray:
    """eps p + g (eps y : eps p) eps y / |eps y|^3 - g eps p / |eps y|, valid where |eps y| > g"""
    eps_y = fem.eval_sym_gradient(y, order).values
    eps_p = fem.eval_sym_gradient(p, order).values
    a, b, n = tc.m_dir_linear_coefficients(eps_y, g)
    return tc.apply_coefficients(a, b, n, eps_p)


def pointwise_table(y: FeField, lam: QuadTensorField, masks: RegionMasks, order: Optional[int] = None) -> pd.DataFrame:
    """Per quadrature point: x, y, |eps y|, lambda : eps y and region"""
    eps_y = fem.eval_sym_gradient(y, order)
    names = np.array(["below", "band", "above"])
    return pd.DataFrame({
        "x": lam.points[..., 0].ravel(),
        "y": lam.points[..., 1].ravel(),
        "abs_eps_y": eps_y.norms().ravel(),
        "lambda_dot_eps_y": tc.ddot(lam.values, eps_y.values).ravel(),
        "region": names[masks.labels.ravel()],
    })


# ============================================================================
# WEAK STATIONARITY
# ============================================================================

def check_weak_stationarity(
    u: FeField,
    y: FeField,
    p: FeField,
    lam: QuadTensorField,
    problem: "ControlProblem",
    eps_a: Optional[float] = None,
    delta: Optional[float] = None,
    order: Optional[int] = None,
) -> StationarityReport:
    """
    Residuals of the limit optimality system. Dual norms are taken over
    discretely divergence-free velocities, so pressures drop out.
    """
    params = problem.params
    dofmap = y.dofmap
    masks = classify_sets(y, params.g, eps_a, order)

    def lam_norm(mask):
        return lam.l2_norm(mask)

    recovered = lam.with_values(lam.values - limit_multiplier(y, p, params.g, order))

    data_term = fem.mass_matrix(dofmap) @ (y.coefficients - problem.z_d.coefficients)
    stiff = params.mu * (fem.strain_stiffness(dofmap) @ p.coefficients)
    lam_term = fem.assemble_tensor_load(dofmap, lam.values, order)
    adjoint = fem.solenoidal_dual_norm(dofmap, stiff + params.nu * lam_term - data_term)
    adjoint_alt = fem.solenoidal_dual_norm(dofmap, stiff + lam_term - data_term)

    gradient = FeField(dofmap, problem.alpha * u.coefficients + p.coefficients, FieldRole.CONTROL)

    residuals = {
        "inactive_lambda": lam_norm(masks.below),
        "above_lambda": recovered.l2_norm(masks.above),
        "adjoint_residual": adjoint,
        "adjoint_residual_without_nu": adjoint_alt,
        "gradient_residual": fem.l2_norm(gradient),
    }
    if delta is not None:
        eps_y = fem.eval_sym_gradient(y, order).values
        support_free = tc.frobenius(eps_y) < params.g - delta
        residuals["inactive_lambda_exact"] = lam_norm(support_free)
        far_above = tc.frobenius(eps_y) > params.g + delta
        residuals["above_lambda_exact"] = recovered.l2_norm(far_above)

    eps_p_norm = fem.energy_norm(p)
    scale = {
        "inactive_lambda": 1.0 + eps_p_norm,
        "above_lambda": 1.0 + eps_p_norm,
        "inactive_lambda_exact": 1.0 + eps_p_norm,
        "above_lambda_exact": 1.0 + eps_p_norm,
        "adjoint_residual": 1.0 + fem.l2_norm(y.as_role(FieldRole.CONTROL) - problem.z_d),
        "adjoint_residual_without_nu": 1.0 + fem.l2_norm(y.as_role(FieldRole.CONTROL) - problem.z_d),
        "gradient_residual": 1.0 + fem.l2_norm(p),
    }
    report = StationarityReport(
        weak_residuals=residuals,
        weak_scale={k: v for k, v in scale.items() if k in residuals},
        region_measures=masks.measures,
        delta=delta,
        eps_a=masks.eps_a,
        notes=[NU_CONVENTION],
    )
    return report


# ============================================================================
# STRONG STATIONARITY
# ============================================================================

def check_strong_stationarity(
    y: FeField, lam: QuadTensorField, masks: RegionMasks, tol_sign: Optional[float] = None,
    order: Optional[int] = None,
) -> Dict[str, float]:
    """Statistics of s = lambda : eps y on the band; violations are s > tol_sign"""
    if tol_sign is None:
        tol_sign = config.tol.TOL_SIGN_REL * masks.g * max(lam.sup_norm(), 1.0)
    eps_y = fem.eval_sym_gradient(y, order)
    s = tc.ddot(lam.values, eps_y.values)[masks.band]
    w = masks.weights[masks.band]
    if s.size == 0:
        return {"max": 0.0, "mean": 0.0, "violating_fraction": 0.0, "violating_measure_fraction": 0.0,
                "band_points": 0, "tol_sign": float(tol_sign)}
    violating = s > tol_sign
    return {
        "max": float(s.max()),
        "mean": float(np.sum(w * s) / np.sum(w)),
        "violating_fraction": float(violating.mean()),
        "violating_measure_fraction": float(np.sum(w[violating]) / np.sum(w)),
        "band_points": int(s.size),
        "tol_sign": float(tol_sign),
    }


# ============================================================================
# B-STATIONARITY AND THE MULTIPLIER INEQUALITY
# ============================================================================

def _objective(u: FeField, y: FeField, problem: "ControlProblem") -> float:
    return 0.5 * fem.l2_norm(y.as_role(FieldRole.CONTROL) - problem.z_d) ** 2 + 0.5 * problem.alpha * fem.l2_norm(u) ** 2


def check_b_stationarity(
    u: FeField,
    problem: "ControlProblem",
    directions: Sequence[FeField],
    cfg: Optional[SolverConfig] = None,
    state: Optional[StateSolution] = None,
    band_tol: Optional[float] = None,
    tol_b: Optional[float] = None,
) -> List[Dict]:
    """
    j'(u; h) = (S(u) - z_d, S'(u; h)) + alpha (u, h) for each direction.
    A failed linearized solve skips that direction and flags it.
    """
    state = state or solve_state_nonsmooth(u, problem.params, cfg)
    y = state.velocity
    if tol_b is None:
        tol_b = config.tol.TOL_B_REL * (1.0 + abs(_objective(u, y, problem)))
    misfit = y.as_role(FieldRole.CONTROL) - problem.z_d

    probes = []
    for k, h in enumerate(directions):
        try:
            z = solve_linearized(y, h, problem.params, cfg, band_tol).direction
        except ShearflowError as e:
            logger.warning(f"B-probe {k} skipped: {e}")
            probes.append({"direction": k, "value": None, "flagged": True, "tol_b": tol_b, "error": str(e)})
            continue
        value = fem.l2_inner(misfit, z.as_role(FieldRole.CONTROL)) + problem.alpha * fem.l2_inner(u, h)
        probes.append({"direction": k, "value": float(value), "flagged": bool(value < -tol_b), "tol_b": tol_b})
    return probes


def check_multiplier_inequality(
    y: FeField,
    p: FeField,
    lam: QuadTensorField,
    directions: Sequence[FeField],
    params: tc.PlasticityParams,
    cfg: Optional[SolverConfig] = None,
    band_tol: Optional[float] = None,
    order: Optional[int] = None,
) -> List[Dict]:
    """int lambda : eps xi - int m'(eps y; eps xi) : eps p for xi = S'(u; h)"""
    eps_y = fem.eval_sym_gradient(y, order).values
    eps_p = fem.eval_sym_gradient(p, order).values
    tol_eq = config.tol.SENSITIVITY_BAND_REL * params.g if band_tol is None else band_tol

    rows = []
    for k, h in enumerate(directions):
        try:
            xi = solve_linearized(y, h, params, cfg, band_tol).direction
        except ShearflowError as e:
            rows.append({"direction": k, "lhs": None, "rhs": None, "gap": None, "error": str(e)})
            continue
        eps_xi = fem.eval_sym_gradient(xi, order)
        lhs = eps_xi.integrate(tc.ddot(lam.values, eps_xi.values))
        rhs = eps_xi.integrate(tc.ddot(tc.m_dir_array(eps_y, eps_xi.values, params.g, tol_eq), eps_p))
        rows.append({"direction": k, "lhs": lhs, "rhs": rhs, "gap": lhs - rhs})
    return rows


# ============================================================================
# CERTIFICATION
# ============================================================================

def random_directions(dofmap: fem.DofMap, count: int, seed: int) -> List[FeField]:
    """Seeded unit-L2 directions, vanishing on the boundary"""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        h = FeField.from_free(dofmap, rng.standard_normal(dofmap.n_free), FieldRole.DIRECTION)
        out.append(h * (1.0 / fem.l2_norm(h)))
    return out


def certify(
    problem: "ControlProblem",
    u: FeField,
    y_delta: FeField,
    p: FeField,
    delta: float,
    directions: Sequence[FeField],
    cfg: Optional[SolverConfig] = None,
    eps_a: Optional[float] = None,
    state: Optional[StateSolution] = None,
) -> StationarityReport:
    """
    Weak, strong and B-stationarity of a final path stage in one report.

    Weak and strong checks use the regularized state y_delta; B-probes use
    the nonsmooth state S(u). Their H1 distance is reported as state_gap.
    """
    params = problem.params
    lam = compute_multiplier(y_delta, p, params.g, delta)
    masks = classify_sets(y_delta, params.g, eps_a)

    report = check_weak_stationarity(u, y_delta, p, lam, problem, masks.eps_a, delta)
    report.strong_sign_stat = check_strong_stationarity(y_delta, lam, masks)

    state = state or solve_state_nonsmooth(u, params, cfg, initial=None)
    report.state_gap = fem.h1_norm(state.velocity - y_delta)
    report.b_stat_probes = check_b_stationarity(u, problem, directions, cfg, state)
    report.multiplier_inequality = check_multiplier_inequality(state.velocity, p, lam, directions, params, cfg)

    tol_weak = config.tol.WEAK_RESIDUAL_TOL
    w, s = report.weak_residuals, report.weak_scale
    tol_ineq = config.tol.TOL_B_REL * (1.0 + lam.l2_norm())
    report.checks = {
        "adjoint": w["adjoint_residual"] <= tol_weak * s["adjoint_residual"],
        "gradient": w["gradient_residual"] <= tol_weak * s["gradient_residual"],
        "inactive_lambda": w.get("inactive_lambda_exact", w["inactive_lambda"]) <= tol_weak * s["inactive_lambda"],
        "sign_condition": report.strong_sign_stat["violating_fraction"] <= config.tol.SIGN_VIOLATION_FRACTION,
        "b_stationarity": not any(pr["flagged"] for pr in report.b_stat_probes),
        "multiplier_inequality": all(r["gap"] is not None and r["gap"] >= -tol_ineq for r in report.multiplier_inequality),
    }
    report.notes.append(
        f"regions use eps_A = {masks.eps_a:.3e}; above_lambda and inactive_lambda on the reported "
        "regions include an O(delta) strip and are informational"
    )

    status = "certified" if report.certified else "NOT certified"
    failed = [k for k, ok in report.checks.items() if not ok]
    logger.info(f"Stationarity {status} at delta={delta:.3e}" + (f" (failed: {failed})" if failed else ""))
    return report
