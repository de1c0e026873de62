"""
Taylor-Hood P2/P1 discretization
shearflow/fem.py

Quadrature, the velocity/pressure dof map, and vectorized assembly of every
bilinear and nonlinear form used by the solvers:
- strain stiffness (eps v : eps w), divergence coupling, mass and H1 matrices
- the nonlinear residual with m or m_delta
- Jacobians and generic "a H + b (n:H) n" tensor operators
- saddle-point factorizations with a pinned pressure dof
- discrete norms, the solenoidal dual norm and the discrete Korn constant

Element contributions are reduced into global objects in fixed element
order (COO -> CSR, np.bincount), so assembly is deterministic.
"""

from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh, splu

from shearflow import tensor_core as tc
from shearflow.config import config
from shearflow.exceptions import FieldError, ParameterError, SolverError
from shearflow.factor_cache import generate_factor_key, get_factor_cache
from shearflow.fields import FeField, FieldRole, QuadTensorField, VECTOR_ROLES
from shearflow.logger import get_logger
from shearflow.mesh import Mesh, build_structured_mesh

logger = get_logger(__name__)


# ============================================================================
# QUADRATURE
# ============================================================================
# Symmetric rules on the reference triangle: barycentric orbits and weights
# (fractions of the triangle area).

def _orbit3(a: float, b: float):
    return [(a, b, b), (b, a, b), (b, b, a)]


def _orbit6(a: float, b: float, c: float):
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


_RULES = {
    2: [(_orbit3(2.0 / 3.0, 1.0 / 6.0), 1.0 / 3.0)],
    4: [
        (_orbit3(0.108103018168070, 0.445948490915965), 0.223381589678011),
        (_orbit3(0.816847572980459, 0.091576213509771), 0.109951743655322),
    ],
    5: [
        ([(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)], 0.225),
        (_orbit3(0.059715871789770, 0.470142064105115), 0.132394152788506),
        (_orbit3(0.797426985353087, 0.101286507323456), 0.125939180544827),
    ],
    6: [
        (_orbit3(0.501426509658179, 0.249286745170910), 0.116786275726379),
        (_orbit3(0.873821971016996, 0.063089014491502), 0.050844906370207),
        (_orbit6(0.053145049844817, 0.310352451033784, 0.636502499121399), 0.082851075618374),
    ],
}


def quadrature_rule(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Barycentric points (nq, 3) and weights (nq,) summing to 1"""
    if order not in _RULES:
        raise ParameterError(f"quadrature order must be one of {sorted(_RULES)}, got {order}")
    points, weights = [], []
    for orbit, w in _RULES[order]:
        points.extend(orbit)
        weights.extend([w] * len(orbit))
    bary = np.array(points, dtype=float)
    bary /= bary.sum(axis=1, keepdims=True)
    w = np.array(weights, dtype=float)
    return bary, w / w.sum()


def _default_order(order: Optional[int]) -> int:
    return config.solver.QUADRATURE_ORDER if order is None else int(order)


# ============================================================================
# DOF MAP
# ============================================================================

@dataclass(frozen=True, eq=False)
class ElementData:
    """Basis data of one quadrature order, all elements at once"""

    order: int
    weights: np.ndarray    # (nt, nq) quadrature weight times |T|
    points: np.ndarray     # (nt, nq, 2)
    phi: np.ndarray        # (nq, 6) scalar P2 values
    grad_phi: np.ndarray   # (nt, nq, 6, 2)
    eps: np.ndarray        # (nt, nq, 12, 2, 2) symmetric gradients of the vector basis
    div: np.ndarray        # (nt, nq, 12)
    psi: np.ndarray        # (nq, 3) P1 pressure values


def _barycentric_gradients(mesh: Mesh) -> np.ndarray:
    p = mesh.vertices[mesh.triangles]
    x, y = p[..., 0], p[..., 1]
    glam = np.empty((mesh.n_triangles, 3, 2))
    glam[:, 0, 0], glam[:, 0, 1] = y[:, 1] - y[:, 2], x[:, 2] - x[:, 1]
    glam[:, 1, 0], glam[:, 1, 1] = y[:, 2] - y[:, 0], x[:, 0] - x[:, 2]
    glam[:, 2, 0], glam[:, 2, 1] = y[:, 0] - y[:, 1], x[:, 1] - x[:, 0]
    return glam / (2.0 * mesh.signed_areas)[:, None, None]


def _p2_reference(bary: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Values (nq, 6) and barycentric derivative coefficients (nq, 6, 3).
    Local nodes: vertices 0..2, then the midpoint of the edge opposite vertex k.
    """
    nq = len(bary)
    phi = np.empty((nq, 6))
    coef = np.zeros((nq, 6, 3))
    for k in range(3):
        i, j = (k + 1) % 3, (k + 2) % 3
        lk, li, lj = bary[:, k], bary[:, i], bary[:, j]
        phi[:, k] = lk * (2.0 * lk - 1.0)
        phi[:, 3 + k] = 4.0 * li * lj
        coef[:, k, k] = 4.0 * lk - 1.0
        coef[:, 3 + k, i] = 4.0 * lj
        coef[:, 3 + k, j] = 4.0 * li
    return phi, coef


class DofMap:
    """
    Taylor-Hood numbering on a mesh.

    Velocity nodes are the vertices followed by the edge midpoints; the two
    components of node k are dofs 2k and 2k+1. Pressure dofs are the vertices.
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        nv = mesh.n_vertices
        self.n_nodes = nv + mesh.n_edges
        self.n_velocity = 2 * self.n_nodes
        self.n_pressure = nv

        midpoints = 0.5 * mesh.vertices[mesh.edges].sum(axis=1)
        self.node_coords = np.vstack([mesh.vertices, midpoints])

        self.element_nodes = np.hstack([mesh.triangles, nv + mesh.triangle_edges])
        self.element_velocity_dofs = (2 * self.element_nodes[:, :, None] + np.arange(2)).reshape(-1, 12)
        self.element_pressure_dofs = mesh.triangles

        boundary_nodes = np.concatenate([
            np.flatnonzero(mesh.boundary_vertex_mask),
            nv + np.flatnonzero(mesh.boundary_edge_mask),
        ])
        self.boundary_node_mask = np.zeros(self.n_nodes, dtype=bool)
        self.boundary_node_mask[boundary_nodes] = True
        self.dirichlet_mask = np.repeat(self.boundary_node_mask, 2)
        self.free_dofs = np.flatnonzero(~self.dirichlet_mask)

        for arr in (self.node_coords, self.element_nodes, self.element_velocity_dofs,
                    self.dirichlet_mask, self.free_dofs, self.boundary_node_mask):
            arr.setflags(write=False)

        self._element_data: Dict[int, ElementData] = {}
        self._operators: Dict[str, object] = {}
        self._fingerprint = mesh.fingerprint()

    @property
    def fingerprint(self) -> str:
        return self._fingerprint

    @property
    def n_free(self) -> int:
        return len(self.free_dofs)

    def element_data(self, order: Optional[int] = None) -> ElementData:
        order = _default_order(order)
        if order not in self._element_data:
            self._element_data[order] = self._build_element_data(order)
        return self._element_data[order]

    def _build_element_data(self, order: int) -> ElementData:
        mesh = self.mesh
        bary, w = quadrature_rule(order)
        nt, nq = mesh.n_triangles, len(w)
        corners = mesh.vertices[mesh.triangles]

        phi, coef = _p2_reference(bary)
        glam = _barycentric_gradients(mesh)
        grad = np.einsum("qak,tkd->tqad", coef, glam)

        eps = np.zeros((nt, nq, 6, 2, 2, 2))
        for c in range(2):
            eps[:, :, :, c, c, :] += 0.5 * grad
            eps[:, :, :, c, :, c] += 0.5 * grad
        eps = eps.reshape(nt, nq, 12, 2, 2)
        div = grad.reshape(nt, nq, 12)  # d(phi_a)/dx_c for dof 2a + c

        return ElementData(
            order=order,
            weights=w[None, :] * mesh.signed_areas[:, None],
            points=np.einsum("qk,tkd->tqd", bary, corners),
            phi=phi,
            grad_phi=grad,
            eps=eps,
            div=div,
            psi=bary.copy(),
        )

    def cached_operator(self, name: str, build: Callable):
        if name not in self._operators:
            self._operators[name] = build()
        return self._operators[name]


def build_dofmap(mesh: Mesh) -> DofMap:
    dofmap = DofMap(mesh)
    logger.debug(f"DofMap: {dofmap.n_velocity} velocity dofs ({dofmap.n_free} free), "
                 f"{dofmap.n_pressure} pressure dofs")
    return dofmap


# ============================================================================
# ASSEMBLY HELPERS
# ============================================================================

def _scatter_matrix(rows: np.ndarray, cols: np.ndarray, local: np.ndarray, shape) -> sp.csr_matrix:
    r = np.broadcast_to(rows[:, :, None], local.shape)
    c = np.broadcast_to(cols[:, None, :], local.shape)
    return sp.coo_matrix((local.ravel(), (r.ravel(), c.ravel())), shape=shape).tocsr()


def _scatter_vector(dofs: np.ndarray, local: np.ndarray, n: int) -> np.ndarray:
    return np.bincount(dofs.ravel(), weights=local.ravel(), minlength=n)


def _check_vector(field: FeField, dofmap: DofMap, allowed=VECTOR_ROLES):
    if field.dofmap is not dofmap:
        raise FieldError("field lives on a different dof map")
    if field.role not in allowed:
        raise FieldError(f"expected one of {[r.value for r in allowed]}, got {field.role.value}")


def _element_coefficients(field: FeField) -> np.ndarray:
    return field.coefficients[field.dofmap.element_velocity_dofs]


# ============================================================================
# EVALUATION AT QUADRATURE POINTS
# ============================================================================

def eval_sym_gradient(field: FeField, order: Optional[int] = None) -> QuadTensorField:
    """Pointwise 1/2 (grad v + grad v^T) at quadrature points"""
    _check_vector(field, field.dofmap)
    data = field.dofmap.element_data(order)
    values = np.einsum("ta,tqaij->tqij", _element_coefficients(field), data.eps)
    return QuadTensorField(values, data.weights, data.points)


def eval_divergence(field: FeField, order: Optional[int] = None) -> np.ndarray:
    _check_vector(field, field.dofmap)
    data = field.dofmap.element_data(order)
    return np.einsum("ta,tqa->tq", _element_coefficients(field), data.div)


def eval_vector(field: FeField, order: Optional[int] = None) -> np.ndarray:
    """Field values at quadrature points, shape (nt, nq, 2)"""
    _check_vector(field, field.dofmap)
    data = field.dofmap.element_data(order)
    nodal = field.coefficients.reshape(-1, 2)[field.dofmap.element_nodes]  # (nt, 6, 2)
    return np.einsum("qa,tad->tqd", data.phi, nodal)


def eval_pressure(field: FeField, order: Optional[int] = None) -> np.ndarray:
    if field.role is not FieldRole.PRESSURE:
        raise FieldError(f"expected a pressure field, got {field.role.value}")
    data = field.dofmap.element_data(order)
    return np.einsum("qk,tk->tq", data.psi, field.coefficients[field.dofmap.element_pressure_dofs])


# ============================================================================
# LINEAR OPERATORS
# ============================================================================

def strain_stiffness(dofmap: DofMap) -> sp.csr_matrix:
    """K_ab = int eps(phi_a) : eps(phi_b)"""
    def build():
        data = dofmap.element_data(2)
        local = np.einsum("tq,tqaij,tqbij->tab", data.weights, data.eps, data.eps)
        dofs = dofmap.element_velocity_dofs
        return _scatter_matrix(dofs, dofs, local, (dofmap.n_velocity, dofmap.n_velocity))
    return dofmap.cached_operator("strain", build)


def divergence_matrix(dofmap: DofMap) -> sp.csr_matrix:
    """B_ka = -int psi_k div(phi_a)"""
    def build():
        data = dofmap.element_data(2)
        local = -np.einsum("tq,qk,tqa->tka", data.weights, data.psi, data.div)
        return _scatter_matrix(dofmap.element_pressure_dofs, dofmap.element_velocity_dofs, local,
                               (dofmap.n_pressure, dofmap.n_velocity))
    return dofmap.cached_operator("divergence", build)


def _scalar_to_vector_local(local: np.ndarray) -> np.ndarray:
    nt = local.shape[0]
    out = np.zeros((nt, 6, 2, 6, 2))
    for c in range(2):
        out[:, :, c, :, c] = local
    return out.reshape(nt, 12, 12)


def mass_matrix(dofmap: DofMap) -> sp.csr_matrix:
    """L2 mass matrix of the P2 vector space"""
    def build():
        data = dofmap.element_data(4)
        local = np.einsum("tq,qa,qb->tab", data.weights, data.phi, data.phi)
        dofs = dofmap.element_velocity_dofs
        return _scatter_matrix(dofs, dofs, _scalar_to_vector_local(local), (dofmap.n_velocity, dofmap.n_velocity))
    return dofmap.cached_operator("mass", build)


def gradient_stiffness(dofmap: DofMap) -> sp.csr_matrix:
    """int grad v : grad w"""
    def build():
        data = dofmap.element_data(2)
        local = np.einsum("tq,tqad,tqbd->tab", data.weights, data.grad_phi, data.grad_phi)
        dofs = dofmap.element_velocity_dofs
        return _scatter_matrix(dofs, dofs, _scalar_to_vector_local(local), (dofmap.n_velocity, dofmap.n_velocity))
    return dofmap.cached_operator("gradient", build)


def pressure_mass_matrix(dofmap: DofMap) -> sp.csr_matrix:
    def build():
        data = dofmap.element_data(2)
        local = np.einsum("tq,qk,ql->tkl", data.weights, data.psi, data.psi)
        dofs = dofmap.element_pressure_dofs
        return _scatter_matrix(dofs, dofs, local, (dofmap.n_pressure, dofmap.n_pressure))
    return dofmap.cached_operator("pressure_mass", build)


@dataclass(frozen=True, eq=False)
class SaddleOperator:
    """Velocity block A and divergence block B of [[A, B^T], [B, 0]]"""

    A: sp.csr_matrix
    B: sp.csr_matrix
    tag: str = ""


def assemble_stokes(dofmap: DofMap, mu: float) -> SaddleOperator:
    if not np.isfinite(mu) or mu <= 0:
        raise ParameterError(f"viscosity must be strictly positive, got {mu}")
    return SaddleOperator(mu * strain_stiffness(dofmap), divergence_matrix(dofmap), tag=f"stokes:{mu!r}")


def assemble_tensor_operator(
    dofmap: DofMap, a: np.ndarray, b: np.ndarray, n: np.ndarray, order: Optional[int] = None,
) -> sp.csr_matrix:
    """int (a eps w + b (n:eps w) n) : eps v for coefficients given at quadrature points"""
    data = dofmap.element_data(order)
    ne = np.einsum("tqij,tqaij->tqa", n, data.eps)
    local = np.einsum("tq,tqaij,tqbij->tab", data.weights * a, data.eps, data.eps)
    local += np.einsum("tq,tqa,tqb->tab", data.weights * b, ne, ne)
    dofs = dofmap.element_velocity_dofs
    return _scatter_matrix(dofs, dofs, local, (dofmap.n_velocity, dofmap.n_velocity))


def assemble_tensor_load(dofmap: DofMap, tensors: np.ndarray, order: Optional[int] = None) -> np.ndarray:
    """Vector int T : eps(phi_a) for T sampled at quadrature points"""
    data = dofmap.element_data(order)
    local = np.einsum("tq,tqij,tqaij->ta", data.weights, tensors, data.eps)
    return _scatter_vector(dofmap.element_velocity_dofs, local, dofmap.n_velocity)


def load_vector(u: FeField) -> np.ndarray:
    """int u . phi_a for a control (or any vector field) in the P2 space"""
    _check_vector(u, u.dofmap)
    return mass_matrix(u.dofmap) @ u.coefficients


def load_from_function(dofmap: DofMap, fn: Callable, order: int = 6) -> np.ndarray:
    """int f . phi_a for f(x, y) -> (f1, f2) evaluated at quadrature points"""
    data = dofmap.element_data(order)
    f1, f2 = fn(data.points[..., 0], data.points[..., 1])
    f = np.stack([np.broadcast_to(f1, data.weights.shape), np.broadcast_to(f2, data.weights.shape)], axis=-1)
    local = np.einsum("tq,qa,tqc->tac", data.weights, data.phi, f).reshape(-1, 12)
    return _scatter_vector(dofmap.element_velocity_dofs, local, dofmap.n_velocity)


# ============================================================================
# NONLINEAR FORMS
# ============================================================================

@dataclass
class MixedResidual:
    """Momentum rows (Dirichlet rows zeroed) and divergence rows"""

    momentum: np.ndarray
    divergence: np.ndarray

    def norm(self) -> float:
        return float(np.sqrt(self.momentum @ self.momentum + self.divergence @ self.divergence))


def nonlinear_term(y: FeField, g: float, delta: Optional[float] = None, order: Optional[int] = None) -> np.ndarray:
    """int m(eps y) : eps(phi_a), or m_delta when delta is given"""
    eps_y = eval_sym_gradient(y, order)
    if delta is None:
        values = tc.m_array(eps_y.values, g)
    else:
        values = tc.m_delta_array(eps_y.values, g, delta)
    return assemble_tensor_load(y.dofmap, values, order)


def _delta_value(delta) -> Optional[float]:
    if delta is None:
        return None
    return delta.delta if isinstance(delta, tc.RegParam) else float(delta)


def assemble_nonlinear_residual(
    y: FeField,
    u: FeField,
    params: tc.PlasticityParams,
    delta=None,
    pressure: Optional[FeField] = None,
    order: Optional[int] = None,
    load: Optional[np.ndarray] = None,
) -> MixedResidual:
    """
    mu (eps y, eps v) + nu (m(eps y), eps v) - (pi, div v) - (u, v)  and  -(q, div y).

    `load` overrides the control load vector (u is then only shape-checked).
    """
    dofmap = y.dofmap
    _check_vector(y, dofmap)
    _check_vector(u, dofmap)
    delta = _delta_value(delta)
    if order is not None and order < 4:
        logger.warning(f"Quadrature order {order} is below 4 for a nonsmooth term")

    B = divergence_matrix(dofmap)
    momentum = params.mu * (strain_stiffness(dofmap) @ y.coefficients)
    momentum += params.nu * nonlinear_term(y, params.g, delta, order)
    momentum -= load_vector(u) if load is None else load
    if pressure is not None:
        if pressure.dofmap is not dofmap or pressure.role is not FieldRole.PRESSURE:
            raise FieldError("pressure must be a pressure field on the same dof map")
        momentum += B.T @ pressure.coefficients
    momentum[dofmap.dirichlet_mask] = 0.0
    return MixedResidual(momentum, B @ y.coefficients)


def jacobian_coefficients(y: FeField, g: float, delta, order: Optional[int] = None):
    eps_y = eval_sym_gradient(y, order)
    return tc.m_delta_jac_coefficients(eps_y.values, g, _delta_value(delta))


def assemble_jacobian(y: FeField, params: tc.PlasticityParams, delta, order: Optional[int] = None) -> SaddleOperator:
    """mu (eps w, eps v) + nu (m_delta'(eps y) eps w, eps v) with the divergence coupling"""
    if delta is None:
        raise ParameterError("exact Jacobians exist only for the regularized operator; pass delta")
    dofmap = y.dofmap
    a, b, n = jacobian_coefficients(y, params.g, delta, order)
    A = params.mu * strain_stiffness(dofmap) + params.nu * assemble_tensor_operator(dofmap, a, b, n, order)
    return SaddleOperator(A.tocsr(), divergence_matrix(dofmap), tag="jacobian")


# ============================================================================
# SADDLE-POINT SOLVES
# ============================================================================

class SaddleSolver:
    """
    Sparse LU of the Dirichlet-reduced saddle system with pressure dof 0
    pinned. Pressures are returned with zero mean.
    """

    def __init__(self, dofmap: DofMap, operator: SaddleOperator, cache: bool = False):
        self.dofmap = dofmap
        self.operator = operator
        free = dofmap.free_dofs
        self._n_free = len(free)

        def factorize():
            A_ff = operator.A[free][:, free]
            B_f = operator.B[1:][:, free]
            K = sp.bmat([[A_ff, B_f.T], [B_f, None]], format="csc")
            try:
                return splu(K)
            except RuntimeError as e:
                raise SolverError(f"saddle-point factorization failed ({operator.tag}): {e}") from e

        if cache and operator.tag:
            key = generate_factor_key(dofmap.fingerprint, operator.tag)
            self._lu = get_factor_cache().get_or_create(key, factorize, tag=operator.tag)
        else:
            self._lu = factorize()

    def solve(self, rhs: np.ndarray, div_rhs: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        """
        Solve A w + B^T q = rhs, B w = div_rhs on the free dofs.

        Returns full-length velocity (zero on Dirichlet dofs) and pressure.
        """
        dofmap = self.dofmap
        b = np.concatenate([
            np.asarray(rhs, dtype=float)[dofmap.free_dofs],
            np.zeros(dofmap.n_pressure - 1) if div_rhs is None else np.asarray(div_rhs, dtype=float)[1:],
        ])
        x = self._lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise SolverError(f"saddle-point solve produced non-finite values ({self.operator.tag})")
        velocity = np.zeros(dofmap.n_velocity)
        velocity[dofmap.free_dofs] = x[:self._n_free]
        pressure = np.concatenate([[0.0], x[self._n_free:]])
        return velocity, remove_pressure_mean(dofmap, pressure)


def remove_pressure_mean(dofmap: DofMap, pressure: np.ndarray) -> np.ndarray:
    integrals = pressure_mass_matrix(dofmap) @ np.ones(dofmap.n_pressure)
    return pressure - (integrals @ pressure) / dofmap.mesh.area


# ============================================================================
# NORMS
# ============================================================================

def l2_norm(field: FeField) -> float:
    c = field.coefficients
    M = pressure_mass_matrix(field.dofmap) if field.role is FieldRole.PRESSURE else mass_matrix(field.dofmap)
    return float(np.sqrt(max(c @ (M @ c), 0.0)))


def l2_inner(v: FeField, w: FeField) -> float:
    _check_vector(v, v.dofmap)
    _check_vector(w, v.dofmap)
    return float(v.coefficients @ (mass_matrix(v.dofmap) @ w.coefficients))


def h1_norm(field: FeField) -> float:
    _check_vector(field, field.dofmap)
    c = field.coefficients
    S = mass_matrix(field.dofmap) + gradient_stiffness(field.dofmap)
    return float(np.sqrt(max(c @ (S @ c), 0.0)))


def energy_norm(field: FeField) -> float:
    """||eps v||_L2"""
    _check_vector(field, field.dofmap)
    c = field.coefficients
    return float(np.sqrt(max(c @ (strain_stiffness(field.dofmap) @ c), 0.0)))


def divergence_l2_norm(field: FeField, order: Optional[int] = None) -> float:
    data = field.dofmap.element_data(order)
    d = eval_divergence(field, order)
    return float(np.sqrt(np.sum(data.weights * d * d)))


def solenoidal_dual_norm(dofmap: DofMap, momentum: np.ndarray) -> float:
    """
    sup over discretely divergence-free v of <r, v> / ||eps v||, computed by
    one Stokes solve with unit viscosity.
    """
    solver = SaddleSolver(dofmap, assemble_stokes(dofmap, 1.0), cache=True)
    w, _ = solver.solve(momentum)
    value = float(w[dofmap.free_dofs] @ np.asarray(momentum)[dofmap.free_dofs])
    return float(np.sqrt(max(value, 0.0)))


_DENSE_EIGEN_LIMIT = 400


def korn_constant(dofmap: DofMap) -> float:
    """
    Discrete coercivity constant c_h = min ||eps v|| / ||v||_H1 over
    Dirichlet-reduced velocities (smallest generalized eigenvalue, square-rooted).
    """
    def compute():
        free = dofmap.free_dofs
        K = strain_stiffness(dofmap)[free][:, free]
        S = (mass_matrix(dofmap) + gradient_stiffness(dofmap))[free][:, free]
        if len(free) <= _DENSE_EIGEN_LIMIT:
            lam = sla.eigh(K.toarray(), S.toarray(), eigvals_only=True, subset_by_index=[0, 0])[0]
        else:
            lam = eigsh(K.tocsc(), k=1, M=S.tocsc(), sigma=0.0, which="LM", return_eigenvectors=False)[0]
        return np.sqrt(max(float(lam), 0.0))

    value = dofmap.cached_operator("korn", compute)
    logger.debug(f"Discrete Korn constant c_h = {value:.6f}")
    return value


# ============================================================================
# MANUFACTURED STOKES SOLUTION
# ============================================================================

@dataclass(frozen=True)
class ManufacturedSolution:
    """Divergence-free velocity, zero-mean pressure and matching load on the unit square"""

    mu: float

    @staticmethod
    def _f(x):
        return x ** 2 * (1 - x) ** 2, 2 * x * (1 - x) * (1 - 2 * x), 2 - 12 * x + 12 * x ** 2, -12 + 24 * x

    def velocity(self, x, y):
        fx, dfx, _, _ = self._f(x)
        fy, dfy, _, _ = self._f(y)
        return fx * dfy, -dfx * fy

    def pressure(self, x, y):
        return x ** 3 + y ** 3 - 0.5

    def load(self, x, y):
        # -mu div(eps u) + grad p with div(eps u) = lap(u)/2 for solenoidal u
        fx, dfx, d2fx, d3fx = self._f(x)
        fy, dfy, d2fy, d3fy = self._f(y)
        lap1 = d2fx * dfy + fx * d3fy
        lap2 = -(d3fx * fy + dfx * d2fy)
        return -0.5 * self.mu * lap1 + 3 * x ** 2, -0.5 * self.mu * lap2 + 3 * y ** 2


def manufactured_stokes(mu: float = 1.0) -> ManufacturedSolution:
    """Stream function x^2(1-x)^2 y^2(1-y)^2 with pressure x^3 + y^3 - 1/2"""
    return ManufacturedSolution(mu)


def convergence_rates(errors: Sequence[float], hs: Sequence[float]) -> list:
    errors, hs = np.asarray(errors, dtype=float), np.asarray(hs, dtype=float)
    return [float(np.log(errors[i] / errors[i + 1]) / np.log(hs[i] / hs[i + 1])) for i in range(len(errors) - 1)]


def manufactured_convergence(ns: Sequence[int] = (8, 16, 32), mu: float = 1.0) -> pd.DataFrame:
    """
    Solve the manufactured Stokes problem on refined crossed meshes.

    Returns one row per mesh: n, h, velocity/pressure L2 errors and observed rates.
    """
    exact = manufactured_stokes(mu)
    rows = []
    for n in ns:
        dofmap = build_dofmap(build_structured_mesh(n, n))
        solver = SaddleSolver(dofmap, assemble_stokes(dofmap, mu))
        v, p = solver.solve(load_from_function(dofmap, exact.load, order=6))
        velocity = FeField(dofmap, v, FieldRole.VELOCITY)
        pressure = FeField(dofmap, p, FieldRole.PRESSURE)

        data = dofmap.element_data(6)
        px, py = data.points[..., 0], data.points[..., 1]
        ue = np.stack(exact.velocity(px, py), axis=-1)
        du = eval_vector(velocity, 6) - ue
        dp = eval_pressure(pressure, 6) - exact.pressure(px, py)
        rows.append({
            "n": n,
            "h": 1.0 / n,
            "velocity_l2_error": float(np.sqrt(np.sum(data.weights * np.sum(du * du, axis=-1)))),
            "pressure_l2_error": float(np.sqrt(np.sum(data.weights * dp * dp))),
        })
        logger.info(f"Manufactured Stokes n={n}: velocity error {rows[-1]['velocity_l2_error']:.3e}")

    table = pd.DataFrame(rows)
    for col in ("velocity_l2_error", "pressure_l2_error"):
        table[col.replace("l2_error", "rate")] = [np.nan] + convergence_rates(table[col], table["h"])
    return table
