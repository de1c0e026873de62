"""
Discrete fields
shearflow/fields.py

FeField holds nodal coefficients on a DofMap together with a role tag;
QuadTensorField holds symmetric tensors sampled at quadrature points.
"""

from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Callable, Optional, Tuple

import numpy as np

from shearflow.exceptions import FieldError
from shearflow import tensor_core as tc

if TYPE_CHECKING:
    from shearflow.fem import DofMap


class FieldRole(str, Enum):
    VELOCITY = "velocity"
    PRESSURE = "pressure"
    CONTROL = "control"
    ADJOINT = "adjoint"
    DIRECTION = "direction"

    @property
    def vanishes_on_boundary(self) -> bool:
        return self in (FieldRole.VELOCITY, FieldRole.ADJOINT, FieldRole.DIRECTION)

    @property
    def is_vector(self) -> bool:
        return self is not FieldRole.PRESSURE


VECTOR_ROLES = (FieldRole.VELOCITY, FieldRole.CONTROL, FieldRole.ADJOINT, FieldRole.DIRECTION)


@dataclass(eq=False)
class FeField:
    """
    Coefficients of a P2 vector field (interleaved per node) or a P1 pressure.

    Velocity, adjoint and direction fields must be exactly zero on Dirichlet dofs.
    """

    dofmap: "DofMap"
    coefficients: np.ndarray
    role: FieldRole

    # numpy scalars on the left defer to __rmul__
    __array_ufunc__ = None

    def __post_init__(self):
        self.role = FieldRole(self.role)
        coefs = np.array(self.coefficients, dtype=float)
        expected = self.dofmap.n_velocity if self.role.is_vector else self.dofmap.n_pressure
        if coefs.shape != (expected,):
            raise FieldError(f"{self.role.value} field needs {expected} coefficients, got shape {coefs.shape}")
        if not np.all(np.isfinite(coefs)):
            raise FieldError(f"{self.role.value} field has non-finite coefficients")
        if self.role.vanishes_on_boundary and np.any(coefs[self.dofmap.dirichlet_mask] != 0.0):
            raise FieldError(f"{self.role.value} field is nonzero on Dirichlet dofs")
        self.coefficients = coefs

    # ------------------------------------------------------------------ builders

    @classmethod
    def zeros(cls, dofmap: "DofMap", role: FieldRole = FieldRole.VELOCITY) -> "FeField":
        role = FieldRole(role)
        n = dofmap.n_velocity if role.is_vector else dofmap.n_pressure
        return cls(dofmap, np.zeros(n), role)

    @classmethod
    def from_free(cls, dofmap: "DofMap", values: np.ndarray, role: FieldRole) -> "FeField":
        """Build a boundary-vanishing field from its values on the free dofs"""
        coefs = np.zeros(dofmap.n_velocity)
        coefs[dofmap.free_dofs] = values
        return cls(dofmap, coefs, role)

    def as_role(self, role: FieldRole) -> "FeField":
        role = FieldRole(role)
        if role.is_vector != self.role.is_vector:
            raise FieldError(f"cannot reinterpret a {self.role.value} field as {role.value}")
        return FeField(self.dofmap, self.coefficients.copy(), role)

    def copy(self) -> "FeField":
        return FeField(self.dofmap, self.coefficients.copy(), self.role)

    # ------------------------------------------------------------------ arithmetic

    def _check_compatible(self, other: "FeField"):
        if other.dofmap is not self.dofmap:
            raise FieldError("fields live on different dof maps")
        if other.role.is_vector != self.role.is_vector:
            raise FieldError(f"cannot combine {self.role.value} with {other.role.value}")

    def __add__(self, other: "FeField") -> "FeField":
        self._check_compatible(other)
        return FeField(self.dofmap, self.coefficients + other.coefficients, self.role)

    def __sub__(self, other: "FeField") -> "FeField":
        self._check_compatible(other)
        return FeField(self.dofmap, self.coefficients - other.coefficients, self.role)

    def __mul__(self, c: float) -> "FeField":
        return FeField(self.dofmap, float(c) * self.coefficients, self.role)

    __rmul__ = __mul__

    def __neg__(self) -> "FeField":
        return FeField(self.dofmap, -self.coefficients, self.role)

    # ------------------------------------------------------------------ views

    @property
    def free_values(self) -> np.ndarray:
        return self.coefficients[self.dofmap.free_dofs]

    def nodal_values(self) -> np.ndarray:
        """(n_nodes, 2) for vector roles, (n_vertices,) for pressure"""
        if self.role.is_vector:
            return self.coefficients.reshape(-1, 2)
        return self.coefficients

    def vertex_values(self) -> np.ndarray:
        nv = self.dofmap.mesh.n_vertices
        return self.nodal_values()[:nv]


@dataclass(eq=False)
class QuadTensorField:
    """Symmetric tensors at quadrature points; weights already include |T|"""

    values: np.ndarray    # (n_triangles, n_points, 2, 2)
    weights: np.ndarray   # (n_triangles, n_points)
    points: np.ndarray    # (n_triangles, n_points, 2)

    def __post_init__(self):
        if self.values.shape[:2] != self.weights.shape or self.values.shape[2:] != (2, 2):
            raise FieldError(f"tensor values {self.values.shape} do not match weights {self.weights.shape}")
        if np.any(self.weights <= 0):
            raise FieldError("quadrature weights must be positive")

    @property
    def measure(self) -> float:
        return float(self.weights.sum())

    def norms(self) -> np.ndarray:
        return tc.frobenius(self.values)

    def ddot(self, other: "QuadTensorField") -> np.ndarray:
        return tc.ddot(self.values, other.values)

    def integrate(self, scalar: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
        w = self.weights if mask is None else np.where(mask, self.weights, 0.0)
        return float(np.sum(w * scalar))

    def l2_norm(self, mask: Optional[np.ndarray] = None) -> float:
        return float(np.sqrt(max(self.integrate(tc.ddot(self.values, self.values), mask), 0.0)))

    def sup_norm(self) -> float:
        return float(self.norms().max(initial=0.0))

    def with_values(self, values: np.ndarray) -> "QuadTensorField":
        return QuadTensorField(values, self.weights, self.points)

    def __sub__(self, other: "QuadTensorField") -> "QuadTensorField":
        return self.with_values(self.values - other.values)

    def __add__(self, other: "QuadTensorField") -> "QuadTensorField":
        return self.with_values(self.values + other.values)

    def __mul__(self, c: float) -> "QuadTensorField":
        return self.with_values(float(c) * self.values)

    __rmul__ = __mul__


VectorFunction = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]


def interpolate(dofmap: "DofMap", fn: VectorFunction, role: FieldRole = FieldRole.CONTROL) -> FeField:
    """
    Nodal P2 interpolation of fn(x, y) -> (u1, u2).

    For boundary-vanishing roles the Dirichlet dofs are set to zero, which
    only removes round-off when fn already vanishes on the boundary.
    """
    role = FieldRole(role)
    if not role.is_vector:
        raise FieldError("interpolate builds vector fields; use interpolate_scalar for pressures")
    xy = dofmap.node_coords
    u1, u2 = fn(xy[:, 0], xy[:, 1])
    coefs = np.column_stack([np.broadcast_to(u1, len(xy)), np.broadcast_to(u2, len(xy))]).ravel().astype(float)
    if role.vanishes_on_boundary:
        coefs[dofmap.dirichlet_mask] = 0.0
    return FeField(dofmap, coefs, role)


def interpolate_scalar(dofmap: "DofMap", fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> FeField:
    v = dofmap.mesh.vertices
    values = np.broadcast_to(fn(v[:, 0], v[:, 1]), len(v)).astype(float)
    return FeField(dofmap, values, FieldRole.PRESSURE)
