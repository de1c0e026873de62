"""
Pointwise nonsmooth tensor calculus
shearflow/tensor_core.py

The threshold nonlinearity m(E) = max(0, |E| - g) E/|E| (|.| the Frobenius
norm), its directional derivative, the C1 regularized family m_delta and the
Jacobian of m_delta.

Every operation comes in two forms:
- a `*_array` function acting on stacks of matrices, shape (..., N, N),
  which is what the finite element assembly calls;
- a SymTensor function for single values.
"""

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from shearflow.config import config
from shearflow.exceptions import ParameterError

ArrayLike = Union[float, np.ndarray]


# ============================================================================
# VALUE TYPES
# ============================================================================

@dataclass(frozen=True)
class SymTensor:
    """Symmetric N x N matrix value (a strain rate at one point)"""

    entries: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.entries, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] not in (2, 3):
            raise ParameterError(f"SymTensor needs a 2x2 or 3x3 matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ParameterError("SymTensor entries must be finite")
        sym = 0.5 * (arr + arr.T)
        sym.setflags(write=False)
        object.__setattr__(self, "entries", sym)

    @classmethod
    def zeros(cls, n: int = 2) -> "SymTensor":
        return cls(np.zeros((n, n)))

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.entries * self.entries)))

    def ddot(self, other: "SymTensor") -> float:
        return float(np.sum(self.entries * other.entries))

    def __add__(self, other: "SymTensor") -> "SymTensor":
        return SymTensor(self.entries + other.entries)

    def __sub__(self, other: "SymTensor") -> "SymTensor":
        return SymTensor(self.entries - other.entries)

    def __mul__(self, c: float) -> "SymTensor":
        return SymTensor(c * self.entries)

    __rmul__ = __mul__

    def __neg__(self) -> "SymTensor":
        return SymTensor(-self.entries)


@dataclass(frozen=True)
class PlasticityParams:
    """Yield threshold g, viscosity mu and nonsmooth weight nu"""

    g: float
    mu: float
    nu: float

    def __post_init__(self):
        for name in ("g", "mu", "nu"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ParameterError(f"{name} must be strictly positive, got {value}")


@dataclass(frozen=True)
class RegParam:
    """Regularization width delta of m_delta"""

    delta: float

    def __post_init__(self):
        if not np.isfinite(self.delta) or self.delta <= 0:
            raise ParameterError(f"delta must be strictly positive, got {self.delta}")

    def check_against(self, g: float) -> None:
        """m_delta is only used with delta < g, so E/|E| is never evaluated at 0"""
        if self.delta >= g:
            raise ParameterError(f"regularization requires delta < g (delta={self.delta}, g={g})")


def _check_threshold(g: float) -> None:
    if not np.isfinite(g) or g <= 0:
        raise ParameterError(f"threshold g must be strictly positive, got {g}")


def _delta_value(delta: Union[RegParam, float]) -> float:
    return delta.delta if isinstance(delta, RegParam) else RegParam(float(delta)).delta


# ============================================================================
# ARRAY HELPERS
# ============================================================================

def frobenius(E: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("...ij,...ij->...", E, E))


def ddot(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...ij->...", A, B)


def _safe_inverse(nrm: np.ndarray) -> np.ndarray:
    out = np.zeros_like(nrm)
    np.divide(1.0, nrm, out=out, where=nrm > 0)
    return out


def _scale(coef: np.ndarray, E: np.ndarray) -> np.ndarray:
    return np.asarray(coef)[..., None, None] * E


# ============================================================================
# THE NONSMOOTH MAP m AND ITS DIRECTIONAL DERIVATIVE
# ============================================================================

def m_array(E: np.ndarray, g: float) -> np.ndarray:
    _check_threshold(g)
    nrm = frobenius(E)
    coef = np.where(nrm > g, (nrm - g) * _safe_inverse(nrm), 0.0)
    return _scale(coef, E)


def projection_ball_array(E: np.ndarray, g: float) -> np.ndarray:
    """Frobenius projection onto the ball of radius g; m(E) = E - proj(E)"""
    _check_threshold(g)
    nrm = frobenius(E)
    coef = np.where(nrm > g, g * _safe_inverse(nrm), 1.0)
    return _scale(coef, E)


def plastic_potential_array(E: np.ndarray, g: float) -> np.ndarray:
    """psi(E) = 1/2 max(0, |E| - g)^2, whose gradient is m"""
    _check_threshold(g)
    return 0.5 * np.maximum(0.0, frobenius(E) - g) ** 2


def m_dir_linear_coefficients(E: np.ndarray, g: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Coefficients of the linear map H -> a H + b (n:H) n valid where |E| > g,
    with n = E/|E|. Zero wherever |E| <= g.
    """
    _check_threshold(g)
    nrm = frobenius(E)
    inv = _safe_inverse(nrm)
    above = nrm > g
    a = np.where(above, 1.0 - g * inv, 0.0)
    b = np.where(above, g * inv, 0.0)
    return a, b, _scale(inv, E)


def m_dir_array(E: np.ndarray, H: np.ndarray, g: float, tol_eq: float = None) -> np.ndarray:
    """
    Directional derivative m'(E; H):
        0                                      if |E| < g
        H + g E (E:H)/|E|^3 - g H/|E|          if |E| > g
        max(0, E:H) E / g^2                    if |E| = g
    The kink |E| = g is detected as ||E| - g| <= tol_eq.
    """
    _check_threshold(g)
    if tol_eq is None:
        tol_eq = config.tol.TOL_EQ_REL * g
    E, H = np.broadcast_arrays(np.asarray(E, dtype=float), np.asarray(H, dtype=float))
    nrm = frobenius(E)
    inv = _safe_inverse(nrm)
    EH = ddot(E, H)

    above = nrm > g + tol_eq
    kink = np.abs(nrm - g) <= tol_eq

    smooth_part = H + _scale(g * EH * inv ** 3, E) - _scale(g * inv, H)
    kink_part = _scale(np.maximum(0.0, EH) / g ** 2, E)

    out = np.where(above[..., None, None], smooth_part, 0.0)
    return np.where(kink[..., None, None], kink_part, out)


# ============================================================================
# REGULARIZED FAMILY m_delta
# ============================================================================

def smoothed_max(x: ArrayLike, delta: Union[RegParam, float]) -> Tuple[ArrayLike, ArrayLike]:
    """
    C1 regularization of max(0, x) and its derivative 1_delta(x).

    |x| <= delta:  -x^4/(16 d^3) + 3x^2/(8 d) + x/2 + 3d/16,
                   slope -x^3/(4 d^3) + 3x/(4 d) + 1/2
    outer branches are exact: (x, 1) above, (0, 0) below.
    """
    d = _delta_value(delta)
    x = np.asarray(x, dtype=float)
    mid = np.abs(x) <= d
    value = np.where(x > d, x, 0.0)
    slope = np.where(x > d, 1.0, 0.0)
    value = np.where(mid, -x ** 4 / (16 * d ** 3) + 3 * x ** 2 / (8 * d) + x / 2 + 3 * d / 16, value)
    slope = np.where(mid, -x ** 3 / (4 * d ** 3) + 3 * x / (4 * d) + 0.5, slope)
    if value.ndim == 0:
        return float(value), float(slope)
    return value, slope


def _smoothed_curvature(x: np.ndarray, d: float) -> np.ndarray:
    mid = np.abs(x) <= d
    return np.where(mid, -3 * x ** 2 / (4 * d ** 3) + 3 / (4 * d), 0.0)


def _radial_profile(nrm: np.ndarray, g: float, d: float) -> Tuple[np.ndarray, np.ndarray]:
    """phi(s) = max_d(0, s) 1_d(s) and phi'(s) at s = |E| - g"""
    s = nrm - g
    value, slope = smoothed_max(s, d)
    value, slope = np.asarray(value), np.asarray(slope)
    phi = value * slope
    dphi = slope ** 2 + value * _smoothed_curvature(s, d)
    return phi, dphi


def m_delta_array(E: np.ndarray, g: float, delta: Union[RegParam, float]) -> np.ndarray:
    _check_threshold(g)
    d = _delta_value(delta)
    RegParam(d).check_against(g)
    nrm = frobenius(E)
    phi, _ = _radial_profile(nrm, g, d)
    return _scale(phi * _safe_inverse(nrm), E)


def m_delta_jac_coefficients(E: np.ndarray, g: float, delta: Union[RegParam, float]):
    """
    m_delta'(E) H = a H + b (n:H) n with n = E/|E|,
    a = phi(s)/|E|, b = phi'(s) - phi(s)/|E|. Self-adjoint in H.
    """
    _check_threshold(g)
    d = _delta_value(delta)
    RegParam(d).check_against(g)
    nrm = frobenius(E)
    inv = _safe_inverse(nrm)
    phi, dphi = _radial_profile(nrm, g, d)
    a = phi * inv
    b = dphi - a
    return a, b, _scale(inv, E)


def apply_coefficients(a: np.ndarray, b: np.ndarray, n: np.ndarray, H: np.ndarray) -> np.ndarray:
    return _scale(a, H) + _scale(b * ddot(n, H), n)


def m_delta_jac_apply_array(E: np.ndarray, H: np.ndarray, g: float, delta: Union[RegParam, float]) -> np.ndarray:
    a, b, n = m_delta_jac_coefficients(E, g, delta)
    return apply_coefficients(a, b, n, H)


# ============================================================================
# SYMTENSOR API
# ============================================================================

def m(E: SymTensor, g: float) -> SymTensor:
    return SymTensor(m_array(E.entries, g))


def m_dir(E: SymTensor, H: SymTensor, g: float, tol_eq: float = None) -> SymTensor:
    return SymTensor(m_dir_array(E.entries, H.entries, g, tol_eq))


def m_delta(E: SymTensor, g: float, delta: Union[RegParam, float]) -> SymTensor:
    return SymTensor(m_delta_array(E.entries, g, delta))


def m_delta_jac_apply(E: SymTensor, H: SymTensor, g: float, delta: Union[RegParam, float]) -> SymTensor:
    return SymTensor(m_delta_jac_apply_array(E.entries, H.entries, g, delta))


def projection_ball(E: SymTensor, g: float) -> SymTensor:
    return SymTensor(projection_ball_array(E.entries, g))


def plastic_potential(E: SymTensor, g: float) -> float:
    return float(plastic_potential_array(E.entries, g))
