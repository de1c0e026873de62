"""
Desk-scale benchmark
shearflow/benchmark.py

Unit square, crossed mesh, mu = nu = 1, g = 0.5, alpha = 1e-2, zero anchor,
and a vortex target strong enough that |eps z_d| crosses g.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from shearflow import fem
from shearflow import tensor_core as tc
from shearflow.adjoint_control import ControlProblem, PathSchedule
from shearflow.exceptions import ParameterError
from shearflow.fields import FeField, FieldRole, interpolate
from shearflow.logger import get_logger
from shearflow.mesh import build_structured_mesh

logger = get_logger(__name__)

TARGETS = ("zero", "vortex", "shear")


def _vortex(x, y):
    # curl of (x(1-x)y(1-y))^2
    b = x * (1 - x) * y * (1 - y)
    bx = (1 - 2 * x) * y * (1 - y)
    by = x * (1 - x) * (1 - 2 * y)
    return 2 * b * by, -2 * b * bx


def _shear(x, y):
    bubble = 16 * x * (1 - x) * y * (1 - y)
    return bubble * (y - 0.5), np.zeros_like(x)


def target_field(dofmap: fem.DofMap, kind: str, g: float, strength: float = 3.0) -> FeField:
    """
    Target velocity z_d. Non-zero targets are rescaled so that
    max |eps z_d| over quadrature points equals strength * g.
    """
    if kind == "zero":
        return FeField.zeros(dofmap, FieldRole.CONTROL)
    shapes = {"vortex": _vortex, "shear": _shear}
    if kind not in shapes:
        raise ParameterError(f"unknown target {kind!r}; expected one of {TARGETS} or a CSV path")
    raw = interpolate(dofmap, shapes[kind], FieldRole.CONTROL)
    peak = fem.eval_sym_gradient(raw).sup_norm()
    return raw * (strength * g / peak)


@dataclass
class BenchmarkSetup:
    nx: int = 16
    mu: float = 1.0
    nu: float = 1.0
    g: float = 0.5
    alpha: float = 1e-2
    target: str = "vortex"
    strength: float = 3.0
    delta_factors: List[float] = field(default_factory=lambda: [0.5, 0.1, 0.02, 0.004])

    @property
    def params(self) -> tc.PlasticityParams:
        return tc.PlasticityParams(g=self.g, mu=self.mu, nu=self.nu)

    def build(self) -> ControlProblem:
        return build_problem(self.nx, self.params, self.alpha, self.target, self.strength)

    def schedule(self, **kwargs) -> PathSchedule:
        return PathSchedule([f * self.g for f in self.delta_factors], **kwargs)


def build_problem(
    nx: int = 16,
    params: Optional[tc.PlasticityParams] = None,
    alpha: float = 1e-2,
    target: str = "vortex",
    strength: float = 3.0,
) -> ControlProblem:
    params = params or tc.PlasticityParams(g=0.5, mu=1.0, nu=1.0)
    dofmap = fem.build_dofmap(build_structured_mesh(nx, nx))
    z_d = target_field(dofmap, target, params.g, strength)
    logger.info(f"Benchmark problem: {nx}x{nx} crossed mesh, target={target}, alpha={alpha}")
    return ControlProblem(params=params, alpha=alpha, z_d=z_d)
