"""Shared fixtures: small crossed meshes, benchmark parameters, seeded generators."""

import numpy as np
import pytest

from shearflow import fem
from shearflow import tensor_core as tc
from shearflow.benchmark import build_problem
from shearflow.factor_cache import get_factor_cache
from shearflow.fields import FeField, FieldRole
from shearflow.mesh import build_structured_mesh


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def mesh4():
    return build_structured_mesh(4, 4)


@pytest.fixture(scope="session")
def dofmap4(mesh4):
    return fem.build_dofmap(mesh4)


@pytest.fixture(scope="session")
def dofmap8():
    return fem.build_dofmap(build_structured_mesh(8, 8))


@pytest.fixture
def params():
    return tc.PlasticityParams(g=0.5, mu=1.0, nu=1.0)


@pytest.fixture(scope="session")
def small_problem():
    """Benchmark problem on a 4x4 crossed mesh"""
    return build_problem(nx=4)


@pytest.fixture(autouse=True)
def _fresh_factor_cache():
    get_factor_cache().clear()
    yield


def random_field(dofmap, rng, role=FieldRole.CONTROL, scale=1.0):
    """Seeded random field vanishing on the boundary"""
    return FeField.from_free(dofmap, scale * rng.standard_normal(dofmap.n_free), role)


def bubble_field(dofmap, amplitude=1.0, role=FieldRole.CONTROL):
    """Smooth field vanishing on the boundary of the unit square"""
    from shearflow.fields import interpolate

    def fn(x, y):
        b = x * (1 - x) * y * (1 - y)
        return amplitude * 16 * b, amplitude * 16 * b * (x - 0.5)

    return interpolate(dofmap, fn, role)
