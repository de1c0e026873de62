import numpy as np
import pytest

from shearflow import fem
from shearflow.adjoint_control import ControlProblem, PathSchedule, delta_path
from shearflow.exceptions import ParameterError
from shearflow.fields import FeField, FieldRole, interpolate
from shearflow.stationarity import (
    check_b_stationarity,
    check_strong_stationarity,
    check_weak_stationarity,
    classify_sets,
    certify,
    compute_multiplier,
    limit_multiplier,
    pointwise_table,
    random_directions,
)

from conftest import random_field


def uniform_strain(dofmap, magnitude):
    """Linear field with |eps| equal to magnitude everywhere"""
    s = magnitude / np.sqrt(2.0)
    return interpolate(dofmap, lambda x, y: (s * y, s * x), FieldRole.CONTROL)


class TestRegions:
    def test_zero_state_is_below(self, dofmap4, params):
        masks = classify_sets(FeField.zeros(dofmap4, FieldRole.VELOCITY), params.g)
        assert masks.below.all()
        assert masks.total_measure == pytest.approx(1.0)
        assert masks.measures["band"] == 0.0

    def test_uniform_strain_regions(self, dofmap4, params):
        assert classify_sets(uniform_strain(dofmap4, 2 * params.g), params.g).above.all()
        assert classify_sets(uniform_strain(dofmap4, params.g), params.g).band.all()

    def test_rejects_nonpositive_band(self, dofmap4, params):
        with pytest.raises(ParameterError):
            classify_sets(FeField.zeros(dofmap4, FieldRole.VELOCITY), params.g, eps_a=0.0)


class TestMultiplier:
    def test_zero_adjoint(self, dofmap4, params, rng):
        y = random_field(dofmap4, rng, role=FieldRole.VELOCITY, scale=5.0)
        lam = compute_multiplier(y, FeField.zeros(dofmap4, FieldRole.ADJOINT), params.g, 0.1 * params.g)
        assert np.all(lam.values == 0.0)

    def test_matches_limit_far_above(self, dofmap4, params, rng):
        y = uniform_strain(dofmap4, 2 * params.g)
        p = random_field(dofmap4, rng, role=FieldRole.ADJOINT)
        lam = compute_multiplier(y, p, params.g, 0.1 * params.g)
        assert np.allclose(lam.values, limit_multiplier(y, p, params.g), atol=1e-12)

    def test_pointwise_table(self, dofmap4, params, rng):
        y = uniform_strain(dofmap4, 2 * params.g)
        p = random_field(dofmap4, rng, role=FieldRole.ADJOINT)
        lam = compute_multiplier(y, p, params.g, 0.1 * params.g)
        table = pointwise_table(y, lam, classify_sets(y, params.g))
        assert list(table.columns) == ["x", "y", "abs_eps_y", "lambda_dot_eps_y", "region"]
        assert (table["region"] == "above").all()
        assert np.allclose(table["abs_eps_y"], 2 * params.g)


class TestStrongStationarity:
    def test_sign_of_synthetic_multipliers(self, dofmap4, params):
        y = uniform_strain(dofmap4, params.g)
        eps_y = fem.eval_sym_gradient(y)
        masks = classify_sets(y, params.g)
        good = check_strong_stationarity(y, eps_y * -1.0, masks)
        assert good["violating_fraction"] == 0.0
        assert good["max"] == pytest.approx(-params.g ** 2)
        bad = check_strong_stationarity(y, eps_y, masks)
        assert bad["violating_fraction"] == 1.0
        assert bad["violating_measure_fraction"] == pytest.approx(1.0)

    def test_empty_band(self, dofmap4, params):
        y = FeField.zeros(dofmap4, FieldRole.VELOCITY)
        eps_y = fem.eval_sym_gradient(y)
        stats = check_strong_stationarity(y, eps_y, classify_sets(y, params.g))
        assert stats["band_points"] == 0
        assert stats["violating_fraction"] == 0.0


class TestWeakStationarity:
    def test_trivial_system_has_zero_residuals(self, dofmap4, params):
        problem = ControlProblem(params, 1e-2, FeField.zeros(dofmap4, FieldRole.CONTROL))
        y = FeField.zeros(dofmap4, FieldRole.VELOCITY)
        p = FeField.zeros(dofmap4, FieldRole.ADJOINT)
        lam = compute_multiplier(y, p, params.g, 0.1 * params.g)
        report = check_weak_stationarity(problem.zero_control(), y, p, lam, problem)
        assert set(report.weak_residuals) == {"inactive_lambda", "above_lambda", "adjoint_residual",
                                              "adjoint_residual_without_nu", "gradient_residual"}
        assert all(v == pytest.approx(0.0, abs=1e-12) for v in report.weak_residuals.values())
        assert set(report.weak_scale) == set(report.weak_residuals)

    def test_gradient_residual_and_exact_sets(self, dofmap4, params, rng):
        alpha = 1e-2
        problem = ControlProblem(params, alpha, FeField.zeros(dofmap4, FieldRole.CONTROL))
        y = FeField.zeros(dofmap4, FieldRole.VELOCITY)
        p = random_field(dofmap4, rng, role=FieldRole.ADJOINT)
        u = FeField(dofmap4, -p.coefficients / alpha, FieldRole.CONTROL)
        lam = compute_multiplier(y, p, params.g, 0.1 * params.g)
        report = check_weak_stationarity(u, y, p, lam, problem, delta=0.1 * params.g)
        assert report.weak_residuals["gradient_residual"] == pytest.approx(0.0, abs=1e-10)
        assert report.weak_residuals["inactive_lambda_exact"] == 0.0
        assert report.weak_residuals["adjoint_residual"] > 0.0
        assert report.delta == pytest.approx(0.1 * params.g)


def test_random_directions_are_seeded_unit_vectors(dofmap4):
    first = random_directions(dofmap4, 3, seed=7)
    second = random_directions(dofmap4, 3, seed=7)
    assert len(first) == 3
    for a, b in zip(first, second):
        assert np.array_equal(a.coefficients, b.coefficients)
        assert fem.l2_norm(a) == pytest.approx(1.0)
        assert a.role is FieldRole.DIRECTION


def test_b_probe_zero_direction(small_problem):
    u = small_problem.zero_control()
    zero = FeField.zeros(small_problem.dofmap, FieldRole.DIRECTION)
    probes = check_b_stationarity(u, small_problem, [zero])
    assert probes[0]["value"] == 0.0
    assert not probes[0]["flagged"]


def test_certify_trivial_optimum(dofmap4, params):
    problem = ControlProblem(params, 1e-2, FeField.zeros(dofmap4, FieldRole.CONTROL))
    u = problem.zero_control()
    y = FeField.zeros(dofmap4, FieldRole.VELOCITY)
    p = FeField.zeros(dofmap4, FieldRole.ADJOINT)
    report = certify(problem, u, y, p, 0.1 * params.g, random_directions(dofmap4, 16, seed=42))
    assert report.certified
    # strong stationarity holds vacuously on an empty band and B-stationarity follows
    assert report.checks["sign_condition"] and report.checks["b_stationarity"]
    assert report.strong_sign_stat["band_points"] == 0
    assert all(pr["value"] == pytest.approx(0.0, abs=1e-12) for pr in report.b_stat_probes)


@pytest.mark.slow
def test_certify_final_stage(small_problem):
    g = small_problem.params.g
    path = delta_path(small_problem, PathSchedule([0.2 * g, 0.02 * g, 0.002 * g, 0.0002 * g]))
    assert path.converged
    final = path.final.result
    directions = random_directions(small_problem.dofmap, 16, seed=42)
    report = certify(small_problem, final.control, final.state.velocity, final.adjoint.adjoint,
                     final.delta, directions)
    assert set(report.checks) == {"adjoint", "gradient", "inactive_lambda", "sign_condition",
                                  "b_stationarity", "multiplier_inequality"}
    for name in ("adjoint", "gradient", "inactive_lambda", "sign_condition", "b_stationarity"):
        assert report.checks[name], name
    assert report.strong_sign_stat["violating_fraction"] <= 0.05
    assert len(report.b_stat_probes) == 16
    tol_b = report.b_stat_probes[0]["tol_b"]
    assert all(pr["value"] >= -tol_b for pr in report.b_stat_probes)
    assert report.state_gap >= 0.0
    data = report.to_dict()
    assert data["certified"] == report.certified
    assert data["delta"] == pytest.approx(0.0002 * g)
