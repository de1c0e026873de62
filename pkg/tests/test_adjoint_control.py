import io
import json
import logging

import numpy as np
import pytest

from shearflow import fem
from shearflow.adjoint_control import (
    ControlProblem,
    OptimizerConfig,
    PathSchedule,
    delta_path,
    gradient_check,
    optimize_regularized,
    reduced_gradient,
    reduced_objective,
    solve_adjoint_regularized,
)
from shearflow.exceptions import ParameterError
from shearflow.fields import FeField, FieldRole
from shearflow.logger import attach_json_handler, detach_handler
from shearflow.sensitivity import solve_linearized_regularized
from shearflow.state_solver import SolverConfig, solve_state_regularized
from shearflow.tensor_properties import JACOBIAN_BOUND

from conftest import bubble_field, random_field


@pytest.fixture
def delta(small_problem):
    return 0.1 * small_problem.params.g


@pytest.fixture
def zero_target_problem(small_problem):
    return ControlProblem(small_problem.params, small_problem.alpha,
                          FeField.zeros(small_problem.dofmap, FieldRole.CONTROL))


class TestTypes:
    def test_problem_rejects_nonpositive_alpha(self, small_problem):
        with pytest.raises(ParameterError):
            ControlProblem(small_problem.params, 0.0, small_problem.z_d)

    def test_default_anchor_is_zero(self, small_problem):
        assert np.all(small_problem.u_bar.coefficients == 0.0)

    def test_optimizer_config_mode(self):
        with pytest.raises(ParameterError):
            OptimizerConfig(mode="newton")

    @pytest.mark.parametrize("deltas", [[], [0.1, 0.2], [0.1, -0.01], [0.1, 0.1]])
    def test_schedule_rejects(self, deltas):
        with pytest.raises(ParameterError):
            PathSchedule(deltas)

    def test_schedule_checks_threshold(self):
        schedule = PathSchedule([0.6, 0.1])
        with pytest.raises(ParameterError):
            schedule.validate(0.5)

    def test_schedule_anchor(self):
        with pytest.raises(ParameterError):
            PathSchedule([0.1], anchor="moving")
        assert PathSchedule([0.1], stage_overrides=[{"max_iters": 3}]).overrides(1) == {}


class TestGradient:
    def test_modes(self, small_problem, rng):
        u = random_field(small_problem.dofmap, rng)
        p = random_field(small_problem.dofmap, rng, role=FieldRole.ADJOINT)
        original = reduced_gradient(u, p, small_problem, "original")
        assert np.allclose(original.coefficients, p.coefficients + small_problem.alpha * u.coefficients)
        anchored = small_problem.with_anchor(u)
        proximal = reduced_gradient(u, p, anchored, "proximal")
        assert np.allclose(proximal.coefficients, original.coefficients)
        with pytest.raises(ParameterError):
            reduced_gradient(u, p, small_problem, "dual")

    def test_adjoint_identity(self, small_problem, delta, rng):
        u = bubble_field(small_problem.dofmap, 30.0)
        h = random_field(small_problem.dofmap, rng)
        y = solve_state_regularized(u, small_problem.params, delta).velocity
        p = solve_adjoint_regularized(y, small_problem, delta).adjoint
        z = solve_linearized_regularized(y, h, small_problem.params, delta)
        lhs = fem.l2_inner(y.as_role(FieldRole.CONTROL) - small_problem.z_d, z.as_role(FieldRole.CONTROL))
        rhs = fem.l2_inner(p.as_role(FieldRole.CONTROL), h)
        assert lhs == pytest.approx(rhs, rel=1e-8, abs=1e-12)

    @pytest.mark.parametrize("mode", ["proximal", "original"])
    def test_matches_central_differences(self, small_problem, delta, rng, mode):
        u = bubble_field(small_problem.dofmap, 30.0)
        directions = [random_field(small_problem.dofmap, rng) for _ in range(3)]
        directions.append(FeField.zeros(small_problem.dofmap, FieldRole.CONTROL))
        table = gradient_check(small_problem, delta, u, directions, mode=mode)
        assert len(table) == 4
        assert (table["rel_error"] <= 1e-4).all()

    def test_objective_terms(self, zero_target_problem):
        u = zero_target_problem.zero_control()
        value, state = reduced_objective(u, zero_target_problem, delta=0.05)
        assert value == 0.0
        assert np.all(state.velocity.coefficients == 0.0)


class TestOptimizer:
    def test_zero_target_needs_no_iterations(self, zero_target_problem, delta):
        result = optimize_regularized(zero_target_problem, delta)
        assert result.converged
        assert result.iterations == 0
        assert result.grad_norm == 0.0

    def test_descent(self, small_problem, delta):
        result = optimize_regularized(small_problem, delta, cfg=OptimizerConfig(max_iters=100))
        js = [h["j"] for h in result.history]
        assert all(b <= a for a, b in zip(js, js[1:]))
        assert js[-1] < js[0]
        assert result.converged
        assert result.grad_norm <= OptimizerConfig().grad_tolerance(small_problem)

    def test_budget_zero(self, small_problem, delta):
        result = optimize_regularized(small_problem, delta, cfg=OptimizerConfig(max_iters=0))
        assert not result.converged
        assert result.iterations == 0


@pytest.mark.slow
class TestDeltaPath:
    def test_stages_and_polish(self, small_problem):
        g = small_problem.params.g
        path = delta_path(small_problem, PathSchedule([0.2 * g, 0.02 * g]))
        kinds = [s.kind for s in path.stages]
        assert kinds == ["stage", "stage", "polish"]
        records = path.records()
        assert records[0]["control_distance"] is None
        assert records[1]["control_distance"] >= 0.0
        assert path.converged
        final = path.final
        tol = OptimizerConfig().grad_tolerance(small_problem)
        assert final.gradient_residual_original <= tol
        assert final.result.mode == "original"
        assert list(path.table().columns) == list(records[0])

    def test_four_stage_path(self, small_problem):
        g = small_problem.params.g
        path = delta_path(small_problem, PathSchedule([0.4 * g, 0.1 * g, 0.025 * g, 0.00625 * g]))
        assert [s.kind for s in path.stages] == ["stage"] * 4 + ["polish"]
        assert path.converged
        stages = [s for s in path.stages if s.kind == "stage"]

        distances = [s.control_distance for s in stages[1:]]
        assert all(cur < prev for prev, cur in zip(distances, distances[1:]))

        # lambda = m_delta'(eps y) eps p pointwise, so |lambda| <= 3 |eps p| at every stage
        for s in stages:
            eps_p = fem.eval_sym_gradient(s.result.adjoint.adjoint).l2_norm()
            assert s.multiplier_norm <= JACOBIAN_BOUND * eps_p * (1 + 1e-10)
        norms = [s.multiplier_norm for s in stages]
        assert max(norms) <= 10.0 * max(norms[0], 1e-12)

        assert all(s.proximal_term > 0.0 for s in stages)
        polish = path.final
        assert polish.kind == "polish"
        assert polish.proximal_term == 0.0
        assert polish.gradient_residual_original <= OptimizerConfig().grad_tolerance(small_problem)

    def test_unconverged_stage_is_logged(self, small_problem):
        stream = io.StringIO()
        handler = attach_json_handler(stream, level=logging.WARNING)
        try:
            path = delta_path(small_problem, PathSchedule([0.1 * small_problem.params.g], polish=False),
                              cfg=OptimizerConfig(max_iters=1))
        finally:
            detach_handler(handler)
        assert not path.converged and not path.halted
        messages = [json.loads(line)["message"] for line in stream.getvalue().splitlines()]
        assert any("Path stage 0" in m and "continuing" in m for m in messages)

    def test_anchor_refinements(self, small_problem):
        g = small_problem.params.g
        path = delta_path(small_problem, PathSchedule([0.1 * g], anchor_refinements=2, polish=False))
        assert [s.kind for s in path.stages] == ["stage", "refinement", "refinement"]
        assert path.stages[-1].delta == pytest.approx(0.1 * g)

    def test_failing_stage_halts(self, small_problem):
        cfg = OptimizerConfig(state=SolverConfig(max_iters=1, semismooth=False))
        u0 = bubble_field(small_problem.dofmap, 50.0)
        path = delta_path(small_problem, PathSchedule([0.1 * small_problem.params.g]), u0=u0, cfg=cfg)
        assert path.halted
        assert not path.converged
        assert path.stages == []
        assert path.error
