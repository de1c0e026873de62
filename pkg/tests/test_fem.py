import numpy as np
import pytest

from shearflow import fem
from shearflow import tensor_core as tc
from shearflow.exceptions import FieldError, ParameterError
from shearflow.fields import FeField, FieldRole, interpolate
from shearflow.mesh import build_structured_mesh

from conftest import random_field


def _linear(dofmap, A):
    return interpolate(dofmap, lambda x, y: (A[0, 0] * x + A[0, 1] * y, A[1, 0] * x + A[1, 1] * y))


class TestQuadrature:
    @pytest.mark.parametrize("order", [2, 4, 5, 6])
    def test_weights_cover_the_domain(self, dofmap4, order):
        data = dofmap4.element_data(order)
        assert data.weights.sum() == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("order", [2, 4, 5, 6])
    def test_exact_for_monomials(self, dofmap4, order):
        data = dofmap4.element_data(order)
        x, y = data.points[..., 0], data.points[..., 1]
        k = order // 2
        value = np.sum(data.weights * x ** k * y ** (order - k))
        assert value == pytest.approx(1.0 / ((k + 1) * (order - k + 1)), rel=1e-10)

    def test_unknown_order(self):
        with pytest.raises(ParameterError):
            fem.quadrature_rule(3)


class TestDofMap:
    def test_single_cell(self):
        dofmap = fem.build_dofmap(build_structured_mesh(1, 1))
        assert dofmap.n_nodes == 5 + 8
        assert dofmap.n_velocity == 26
        assert dofmap.n_pressure == 5
        assert dofmap.n_free == 10

    def test_midpoints_and_boundary(self, dofmap4):
        mesh = dofmap4.mesh
        mid = dofmap4.node_coords[mesh.n_vertices:]
        assert np.allclose(mid, mesh.vertices[mesh.edges].mean(axis=1))
        xy = dofmap4.node_coords[dofmap4.boundary_node_mask]
        on_boundary = np.isclose(xy, 0.0) | np.isclose(xy, 1.0)
        assert on_boundary.any(axis=1).all()

    def test_element_nodes_opposite_vertices(self, dofmap4):
        coords = dofmap4.node_coords[dofmap4.element_nodes]
        for k in range(3):
            i, j = (k + 1) % 3, (k + 2) % 3
            assert np.allclose(coords[:, 3 + k], 0.5 * (coords[:, i] + coords[:, j]))


class TestEvaluation:
    def test_rigid_rotation_has_no_strain(self, dofmap4):
        eps = fem.eval_sym_gradient(_linear(dofmap4, np.array([[0.0, 1.0], [-1.0, 0.0]])))
        assert eps.sup_norm() < 1e-12

    def test_symmetric_linear_map(self, dofmap4):
        A = np.array([[0.3, -0.2], [-0.2, 0.7]])
        eps = fem.eval_sym_gradient(_linear(dofmap4, A))
        assert np.allclose(eps.values, A, atol=1e-12)
        assert np.allclose(fem.eval_divergence(_linear(dofmap4, A)), np.trace(A))

    def test_quadratic_form_matches_stiffness(self, dofmap4, rng):
        v = random_field(dofmap4, rng)
        eps = fem.eval_sym_gradient(v, 4)
        integral = eps.integrate(eps.ddot(eps))
        K = fem.strain_stiffness(dofmap4)
        assert integral == pytest.approx(v.coefficients @ K @ v.coefficients, rel=1e-10)
        assert fem.energy_norm(v) ** 2 == pytest.approx(integral, rel=1e-10)

    def test_pressure_role_checked(self, dofmap4):
        with pytest.raises(FieldError):
            fem.eval_sym_gradient(FeField.zeros(dofmap4, FieldRole.PRESSURE))
        with pytest.raises(FieldError):
            fem.eval_pressure(FeField.zeros(dofmap4, FieldRole.VELOCITY))


class TestStokes:
    def test_symmetric_and_coercive(self, dofmap4, rng):
        op = fem.assemble_stokes(dofmap4, 2.0)
        assert abs(op.A - op.A.T).max() <= 1e-12
        for _ in range(5):
            v = random_field(dofmap4, rng).coefficients
            assert v @ op.A @ v > 0

    def test_rejects_bad_viscosity(self, dofmap4):
        with pytest.raises(ParameterError):
            fem.assemble_stokes(dofmap4, 0.0)

    def test_pressure_has_zero_mean(self, dofmap4):
        solver = fem.SaddleSolver(dofmap4, fem.assemble_stokes(dofmap4, 1.0))
        exact = fem.manufactured_stokes()
        _, p = solver.solve(fem.load_from_function(dofmap4, exact.load))
        M = fem.pressure_mass_matrix(dofmap4)
        assert abs(np.ones(dofmap4.n_pressure) @ M @ p) < 1e-12

    @pytest.mark.slow
    def test_manufactured_convergence(self):
        table = fem.manufactured_convergence(ns=(8, 16, 32))
        assert table["velocity_rate"].iloc[1:].min() >= 2.8
        assert table["pressure_rate"].iloc[-1] > 1.7
        assert list(table["velocity_l2_error"]) == sorted(table["velocity_l2_error"], reverse=True)

    def test_convergence_rates(self):
        assert fem.convergence_rates([1.0, 0.125], [1.0, 0.5]) == pytest.approx([3.0])


class TestNonlinearResidual:
    def test_zero_state_zero_control(self, dofmap4, params):
        y = FeField.zeros(dofmap4, FieldRole.VELOCITY)
        u = FeField.zeros(dofmap4, FieldRole.CONTROL)
        r = fem.assemble_nonlinear_residual(y, u, params)
        assert r.norm() == 0.0

    def test_large_threshold_gives_stokes(self, dofmap4, rng):
        y = random_field(dofmap4, rng, FieldRole.VELOCITY, 0.1)
        u = random_field(dofmap4, rng)
        big = tc.PlasticityParams(g=1e6, mu=1.3, nu=1.0)
        r = fem.assemble_nonlinear_residual(y, u, big)
        stokes = 1.3 * fem.strain_stiffness(dofmap4) @ y.coefficients - fem.load_vector(u)
        stokes[dofmap4.dirichlet_mask] = 0.0
        assert np.allclose(r.momentum, stokes, atol=1e-13)

    def test_regularized_matches_off_band(self, dofmap4, params):
        A = np.array([[1.0, 0.0], [0.0, -1.0]]) * (2 * params.g / np.sqrt(2))
        y = _linear(dofmap4, A)
        u = FeField.zeros(dofmap4, FieldRole.CONTROL)
        exact = fem.assemble_nonlinear_residual(y, u, params)
        smooth = fem.assemble_nonlinear_residual(y, u, params, delta=0.1)
        assert np.allclose(exact.momentum, smooth.momentum, atol=1e-14)


class TestJacobian:
    def test_requires_delta(self, dofmap4, params):
        with pytest.raises(ParameterError):
            fem.assemble_jacobian(FeField.zeros(dofmap4), params, None)

    def test_symmetric(self, dofmap4, params, rng):
        y = random_field(dofmap4, rng, FieldRole.VELOCITY, 0.5)
        J = fem.assemble_jacobian(y, params, 0.1).A
        assert abs(J - J.T).max() <= 1e-10

    def test_below_band_equals_stokes(self, dofmap4, params):
        J = fem.assemble_jacobian(FeField.zeros(dofmap4), params, 0.1).A
        K = fem.assemble_stokes(dofmap4, params.mu).A
        assert abs(J - K).max() <= 1e-14

    def test_matches_difference_quotient(self, dofmap4, params, rng):
        y = random_field(dofmap4, rng, FieldRole.VELOCITY, 0.5)
        w = random_field(dofmap4, rng, FieldRole.VELOCITY)
        u = FeField.zeros(dofmap4, FieldRole.CONTROL)
        J = fem.assemble_jacobian(y, params, 0.1).A
        Jw = J @ w.coefficients
        Jw[dofmap4.dirichlet_mask] = 0.0
        errors = []
        for t in (1e-3, 1e-4):
            rp = fem.assemble_nonlinear_residual(y + t * w, u, params, 0.1).momentum
            rm = fem.assemble_nonlinear_residual(y - t * w, u, params, 0.1).momentum
            errors.append(np.linalg.norm((rp - rm) / (2 * t) - Jw))
        assert errors[-1] <= 1e-4 * np.linalg.norm(Jw)


class TestNorms:
    def test_constant_field(self, dofmap4):
        c = interpolate(dofmap4, lambda x, y: (np.ones_like(x), np.zeros_like(x)))
        assert fem.l2_norm(c) == pytest.approx(1.0)
        assert fem.h1_norm(c) == pytest.approx(1.0)
        assert fem.energy_norm(c) == pytest.approx(0.0, abs=1e-12)
        assert fem.divergence_l2_norm(c) == pytest.approx(0.0, abs=1e-12)

    def test_l2_inner_is_consistent(self, dofmap4, rng):
        v = random_field(dofmap4, rng)
        assert fem.l2_inner(v, v) == pytest.approx(fem.l2_norm(v) ** 2)

    def test_dual_norm_ignores_pressure_gradients(self, dofmap4, rng):
        q = rng.standard_normal(dofmap4.n_pressure)
        r = fem.divergence_matrix(dofmap4).T @ q
        assert fem.solenoidal_dual_norm(dofmap4, r) <= 1e-6 * np.linalg.norm(r)

    def test_dual_norm_of_stiffness_image(self, dofmap4):
        # K w with w the Stokes solution for a load f gives back <f, w>^(1/2)
        solver = fem.SaddleSolver(dofmap4, fem.assemble_stokes(dofmap4, 1.0))
        f = fem.load_from_function(dofmap4, fem.manufactured_stokes().load)
        w, _ = solver.solve(f)
        expected = np.sqrt(w @ fem.strain_stiffness(dofmap4) @ w)
        assert fem.solenoidal_dual_norm(dofmap4, f) == pytest.approx(expected, rel=1e-8)

    def test_korn_constant(self, dofmap4, rng):
        c = fem.korn_constant(dofmap4)
        assert 0.0 < c <= 1.0
        v = random_field(dofmap4, rng, FieldRole.VELOCITY)
        assert fem.energy_norm(v) >= c * fem.h1_norm(v) * (1 - 1e-10)
        assert fem.korn_constant(dofmap4) == c
