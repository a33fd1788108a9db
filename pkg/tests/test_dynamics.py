"""Model correctness: trivial force balances, finite-difference oracles for
every analytic derivative, and the whole-body kinematic chain."""

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from multilift import dynamics
from multilift.errors import ModelEvaluationError, SingularReferenceError
from multilift.params import SystemParameters
from multilift.state import LoadCableState, PlannerInput, input_dim, state_dim, unpack_state

from conftest import fd_jacobian, hover_state, random_input, random_state, rel_err

HOVER_TENSION = 1.4 * 9.81 / 3  # 4.578 N
HOVER_THRUST = 0.6 * 9.81 + HOVER_TENSION  # 10.464 N


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class TestLoadCableDerivative:
    def test_symmetric_hover_is_static(self, params):
        x = hover_state(params)
        u = PlannerInput.zero(params.n).to_vector()
        xdot = dynamics.load_cable_derivative(x, u, params)
        st = LoadCableState.from_vector(xdot, params.n)
        np.testing.assert_allclose(st.v, 0.0, atol=1e-12)  # vdot lives in v slot
        np.testing.assert_allclose(xdot[3:6], 0.0, atol=1e-12)
        np.testing.assert_allclose(xdot[10:13], 0.0, atol=1e-12)

    def test_zero_tension_free_fall(self, params):
        x = hover_state(params)
        st = LoadCableState.from_vector(x, params.n)
        st.t[:] = 0.0
        xdot = dynamics.load_cable_derivative(st.to_vector(), PlannerInput.zero(3).to_vector(), params)
        np.testing.assert_allclose(xdot[3:6], [0, 0, -9.81], atol=1e-12)

    def test_nonfinite_rejected(self, params):
        x = hover_state(params)
        x[0] = np.nan
        with pytest.raises(ModelEvaluationError):
            dynamics.load_cable_derivative(x, np.zeros(input_dim(3)), params)

    def test_matches_high_accuracy_flow(self, params, rng):
        # central difference of a tightly integrated flow approximates xdot
        x = random_state(params, rng)
        u = random_input(params, rng)

        def f(t, y):
            return dynamics.load_cable_derivative(y, u, params, check=False)

        dt = 1e-5
        sol_f = solve_ivp(f, (0, dt), x, rtol=1e-12, atol=1e-12, dense_output=True)
        sol_b = solve_ivp(f, (0, -dt), x, rtol=1e-12, atol=1e-12, dense_output=True)
        fd = (sol_f.y[:, -1] - sol_b.y[:, -1]) / (2 * dt)
        assert rel_err(fd, dynamics.load_cable_derivative(x, u, params)) < 1e-6


class TestJacobians:
    def test_fx_fu_match_fd(self, params, rng):
        for _ in range(10):
            x = random_state(params, rng)
            u = random_input(params, rng)
            fx, fu = dynamics.load_cable_jacobians(x, u, params)
            fx_fd = fd_jacobian(lambda z: dynamics.load_cable_derivative(z, u, params, check=False), x)
            fu_fd = fd_jacobian(lambda z: dynamics.load_cable_derivative(x, z, params, check=False), u)
            assert rel_err(fx, fx_fd) < 1e-6
            assert rel_err(fu, fu_fd) < 1e-6

    def test_quad_position_jacobian(self, params, rng):
        x = random_state(params, rng)
        J = dynamics.quad_position_jacobian(x, params)
        J_fd = fd_jacobian(lambda z: dynamics.quad_positions(z, params).ravel(), x)
        assert rel_err(J.reshape(J_fd.shape), J_fd) < 1e-6

    def test_quad_acceleration_jacobian(self, params, rng):
        for _ in range(5):
            x = random_state(params, rng)
            J = dynamics.quad_acceleration_jacobian(x, params)

            def acc(z):
                return dynamics.quad_kinematics(z, params)[2].ravel()

            J_fd = fd_jacobian(acc, x)
            assert rel_err(J.reshape(J_fd.shape), J_fd) < 1e-5

    def test_thrust_sq_jacobian(self, params, rng):
        for _ in range(5):
            x = random_state(params, rng)
            T_sq, J = dynamics.quad_thrust_sq_jacobian(x, params)

            def tsq(z):
                F = dynamics.quad_thrust_vectors(z, params)
                return np.sum(F * F, axis=-1)

            np.testing.assert_allclose(T_sq, tsq(x), rtol=1e-12)
            J_fd = fd_jacobian(tsq, x)
            assert rel_err(J, J_fd) < 1e-5


class TestQuadPosition:
    def test_direct_substitution(self, params):
        x = hover_state(params)
        st = LoadCableState.from_vector(x, params.n)
        st.s[0] = [0, 0, -1]
        pos = dynamics.quad_positions(st.to_vector(), params)
        np.testing.assert_allclose(pos[0], params.rho[0] + [0, 0, 1], atol=1e-12)
        st.s[0] = [1, 0, 0]
        pos = dynamics.quad_positions(st.to_vector(), params)
        np.testing.assert_allclose(pos[0], params.rho[0] - [1, 0, 0], atol=1e-12)

    def test_cable_length_identity(self, params, rng):
        x = random_state(params, rng)
        st = LoadCableState.from_vector(x, params.n)
        pos = dynamics.quad_positions(x, params)
        from multilift.rotation import quat_normalize, rotate

        qn = quat_normalize(st.q)
        for i in range(params.n):
            attach = st.p + rotate(qn, params.rho[i])
            # s is unit by construction, so the offset has exactly cable length
            st2 = st.normalized()
            pos_i = dynamics.quad_positions(st2.to_vector(), params)[i]
            attach2 = st2.p + rotate(st2.q, params.rho[i])
            assert abs(np.linalg.norm(pos_i - attach2) - params.cable_length[i]) < 1e-12


class TestQuadKinematics:
    def test_hover_all_zero(self, params):
        x = hover_state(params)
        pos, vel, acc, jerk = dynamics.quad_kinematics(x, params)
        np.testing.assert_allclose(vel, 0.0, atol=1e-12)
        np.testing.assert_allclose(acc, 0.0, atol=1e-12)
        np.testing.assert_allclose(jerk, 0.0, atol=1e-12)

    def test_pure_translation(self, params):
        x = hover_state(params)
        st = LoadCableState.from_vector(x, params.n)
        st.v = np.array([1.0, -2.0, 0.5])
        pos, vel, acc, jerk = dynamics.quad_kinematics(st.to_vector(), params)
        for i in range(params.n):
            np.testing.assert_allclose(vel[i], st.v, atol=1e-12)

    def test_derivatives_match_flow(self, params, rng):
        # propagate the whole-body dynamics and finite-difference the quad
        # position along the flow; vel/acc/jerk must match the closed forms
        x = random_state(params, rng, scale=0.5)
        u = random_input(params, rng, scale=0.5)

        def f(t, y):
            return dynamics.load_cable_derivative(y, u, params, check=False)

        h = 1e-3
        ts = h * np.arange(-4, 5)
        states = []
        for tk in ts:
            sol = solve_ivp(f, (0, tk), x, rtol=1e-12, atol=1e-12) if tk != 0 else None
            states.append(sol.y[:, -1] if sol else x.copy())
        pos = np.stack([dynamics.quad_positions(z, params) for z in states])

        w1 = np.array([1, -8, 0, 8, -1]) / 12.0
        w2 = np.array([-1, 16, -30, 16, -1]) / 12.0
        w3 = np.array([1, -8, 13, 0, -13, 8, -1]) / 8.0
        vel_fd = np.einsum("k,k...->...", w1, pos[2:7]) / h
        acc_fd = np.einsum("k,k...->...", w2, pos[2:7]) / h**2
        jerk_fd = np.einsum("k,k...->...", w3, pos[1:8]) / h**3

        _, vel, acc, jerk = dynamics.quad_kinematics(x, params)
        assert rel_err(vel, vel_fd) < 1e-6
        assert rel_err(acc, acc_fd) < 1e-6
        assert rel_err(jerk, jerk_fd) < 1e-5


class TestThrustAndRate:
    def test_hover_thrust(self, params):
        x = hover_state(params)
        T, z = dynamics.quad_thrust(x, params)
        np.testing.assert_allclose(T, HOVER_THRUST, atol=1e-9)
        np.testing.assert_allclose(z, np.tile([0, 0, 1.0], (3, 1)), atol=1e-12)

    def test_free_fall_is_singular(self, params):
        x = hover_state(params)
        st = LoadCableState.from_vector(x, params.n)
        st.t[:] = 0.0
        with pytest.raises(SingularReferenceError):
            dynamics.quad_thrust(st.to_vector(), params)

    def test_force_residual_identity(self, params, rng):
        x = random_state(params, rng)
        st = LoadCableState.from_vector(x, params.n).normalized()
        x = st.to_vector()
        T, z = dynamics.quad_thrust(x, params)
        _, _, acc, _ = dynamics.quad_kinematics(x, params)
        for i in range(params.n):
            resid = (
                T[i] * z[i]
                + st.t[i] * st.s[i]
                - params.quad_mass[i] * (acc[i] - params.gravity)
            )
            assert np.linalg.norm(resid) < 1e-9

    def test_hover_rate_zero(self, params):
        x = hover_state(params)
        om = dynamics.quad_rate_refs(x, params)
        np.testing.assert_allclose(om, 0.0, atol=1e-12)

    def test_rate_orthogonal_to_z(self, params, rng):
        for _ in range(20):
            x = random_state(params, rng)
            x = LoadCableState.from_vector(x, params.n).normalized().to_vector()
            om = dynamics.quad_rate_refs(x, params)
            _, z = dynamics.quad_thrust(x, params)
            assert np.max(np.abs(np.sum(om * z, axis=-1))) < 1e-12

    def test_rate_matches_z_axis_rotation(self, params, rng):
        # omega reference must reproduce the finite-difference rotation rate
        # of the thrust direction along a smooth flow
        x = random_state(params, rng, scale=0.3)
        x = LoadCableState.from_vector(x, params.n).normalized().to_vector()
        u = random_input(params, rng, scale=0.3)

        def f(t, y):
            return dynamics.load_cable_derivative(y, u, params, check=False)

        h = 1e-4
        zs = []
        for tk in (-h, 0.0, h):
            sol = solve_ivp(f, (0, tk), x, rtol=1e-12, atol=1e-12) if tk != 0 else None
            z_here = dynamics.quad_thrust(sol.y[:, -1] if sol else x, params)[1]
            zs.append(z_here)
        zdot_fd = (zs[2] - zs[0]) / (2 * h)
        om = dynamics.quad_rate_refs(x, params)
        zdot = np.cross(om, zs[1])
        assert np.max(np.linalg.norm(zdot - zdot_fd, axis=-1)) < 1e-4


class TestQuadrotorDerivative:
    def test_hover_statics(self, params):
        xq = np.array([0, 0, 1.0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0], dtype=float)
        dx = dynamics.quadrotor_derivative(
            xq, HOVER_THRUST, np.zeros(3), HOVER_TENSION, [0, 0, -1.0], np.zeros(3), params
        )
        np.testing.assert_allclose(dx[3:6], 0.0, atol=1e-9)

    def test_free_fall(self, params):
        xq = np.array([0, 0, 1.0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0], dtype=float)
        dx = dynamics.quadrotor_derivative(xq, 0.0, np.zeros(3), 0.0, [0, 0, -1.0], np.zeros(3), params)
        np.testing.assert_allclose(dx[3:6], [0, 0, -9.81], atol=1e-12)

    def test_matches_flow(self, params, rng):
        xq = np.concatenate([rng.normal(size=3), rng.normal(size=3), [1, 0, 0, 0], rng.normal(size=3)])
        xq[6:10] = xq[6:10] / np.linalg.norm(xq[6:10])
        T, tau = 8.0, np.array([0.01, -0.02, 0.005])
        s_dir = np.array([0.1, 0.0, -1.0])
        s_dir /= np.linalg.norm(s_dir)
        wind = np.array([1.0, 0.0, 0.0])

        def f(t, y):
            return dynamics.quadrotor_derivative(y, T, tau, 3.0, s_dir, wind, params, check=False)

        dt = 1e-5
        sol_f = solve_ivp(f, (0, dt), xq, rtol=1e-12, atol=1e-12)
        sol_b = solve_ivp(f, (0, -dt), xq, rtol=1e-12, atol=1e-12)
        fd = (sol_f.y[:, -1] - sol_b.y[:, -1]) / (2 * dt)
        assert rel_err(fd, f(0, xq)) < 1e-6
