"""Reference trajectories and the whole-body reference expansion."""

import numpy as np
import pytest

from multilift import dynamics, flatness
from multilift.params import SystemParameters
from multilift.state import unpack_state

from conftest import rel_err


@pytest.fixture
def params():
    return SystemParameters()


class TestNamedTrajectories:
    def test_fast_at_zero(self):
        ref = flatness.named_figure8("fast")
        out = ref.eval(np.array(0.0))
        np.testing.assert_allclose(out.p, [2.5, 0.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(out.v, [0.0, 4.0, 0.0], atol=1e-12)

    def test_slow_at_zero(self):
        out = flatness.named_figure8("slow").eval(np.array(0.0))
        np.testing.assert_allclose(out.p, [2.5, 0.0, 1.0], atol=1e-12)

    def test_derivative_chain_consistency(self):
        # each stated derivative must integrate to the next-lower one
        ref = flatness.named_figure8("medium", lead_in=3.0)
        ts = np.linspace(0.1, 8.0, 300)
        h = 1e-5
        for attr_lo, attr_hi in [("p", "v"), ("v", "a"), ("a", "j"), ("j", "snap")]:
            lo_p = getattr(ref.eval(ts + h), attr_lo)
            lo_m = getattr(ref.eval(ts - h), attr_lo)
            fd = (lo_p - lo_m) / (2 * h)
            hi = getattr(ref.eval(ts), attr_hi)
            assert rel_err(fd, hi) < 1e-4

    def test_lead_in_starts_at_rest(self):
        ref = flatness.named_figure8("fast", lead_in=3.0)
        out = ref.eval(np.array(0.0))
        np.testing.assert_allclose(out.v, 0.0, atol=1e-12)
        np.testing.assert_allclose(out.a, 0.0, atol=1e-12)
        # after the lead-in the warped clock runs at unit rate
        out2 = ref.eval(np.array(10.0))
        raw = flatness.named_figure8("fast").eval(np.array(10.0 - 1.5))
        np.testing.assert_allclose(out2.p, raw.p, atol=1e-12)
        np.testing.assert_allclose(out2.v, raw.v, atol=1e-12)


class TestSegmentReference:
    def test_boundary_derivatives_zero(self):
        ref = flatness.SegmentReference(
            start=np.array([0.0, -3.0, 1.0]), end=np.array([0.0, 3.0, 1.0]),
            duration=4.0, hold=1.0,
        )
        for t in (1.0, 5.0):
            out = ref.eval(np.array(t))
            for field in ("v", "a", "j", "snap"):
                np.testing.assert_allclose(getattr(out, field), 0.0, atol=1e-10)
        np.testing.assert_allclose(ref.eval(np.array(0.5)).p, [0, -3, 1], atol=1e-12)
        np.testing.assert_allclose(ref.eval(np.array(9.0)).p, [0, 3, 1], atol=1e-12)

    def test_setpoint_constant(self):
        ref = flatness.SetpointReference(position=np.array([1.0, 2.0, 3.0]), yaw=0.3)
        out = ref.eval(np.linspace(0, 5, 7))
        assert np.all(out.p == np.array([1.0, 2.0, 3.0]))
        assert np.all(out.v == 0) and np.all(out.snap == 0)


class TestFornberg:
    def test_weights_reproduce_polynomial_derivatives(self):
        h = 0.1
        xs = h * np.arange(-4, 5)
        w = flatness.fornberg_weights(0.0, xs, 4)
        coeffs = np.array([0.3, -1.2, 0.7, 2.0, -0.4, 0.05])
        vals = np.polyval(coeffs[::-1], xs)
        poly = np.polynomial.Polynomial(coeffs)
        for order in range(5):
            d = poly.deriv(order)(0.0) if order else poly(0.0)
            assert abs(w[order] @ vals - d) < 1e-8 * max(1.0, abs(d))


class TestExpansion:
    def test_hover_reference(self, params):
        ref = flatness.SetpointReference(position=np.array([0.0, 0.0, 1.0]))
        x_ref, u_ref = flatness.expand_reference(ref, params, np.linspace(0, 2, 5))
        assert np.max(np.abs(u_ref)) < 1e-9
        p, v, q, w, s, r, rd, rdd, t, td = unpack_state(x_ref, params.n)
        np.testing.assert_allclose(t, params.hover_tension(), atol=1e-9)
        # vertical cables, equal tensions balance gravity
        np.testing.assert_allclose(s, np.tile([0, 0, -1.0], (5, 3, 1)), atol=1e-9)

    def test_wrench_residual(self, params):
        # expanded tensions and directions must reproduce the load dynamics:
        # sum(-t_i s_i) = m (a_ref - g)
        ref = flatness.Figure8Reference(amp=(1.5, 1.0), freq=(0.8, 1.6), yaw_rate=0.3)
        times = np.linspace(0.0, 4.0, 9)
        x_ref, _ = flatness.expand_reference(ref, params, times)
        flat = ref.eval(times)
        _, _, _, _, s, _, _, _, t, _ = unpack_state(x_ref, params.n)
        force = -np.sum(t[..., None] * s, axis=-2)
        want = params.load_mass * (flat.a - params.gravity)
        assert np.max(np.abs(force - want)) < 1e-9

    def test_expansion_matches_dynamics_chain(self, params):
        # r, rd, t-dot references must be the actual time derivatives of the
        # allocated s(t), t(t): check against an independent finer stencil
        ref = flatness.named_figure8("medium_plus")
        t0 = 1.7
        x_ref, u_ref = flatness.expand_reference(ref, params, np.array([t0]))
        h = 1e-4
        xs, _ = flatness.expand_reference(ref, params, np.array([t0 - h, t0 + h]))
        _, _, _, _, s_pair, r_pair, *_ = unpack_state(xs, params.n)
        sdot_fd = (s_pair[1] - s_pair[0]) / (2 * h)
        _, _, _, _, s0, r0, *_ = unpack_state(x_ref[0], params.n)
        np.testing.assert_allclose(np.cross(r0, s0), sdot_fd, atol=1e-6)
