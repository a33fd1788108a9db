"""Full planner solves: hover optimum, setpoint convergence, obstacle
traversal, warm-start resampling and trajectory consistency."""

import numpy as np
import pytest

from multilift.dynamics import quad_positions
from multilift.equilibrium import equilibrium_state, spread_tilt
from multilift.flatness import SegmentReference, SetpointReference
from multilift.params import SystemParameters
from multilift.planner.config import OcpConfig, vertical_cylinder
from multilift.planner.constraints import control_points, eval_constraints
from multilift.planner.sqp import (
    KinodynamicPlanner,
    LoadEstimate,
    PlanRequest,
    resample_init,
)
from multilift.state import LoadCableState, unpack_state


@pytest.fixture
def params():
    return SystemParameters()


def hover_setup(params, pos=(0.0, 0.0, 1.0)):
    x0 = equilibrium_state(params, position=np.array(pos))
    ref = SetpointReference(position=np.array(pos))
    return x0, ref


class TestHoverOptimum:
    def test_inputs_vanish_at_reference(self, params):
        # the OCP optimum must sit at the hover reference itself
        x0, ref = hover_setup(params)
        planner = KinodynamicPlanner(params, OcpConfig(qp_tol=1e-10, qp_max_iter=60))
        traj = planner.plan(PlanRequest(x_init=x0, reference=ref, zones=[], params=params))
        for k in range(6):
            traj = planner.plan(
                PlanRequest(x_init=x0, reference=ref, zones=[], params=params, t_now=0.1 * (k + 1)),
                warm=traj,
            )
        assert np.max(np.abs(traj.inputs)) <= 1e-4
        assert np.max(np.abs(traj.states[:, 0:3] - np.array([0, 0, 1.0]))) < 1e-6

    def test_rti_work_is_bounded(self, params):
        x0, ref = hover_setup(params)
        cfg = OcpConfig(qp_max_iter=30)
        planner = KinodynamicPlanner(params, cfg)
        traj = planner.plan(PlanRequest(x_init=x0, reference=ref, zones=[], params=params))
        assert traj.stats.sqp_iterations == cfg.sqp_iters_per_call == 1
        assert traj.stats.qp_iterations <= cfg.qp_max_iter


class TestSetpointConvergence:
    def test_batch_solve_reaches_setpoint(self, params):
        # 2 m step solved to convergence must beat the initial error and
        # satisfy all path constraints with vanishing slack
        x0 = equilibrium_state(params, position=np.zeros(3))
        ref = SetpointReference(position=np.array([2.0, 0.0, 0.0]))
        cfg = OcpConfig(sqp_iters_per_call=40, line_search=True, qp_tol=1e-8, qp_max_iter=80)
        planner = KinodynamicPlanner(params, cfg)
        traj = planner.plan(PlanRequest(x_init=x0, reference=ref, zones=[], params=params))
        assert traj.stats.max_slack <= 1e-6
        h = eval_constraints(traj.states[1:], traj.inputs, [], params, cfg.u_abs_max)
        assert np.max(h) <= 1e-6
        init_err = 2.0
        term_err = np.linalg.norm(traj.states[-1, 0:3] - [2.0, 0.0, 0.0])
        assert term_err < init_err

    def test_merit_never_increases_with_line_search(self, params):
        x0 = equilibrium_state(params, position=np.zeros(3))
        ref = SetpointReference(position=np.array([1.0, 0.5, 0.3]))
        cfg = OcpConfig(sqp_iters_per_call=15, line_search=True)
        planner = KinodynamicPlanner(params, cfg)
        traj = planner.plan(PlanRequest(x_init=x0, reference=ref, zones=[], params=params))
        merits = np.array(traj.stats.merit_history)
        assert len(merits) >= 5
        assert np.all(np.diff(merits) <= 1e-9)


class TestWarmStartProperty:
    def test_inputs_monotone_on_static_scene(self, params):
        x0, ref = hover_setup(params, pos=(0.3, -0.2, 1.0))
        planner = KinodynamicPlanner(params, OcpConfig(qp_tol=1e-8))
        traj = planner.plan(PlanRequest(x_init=x0, reference=ref, zones=[], params=params))
        norms = []
        for k in range(16):
            traj = planner.plan(
                PlanRequest(x_init=x0, reference=ref, zones=[], params=params, t_now=0.1 * (k + 1)),
                warm=traj,
            )
            norms.append(np.max(np.abs(traj.inputs)))
        tail = np.array(norms[9:])
        assert np.all(np.diff(tail) <= 1e-6)


class TestTrajectoryConsistency:
    def test_quad_refs_satisfy_cable_constraint(self, params):
        x0, ref = hover_setup(params)
        planner = KinodynamicPlanner(params, OcpConfig())
        traj = planner.plan(PlanRequest(x_init=x0, reference=ref, zones=[], params=params))
        pos = quad_positions(traj.states, params)
        assert np.max(np.abs(pos - traj.quad_pos)) < 1e-9

    def test_stamps_strictly_increasing(self, params):
        x0, ref = hover_setup(params)
        planner = KinodynamicPlanner(params, OcpConfig())
        traj = planner.plan(PlanRequest(x_init=x0, reference=ref, zones=[], params=params, t_now=3.3))
        assert np.all(np.diff(traj.stamps) > 0)
        assert traj.stamps[0] == 3.3


class TestResampleInit:
    def _traj(self, params):
        x0, ref = hover_setup(params)
        planner = KinodynamicPlanner(params, OcpConfig())
        return planner.plan(PlanRequest(x_init=x0, reference=ref, zones=[], params=params))

    def test_self_consistent_estimate_is_plain_resampling(self, params):
        traj = self._traj(params)
        t = 0.123
        x_plain = traj.sample_state(t)
        p, v, q, w, s, *_ = unpack_state(x_plain, params.n)
        est = LoadEstimate(p=p, v=v, q=q, w=w, s=s)
        x, extrapolated = resample_init(traj, t, est)
        np.testing.assert_allclose(x, x_plain, atol=1e-12)
        assert not extrapolated

    def test_node_time_returns_node(self, params):
        traj = self._traj(params)
        t = traj.stamps[3]
        x_plain = traj.sample_state(t)
        np.testing.assert_allclose(x_plain, traj.states[3], atol=1e-12)

    def test_only_estimator_fields_replaced(self, params):
        traj = self._traj(params)
        t = 0.2
        x_plain = traj.sample_state(t)
        p, v, q, w, s, *_ = unpack_state(x_plain.copy(), params.n)
        est = LoadEstimate(p=p + [0.05, 0, 0], v=v + [0, 0.1, 0], q=q, w=w + 0.01, s=s)
        x, _ = resample_init(traj, t, est)
        st_new = LoadCableState.from_vector(x, params.n)
        st_old = LoadCableState.from_vector(x_plain, params.n)
        np.testing.assert_allclose(st_new.p, st_old.p + [0.05, 0, 0])
        np.testing.assert_allclose(st_new.r, st_old.r, atol=1e-12)
        np.testing.assert_allclose(st_new.t, st_old.t, atol=1e-12)
        np.testing.assert_allclose(st_new.td, st_old.td, atol=1e-12)

    def test_extrapolation_flag(self, params):
        traj = self._traj(params)
        t = traj.stamps[-1] + 0.5
        x_plain = traj.sample_state(t)
        p, v, q, w, s, *_ = unpack_state(x_plain, params.n)
        est = LoadEstimate(p=p, v=v, q=q, w=w, s=s)
        x, extrapolated = resample_init(traj, t, est)
        assert extrapolated
        np.testing.assert_allclose(x, traj.states[-1], atol=1e-12)


@pytest.mark.slow
class TestNarrowPassage:
    def test_traversal_keeps_points_outside_zones(self):
        params = SystemParameters(quad_clearance=0.8)
        zones = [vertical_cylinder([1.6, 0.0], 1.5), vertical_cylinder([-1.6, 0.0], 1.5)]
        cfg = OcpConfig(sqp_iters_per_call=2, clearance_margin=0.1, zone_margin=0.1)
        cfg.slack_group_scale = dict(thrust=1.0, tension=1.0, distance=10.0, zone=3.0, input=1.0)
        planner = KinodynamicPlanner(params, cfg, zones=zones)
        x0 = equilibrium_state(params, position=[0, -3, 1.0], spread=spread_tilt(params, 0.92))
        ref = SegmentReference(
            start=np.array([0.0, -3.0, 1.0]), end=np.array([0.0, 3.0, 1.0]), duration=4.0, hold=1.0
        )
        traj = planner.plan(PlanRequest(x_init=x0, reference=ref, zones=zones, params=params))
        min_margin = np.inf
        min_dist = np.inf
        for k in range(80):
            t_now = 0.1 * (k + 1)
            x = traj.sample_state(t_now)
            traj = planner.plan(
                PlanRequest(x_init=x, reference=ref, zones=zones, params=params, t_now=t_now),
                warm=traj,
            )
            pts = control_points(traj.states[:1], params)
            for z in zones:
                d = np.sqrt(np.sum((pts - z.center) ** 2 * z.shape_diag, axis=-1))
                min_margin = min(min_margin, float((d - z.safe_distance).min()))
            pos = quad_positions(traj.states[0], params)
            for i in range(3):
                for j in range(i + 1, 3):
                    min_dist = min(min_dist, float(np.linalg.norm(pos[i] - pos[j])))
        assert traj.states[0][1] > 2.0  # made it through to the far side
        assert min_margin >= 0.0
        assert min_dist >= 0.8
