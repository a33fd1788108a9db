"""Receding-horizon kinodynamic planner: SQP over the multiple-shooting OCP.

One ``plan`` call performs a configured number of Gauss-Newton SQP iterations
(one, in the real-time-iteration setting) on the whole-body OCP and returns
the predicted trajectory together with per-quadrotor flat references.  The
warm start shifts the previous solution in time and overwrites the load pose,
twist and cable directions with estimator values, keeping the cable-chain
derivatives from the previous plan to avoid differentiating estimator output.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .. import dynamics
from ..errors import ModelEvaluationError
from ..flatness import expand_reference
from ..rotation import cross3, quat_left, quat_conj, quat_normalize
from ..state import FlatQuadRef, cable_base, input_dim, state_dim, unpack_state
from .config import OcpConfig
from .constraints import constraint_layout, eval_constraints, linearize_constraints
from .qp import STATUS_OPTIMAL, solve_stagewise_qp
from .shooting import shoot_with_jacobians, shoot, _renormalize


class PlanError(RuntimeError):
    """Planner could not produce a usable trajectory this cycle."""


@dataclass
class LoadEstimate:
    """Estimator snapshot consumed by the planner warm start."""

    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    w: np.ndarray
    s: np.ndarray  # (n, 3)


@dataclass
class SolveStats:
    sqp_iterations: int = 0
    qp_iterations: int = 0
    qp_status: int = 0
    kkt_residual: float = np.inf
    wall_time: float = 0.0
    cost: float = 0.0
    max_slack: float = 0.0
    merit_history: list = field(default_factory=list)


@dataclass
class PlanTrajectory:
    """OCP solution on the shooting grid plus derived quadrotor references."""

    stamps: np.ndarray          # (N+1,)
    states: np.ndarray          # (N+1, nx)
    inputs: np.ndarray          # (N, nu)
    quad_pos: np.ndarray        # (N+1, n, 3)
    quad_vel: np.ndarray
    quad_acc: np.ndarray
    quad_jerk: np.ndarray
    quad_thrust: np.ndarray     # (N+1, n)
    quad_z: np.ndarray          # (N+1, n, 3)
    quad_omega: np.ndarray      # (N+1, n, 3)
    stats: SolveStats = field(default_factory=SolveStats)

    @property
    def n(self):
        return self.quad_pos.shape[1]

    def _bracket(self, t):
        stamps = self.stamps
        if t <= stamps[0]:
            return 0, 0, 0.0
        if t >= stamps[-1]:
            return len(stamps) - 1, len(stamps) - 1, 0.0
        k = int(np.searchsorted(stamps, t, side="right")) - 1
        k1 = min(k + 1, len(stamps) - 1)
        dt = stamps[k1] - stamps[k]
        frac = 0.0 if dt <= 0 else (t - stamps[k]) / dt
        return k, k1, frac

    def sample_state(self, t):
        """Linear interpolation of the whole-body state; q and s renormalized."""
        k, k1, frac = self._bracket(t)
        x = (1.0 - frac) * self.states[k] + frac * self.states[k1]
        n = self.n
        return _renormalize(x, n)

    def sample_input(self, t):
        """Piecewise-constant input on its shooting interval (held at the end)."""
        k, _, _ = self._bracket(t)
        k = min(k, len(self.inputs) - 1)
        return self.inputs[k].copy()

    def sample_states(self, ts):
        """Vectorized ``sample_state`` over an array of times."""
        ts = np.asarray(ts, dtype=float)
        stamps = self.stamps
        k = np.clip(np.searchsorted(stamps, ts, side="right") - 1, 0, len(stamps) - 2)
        dt = stamps[k + 1] - stamps[k]
        frac = np.clip((ts - stamps[k]) / dt, 0.0, 1.0)[:, None]
        x = (1.0 - frac) * self.states[k] + frac * self.states[k + 1]
        return _renormalize(x, self.n)

    def sample_inputs(self, ts):
        ts = np.asarray(ts, dtype=float)
        k = np.clip(np.searchsorted(self.stamps, ts, side="right") - 1, 0, len(self.inputs) - 1)
        return self.inputs[k].copy()

    def sample_quad_ref(self, i, t):
        """Interpolated flat reference for quadrotor i at absolute time t."""
        k, k1, frac = self._bracket(t)
        w0, w1 = 1.0 - frac, frac

        def lerp(arr):
            return w0 * arr[k, i] + w1 * arr[k1, i]

        z = lerp(self.quad_z)
        z = z / np.linalg.norm(z)
        return FlatQuadRef(
            t=t,
            position=lerp(self.quad_pos),
            velocity=lerp(self.quad_vel),
            acceleration=lerp(self.quad_acc),
            jerk=lerp(self.quad_jerk),
            thrust=float(w0 * self.quad_thrust[k, i] + w1 * self.quad_thrust[k1, i]),
            z_axis=z,
            omega_world=lerp(self.quad_omega),
        )

    def covers(self, t):
        return self.stamps[0] <= t <= self.stamps[-1]


@dataclass
class PlanRequest:
    x_init: np.ndarray
    reference: object            # LoadReference
    zones: list
    params: object               # SystemParameters
    t_now: float = 0.0


def resample_init(prev: PlanTrajectory, t_now, est: LoadEstimate):
    """Initial OCP state: estimator pose/twist/directions, planner-resampled rest.

    Cable angular velocities, their derivatives, tensions and tension rates
    come from interpolating the previous plan at ``t_now``; returns
    (packed state, extrapolated_flag).
    """
    extrapolated = t_now > prev.stamps[-1]
    x = prev.sample_state(t_now)
    x = np.array(x, copy=True)
    x[0:3] = est.p
    x[3:6] = est.v
    x[6:10] = quat_normalize(est.q)
    x[10:13] = est.w
    n = prev.n
    for i in range(n):
        b = cable_base(i)
        s = np.asarray(est.s[i], dtype=float)
        x[b : b + 3] = s / np.linalg.norm(s)
    return x, extrapolated


class KinodynamicPlanner:
    """Holds the OCP setup and performs warm-started SQP solves."""

    def __init__(self, params, config: OcpConfig = None, zones=()):
        import dataclasses

        self.params = params
        self.config = config or OcpConfig()
        self.zones = list(zones)
        self.grid = self.config.make_grid()
        n = params.n
        self.nx = state_dim(n)
        self.nu = input_dim(n)
        self._w_state = self.config.state_weight_vec(n)
        self._w_input = self.config.input_weight_vec(n)
        # constraints are solved with a safety margin so transient RTI
        # linearization error does not eat into the configured limits
        self._plan_params = dataclasses.replace(
            params, quad_clearance=params.quad_clearance + self.config.clearance_margin
        )
        self._plan_zones = [
            type(z)(z.center, z.shape_diag, z.safe_distance + self.config.zone_margin)
            if z.active else z
            for z in self.zones
        ]
        groups = constraint_layout(self._plan_params, self._plan_zones, self.config.u_abs_max)
        gs = self.config.slack_group_scale
        scale = np.array([gs["thrust"], gs["tension"], gs["distance"], gs["zone"], gs["input"]])
        self._w1 = self.config.slack_l1 * scale[groups]
        self._w2 = self.config.slack_l2 * scale[groups]

    # ----- cost -----
    def _cost_terms(self, xs, us, x_ref, u_ref):
        """Gauss-Newton data: (Qm, qv, Rm, rv) for the packed-state QP."""
        N = len(us)
        nx, nu = self.nx, self.nu
        w_full = np.concatenate([self._w_state[:6], np.zeros(4), self._w_state[9:]])
        scale = np.ones(N + 1)
        scale[N] = self.config.terminal_scale

        Qm = np.zeros((N + 1, nx, nx))
        idx = np.arange(nx)
        Qm[:, idx, idx] = 2.0 * scale[:, None] * w_full
        qv = 2.0 * scale[:, None] * w_full * (xs - x_ref)
        # attitude error: vector part of q_ref^-1 * q, linear in q given the
        # reference; sign flipped so the scalar part is nonnegative
        L = quat_left(quat_conj(x_ref[:, 6:10]))          # (N+1, 4, 4)
        scal = np.einsum("kj,kj->k", L[:, 0, :], xs[:, 6:10])
        sign = np.where(scal < 0, -1.0, 1.0)
        Jq = sign[:, None, None] * L[:, 1:4, :]           # (N+1, 3, 4)
        eq = np.einsum("kij,kj->ki", Jq, xs[:, 6:10])
        w_att = self._w_state[6:9][None, :] * scale[:, None]
        Qm[:, 6:10, 6:10] = 2.0 * np.einsum("kji,kj,kjl->kil", Jq, w_att, Jq)
        qv[:, 6:10] = 2.0 * np.einsum("kji,kj->ki", Jq, w_att * eq)

        Rm = np.zeros((N, nu, nu))
        rv = np.zeros((N, nu))
        iu = np.arange(nu)
        for k in range(N):
            Rm[k][iu, iu] = 2.0 * self._w_input
            rv[k] = 2.0 * self._w_input * (us[k] - u_ref[k])
        return Qm, qv, Rm, rv

    def tracking_cost(self, xs, us, x_ref, u_ref):
        """Exact (not quadraticized) cost of a trajectory against a reference."""
        total = 0.0
        N = len(us)
        w_full = np.concatenate([self._w_state[:6], np.zeros(4), self._w_state[9:]])
        for k in range(N + 1):
            scale = self.config.terminal_scale if k == N else 1.0
            e = xs[k] - x_ref[k]
            total += scale * float(np.sum(w_full * e * e))
            eq = quat_left(quat_conj(x_ref[k, 6:10]))[1:4, :] @ xs[k, 6:10]
            total += scale * float(np.sum(self._w_state[6:9] * eq * eq))
        for k in range(N):
            du = us[k] - u_ref[k]
            total += float(np.sum(self._w_input * du * du))
        return total

    def _merit(self, xs, us, x_ref, u_ref):
        """L1 exact-penalty merit: cost + slack penalties + dynamics defects."""
        cfg = self.config
        cost = self.tracking_cost(xs, us, x_ref, u_ref)
        h = eval_constraints(xs[1:], us, self._plan_zones, self._plan_params, cfg.u_abs_max)
        viol = np.maximum(h, 0.0)
        pen = float(np.sum(self._w1 * viol) + np.sum(self._w2 * viol**2))
        xs_next = np.stack(
            [shoot(xs[k], us[k], self.grid[k], self.params, cfg.shoot_substeps, check=False)
             for k in range(len(us))]
        )
        defect = float(np.sum(np.abs(xs_next - xs[1:])))
        return cost + pen + cfg.merit_dyn_weight * defect

    # ----- main solve -----
    def plan(self, request: PlanRequest, warm: PlanTrajectory = None):
        t0 = time.perf_counter()
        cfg = self.config
        params = self.params
        N = cfg.N
        times = request.t_now + np.concatenate([[0.0], np.cumsum(self.grid)])
        x_ref, u_ref = expand_reference(request.reference, params, times)

        xs = np.zeros((N + 1, self.nx))
        us = np.zeros((N, self.nu))
        if warm is not None:
            xs[:] = warm.sample_states(times)
            us[:] = warm.sample_inputs(times[:N])
        else:
            # hold the initial state: dynamically imperfect but constraint
            # consistent, unlike the reference expansion which may violate
            # clearance limits
            xs[:] = request.x_init
        xs[0] = request.x_init

        stats = SolveStats()
        for it in range(max(1, cfg.sqp_iters_per_call)):
            xs_next, A, B = shoot_with_jacobians(xs[:N], us, self.grid, params, cfg.shoot_substeps)
            if not np.all(np.isfinite(xs_next)):
                raise PlanError("dynamics diverged while shooting")
            d = xs_next - xs[1:]
            Qm, qv, Rm, rv = self._cost_terms(xs, us, x_ref, u_ref)
            h, Gx, Gu = linearize_constraints(
                xs[1:], us, self._plan_zones, self._plan_params, cfg.u_abs_max
            )
            Cx = Gx @ A
            Cu = Gx @ B + Gu
            hfold = h + (Gx @ d[..., None])[..., 0]

            dx0 = np.zeros(self.nx)  # xs[0] == x_init already
            dxs, dus, slack, duals, kkt, qp_iters, qp_status = solve_stagewise_qp(
                A, B, d, dx0, Qm, qv, Rm, rv, Cx, Cu, hfold,
                self._w1, self._w2, reg=cfg.reg, tol=cfg.qp_tol, max_iter=cfg.qp_max_iter,
            )
            stats.qp_iterations += int(qp_iters)
            stats.qp_status = int(qp_status)
            stats.kkt_residual = float(kkt)
            stats.max_slack = float(np.max(slack)) if slack.size else 0.0
            stats.sqp_iterations += 1

            # trust region: keep the applied step inside the region where the
            # linearization is meaningful even when penalties demand more
            step_u = np.max(np.abs(dus)) if dus.size else 0.0
            step_x = np.max(np.abs(dxs))
            alpha = 1.0
            if step_u > cfg.u_abs_max:
                alpha = min(alpha, cfg.u_abs_max / step_u)
            if step_x > cfg.step_x_max:
                alpha = min(alpha, cfg.step_x_max / step_x)
            if cfg.line_search and cfg.sqp_iters_per_call > 1:
                m0 = self._merit(xs, us, x_ref, u_ref)
                stats.merit_history.append(m0)
                while alpha > 1e-3:
                    xs_try = xs + alpha * dxs
                    us_try = us + alpha * dus
                    xs_try = _renormalize(xs_try, params.n)
                    xs_try[0] = request.x_init
                    if self._merit(xs_try, us_try, x_ref, u_ref) <= m0 + 1e-12:
                        break
                    alpha *= 0.5
            xs = _renormalize(xs + alpha * dxs, params.n)
            us = us + alpha * dus
            xs[0] = request.x_init

            step = max(np.max(np.abs(dxs)), np.max(np.abs(dus)))
            if cfg.sqp_iters_per_call > 1 and step * alpha < 1e-8:
                break

        if not np.all(np.isfinite(xs)) or not np.all(np.isfinite(us)):
            raise PlanError("SQP produced non-finite iterate")

        stats.cost = self.tracking_cost(xs, us, x_ref, u_ref)
        stats.wall_time = time.perf_counter() - t0
        return self._build_trajectory(times, xs, us, stats)

    def _build_trajectory(self, times, xs, us, stats):
        params = self.params
        pos, vel, acc, jerk = dynamics.quad_kinematics(xs, params)
        F = dynamics.quad_thrust_vectors(xs, params)
        T = np.linalg.norm(F, axis=-1)
        T_safe = np.maximum(T, 1e-9)
        z = F / T_safe[..., None]
        p, v, q, w, s, r, rd, rdd, t, td = unpack_state(xs, params.n)
        h = params.quad_mass[:, None] * jerk - td[..., None] * s - t[..., None] * cross3(r, s)
        omega = cross3(z, h) / T_safe[..., None]
        return PlanTrajectory(
            stamps=times.copy(),
            states=xs,
            inputs=us,
            quad_pos=pos,
            quad_vel=vel,
            quad_acc=acc,
            quad_jerk=jerk,
            quad_thrust=T,
            quad_z=z,
            quad_omega=omega,
            stats=stats,
        )

    def hover_trajectory(self, x_hover, t_now=0.0):
        """Constant trajectory used before the first solve is delivered."""
        times = t_now + np.concatenate([[0.0], np.cumsum(self.grid)])
        N = self.config.N
        xs = np.tile(x_hover, (N + 1, 1))
        us = np.zeros((N, self.nu))
        return self._build_trajectory(times, xs, us, SolveStats())
