"""Load-cable state estimation from quadrotor states and accelerometers.

The EKF carries the load pose/twist plus each quadrotor's position and
velocity.  Prediction runs the load dynamics with cable tensions from a
spring-damper elongation model and constant-velocity quadrotors; updates fuse
the quadrotor states and the accelerometer-derived cable directions, the
latter expressed in the two-dimensional tangent plane of the predicted
direction.  A static initial guess comes from an iterative Kabsch alignment
of the attachment ring to the quadrotor positions.
"""

from dataclasses import dataclass, field

import numpy as np

from .dynamics import quad_drag_force
from .errors import GeometryError
from .rotation import (
    cross3,
    hat,
    quat_from_rotvec,
    quat_left,
    quat_mul,
    quat_normalize,
    quat_to_rot,
    rot_to_quat,
)
from .planner.sqp import LoadEstimate


@dataclass
class EstimatorConfig:
    spring_stiffness: float = 5000.0  # N/m on cable elongation
    spring_damping: float = 50.0      # N s/m
    predict_substep: float = 0.002    # 500 Hz internal prediction
    # continuous process noise densities (squared units per second)
    q_load_pos: float = 1e-6
    q_load_vel: float = 5e-2
    q_load_att: float = 1e-6
    q_load_omega: float = 5e-1
    q_quad_pos: float = 1e-6
    q_quad_vel: float = 1e-2
    # measurement standard deviations
    r_cable_dir: float = np.radians(5.0)  # per tangent axis
    r_quad_pos: float = 0.005
    r_quad_vel: float = 0.02
    min_cable_force: float = 0.5          # N; below this the direction is meaningless
    init_pos_cov: float = 0.05
    init_vel_cov: float = 0.05
    init_att_cov: float = 0.05
    init_omega_cov: float = 0.05


@dataclass
class EkfMeasurement:
    """Per-quadrotor sensor bundle consumed by one update."""

    quad_pos: np.ndarray        # (n, 3)
    quad_vel: np.ndarray        # (n, 3)
    cable_dir: np.ndarray       # (n, 3) unit, quad -> load
    cable_valid: np.ndarray     # (n,) bool quality flags


def cable_direction_measurement(q_i, accel_world, rotor_speeds, v_i, params, i=0,
                                min_force=0.5):
    """Cable direction from the accelerometer force residual.

    The specific force times mass equals thrust plus cable pull plus drag;
    subtracting the identified thrust (from rotor speeds) and the drag model
    leaves the cable force.  Returns (unit direction, valid flag); slack or
    near-slack cables are rejected because the residual loses direction.
    """
    R = quat_to_rot(np.asarray(q_i, dtype=float))
    z = R[:, 2]
    thrust = params.rotor.c_t * float(np.sum(np.square(rotor_speeds)))
    drag = quad_drag_force(q_i, v_i, np.zeros(3), params)
    resid = params.quad_mass[i] * np.asarray(accel_world, dtype=float) - thrust * z - drag
    norm = float(np.linalg.norm(resid))
    if norm < min_force:
        return np.array([0.0, 0.0, -1.0]), False
    return resid / norm, True


def initialize_kabsch(quad_positions, params, tol_pos=1e-9, tol_att=1e-9, iter_max=100):
    """Iterative rigid alignment of the attachment ring to quadrotor positions.

    Starting from vertical cables, alternates between (1) Kabsch fit of the
    load pose to the implied attachment points and (2) recomputing the cable
    directions from that pose.  Returns (p, q, s, converged).

    The convergence test compares successive poses by position change and
    relative rotation angle.
    """
    quad_positions = np.asarray(quad_positions, dtype=float)
    n = params.n
    if n < 3:
        raise GeometryError("initializer needs at least three quadrotors")
    rho = params.rho
    rho_bar = rho.mean(axis=0)
    L = (rho - rho_bar).T  # 3 x n
    lengths = params.cable_length[:, None]

    p = np.zeros(3)
    R = np.eye(3)
    s = np.tile([0.0, 0.0, -1.0], (n, 1))
    p_last = np.full(3, np.inf)
    R_last = np.zeros((3, 3))
    converged = False
    for _ in range(iter_max):
        c = quad_positions + s * lengths          # implied attachment points
        c_bar = c.mean(axis=0)
        C = (c - c_bar).T
        H = L @ C.T
        U, S, Vt = np.linalg.svd(H)
        if S[1] < 1e-12:
            raise GeometryError("attachment geometry is degenerate (rank < 2)")
        V = Vt.T
        D = np.diag([1.0, 1.0, np.sign(np.linalg.det(V @ U.T))])
        R = V @ D @ U.T
        p = np.mean(c - rho @ R.T, axis=0)
        offs = rho @ R.T + p - quad_positions
        s = offs / np.linalg.norm(offs, axis=-1, keepdims=True)
        dp = np.linalg.norm(p - p_last)
        # Frobenius distance resolves small rotation changes far below the
        # precision of an arccos-based angle
        datt = np.linalg.norm(R - R_last)
        if dp < tol_pos and datt < tol_att:
            converged = True
            break
        p_last, R_last = p.copy(), R.copy()
    return p, rot_to_quat(R), s, converged


class LoadCableEKF:
    """Error-state EKF over load pose/twist and quadrotor positions/velocities."""

    def __init__(self, params, config: EstimatorConfig = None):
        self.params = params
        self.config = config or EstimatorConfig()
        n = params.n
        self.n = n
        self.nerr = 12 + 6 * n
        self.p = np.zeros(3)
        self.v = np.zeros(3)
        self.q = np.array([1.0, 0.0, 0.0, 0.0])
        self.w = np.zeros(3)
        self.quad_p = np.zeros((n, 3))
        self.quad_v = np.zeros((n, 3))
        self.P = np.eye(self.nerr)
        self.updates_skipped = 0

    # ----- initialization -----
    def initialize(self, quad_positions, quad_velocities=None):
        cfg = self.config
        p, q, s, converged = initialize_kabsch(quad_positions, self.params)
        self.p = p
        self.q = q
        self.v = np.zeros(3)
        self.w = np.zeros(3)
        self.quad_p = np.asarray(quad_positions, dtype=float).copy()
        self.quad_v = (
            np.zeros((self.n, 3)) if quad_velocities is None
            else np.asarray(quad_velocities, dtype=float).copy()
        )
        diag = np.concatenate([
            np.full(3, cfg.init_pos_cov),
            np.full(3, cfg.init_vel_cov),
            np.full(3, cfg.init_att_cov),
            np.full(3, cfg.init_omega_cov),
            np.tile(np.concatenate([np.full(3, cfg.r_quad_pos**2 * 100),
                                    np.full(3, cfg.r_quad_vel**2 * 100)]), self.n),
        ])
        self.P = np.diag(diag)
        return converged

    # ----- cable geometry and spring tensions -----
    def _cable_states(self):
        R = quat_to_rot(self.q)
        attach = self.p + self.params.rho @ R.T
        e = attach - self.quad_p
        d = np.linalg.norm(e, axis=-1)
        s = e / d[:, None]
        edot = self.v + cross3(np.broadcast_to(self.w, (self.n, 3)), self.params.rho) @ R.T - self.quad_v
        ddot = np.sum(s * edot, axis=-1)
        elong = d - self.params.cable_length
        k, c = self.config.spring_stiffness, self.config.spring_damping
        t_raw = k * elong + c * ddot
        active = (elong > 0.0) & (t_raw > 0.0)
        t = np.where(active, t_raw, 0.0)
        return R, e, d, s, edot, ddot, t, active

    def cable_directions(self):
        _, _, _, s, *_ = self._cable_states()
        return s

    def snapshot(self):
        return LoadEstimate(
            p=self.p.copy(), v=self.v.copy(), q=self.q.copy(), w=self.w.copy(),
            s=self.cable_directions(),
        )

    def _mean_derivative(self, p, v, q, w, quad_p, quad_v):
        """Load/quad mean dynamics at an arbitrary point (for RK4 stages)."""
        params = self.params
        R = quat_to_rot(q)
        attach = p + params.rho @ R.T
        e = attach - quad_p
        d = np.linalg.norm(e, axis=-1)
        if np.any(d < 1e-6):
            raise GeometryError("quadrotor coincides with its attachment point")
        s = e / d[:, None]
        edot = v + cross3(np.broadcast_to(w, (self.n, 3)), params.rho) @ R.T - quad_v
        ddot = np.sum(s * edot, axis=-1)
        elong = d - params.cable_length
        t_raw = self.config.spring_stiffness * elong + self.config.spring_damping * ddot
        t = np.where((elong > 0.0) & (t_raw > 0.0), t_raw, 0.0)
        vdot = params.gravity - np.sum(t[:, None] * s, axis=0) / params.load_mass
        b = s @ R
        torque = np.sum(t[:, None] * cross3(b, params.rho), axis=0)
        Jw = params.load_inertia @ w
        wdot = params.load_inertia_inv @ (-np.cross(w, Jw) + torque)
        return v, vdot, w, wdot

    def _derivative_and_jacobian(self):
        """Continuous mean derivative and error-state Jacobian F."""
        params = self.params
        n = self.n
        m = params.load_mass
        J, Jinv = params.load_inertia, params.load_inertia_inv
        R, e, d, s, edot, ddot, t, active = self._cable_states()
        if np.any(d < 1e-6):
            raise GeometryError("quadrotor coincides with its attachment point")

        vdot = params.gravity - np.sum(t[:, None] * s, axis=0) / m
        b = s @ R  # R^T s_i rows
        torque = np.sum(t[:, None] * cross3(b, params.rho), axis=0)
        Jw = J @ self.w
        wdot = Jinv @ (-np.cross(self.w, Jw) + torque)

        F = np.zeros((self.nerr, self.nerr))
        F[0:3, 3:6] = np.eye(3)
        F[6:9, 6:9] = -hat(self.w)
        F[6:9, 9:12] = np.eye(3)
        F[9:12, 9:12] = Jinv @ (hat(Jw) - hat(self.w) @ J)
        k_s, c_s = self.config.spring_stiffness, self.config.spring_damping

        for i in range(n):
            qi = 12 + 6 * i
            F[qi : qi + 3, qi + 3 : qi + 6] = np.eye(3)
            rho = params.rho[i]
            Rrho_hat = hat(R @ rho)
            si, di, ei = s[i], d[i], e[i]
            Ps = (np.eye(3) - np.outer(si, si)) / di
            # de/d(dp, dtheta, dquad_p); dedot/d(dv, dtheta, domega, dquad_v)
            de = {"p": np.eye(3), "th": -R @ hat(rho), "qp": -np.eye(3)}
            dedot = {
                "v": np.eye(3),
                "th": -R @ hat(np.cross(self.w, rho)),
                "w": -R @ hat(rho),
                "qv": -np.eye(3),
            }
            cols = {"p": slice(0, 3), "v": slice(3, 6), "th": slice(6, 9),
                    "w": slice(9, 12), "qp": slice(qi, qi + 3), "qv": slice(qi + 3, qi + 6)}
            ds = {key: Ps @ de[key] for key in de}
            dd = {key: si @ de[key] for key in de}
            dddot_static = (edot[i] @ Ps)
            dddot = {key: dddot_static @ de[key] for key in de}
            for key in dedot:
                dddot[key] = dddot.get(key, np.zeros(3)) + si @ dedot[key]
            if active[i]:
                dt_i = {key: k_s * dd.get(key, 0.0) + c_s * dddot.get(key, 0.0)
                        for key in set(dd) | set(dddot)}
            else:
                dt_i = {key: np.zeros(3) for key in set(dd) | set(dddot)}

            bi = b[i]
            db_th = hat(R.T @ si) if False else hat(bi)
            for key, col in cols.items():
                dti = dt_i.get(key)
                dsi = ds.get(key)
                term_v = np.zeros((3, 3))
                if dti is not None:
                    term_v += np.outer(si, dti)
                if dsi is not None:
                    term_v += t[i] * dsi
                F[3:6, col] += -term_v / m
                # torque = t_i (b_i x rho_i) = -t_i hat(rho) b_i
                dtorque = np.zeros((3, 3))
                if dti is not None:
                    dtorque += -hat(rho) @ np.outer(bi, dti)
                if dsi is not None:
                    dtorque += -t[i] * hat(rho) @ R.T @ dsi
                if key == "th":
                    dtorque += -t[i] * hat(rho) @ db_th
                F[9:12, col] += Jinv @ dtorque

        xdot = dict(p=self.v.copy(), v=vdot, w=wdot)
        return xdot, F

    def predict(self, dt):
        """Propagate mean and covariance over ``dt`` in fixed substeps.

        The spring-damper coupling makes the error dynamics stiff, so the
        transition matrix uses the A-stable Cayley form
        (I - F h/2)^-1 (I + F h/2) and the mean uses RK4.
        """
        cfg = self.config
        remaining = dt
        I = np.eye(self.nerr)
        while remaining > 1e-12:
            h = min(cfg.predict_substep, remaining)
            _, F = self._derivative_and_jacobian()

            def deriv(p, v, q, w):
                return self._mean_derivative(p, v, q, w, self.quad_p, self.quad_v)

            p0, v0, q0, w0 = self.p, self.v, self.q, self.w
            k1 = deriv(p0, v0, q0, w0)
            q_mid1 = quat_normalize(quat_mul(q0, quat_from_rotvec(0.5 * h * k1[2])))
            k2 = deriv(p0 + 0.5 * h * k1[0], v0 + 0.5 * h * k1[1], q_mid1, w0 + 0.5 * h * k1[3])
            q_mid2 = quat_normalize(quat_mul(q0, quat_from_rotvec(0.5 * h * k2[2])))
            k3 = deriv(p0 + 0.5 * h * k2[0], v0 + 0.5 * h * k2[1], q_mid2, w0 + 0.5 * h * k2[3])
            q_end = quat_normalize(quat_mul(q0, quat_from_rotvec(h * k3[2])))
            k4 = deriv(p0 + h * k3[0], v0 + h * k3[1], q_end, w0 + h * k3[3])

            self.p = p0 + (h / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            self.v = v0 + (h / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            w_eff = (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]) / 6.0
            self.q = quat_normalize(quat_mul(q0, quat_from_rotvec(h * w_eff)))
            self.w = w0 + (h / 6.0) * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
            self.quad_p = self.quad_p + h * self.quad_v

            Phi = np.linalg.solve(I - 0.5 * h * F, I + 0.5 * h * F)
            self.P = Phi @ self.P @ Phi.T + self._process_noise(h)
            self.P = 0.5 * (self.P + self.P.T)
            remaining -= h

    def _process_noise(self, h):
        cfg = self.config
        diag = np.concatenate([
            np.full(3, cfg.q_load_pos),
            np.full(3, cfg.q_load_vel),
            np.full(3, cfg.q_load_att),
            np.full(3, cfg.q_load_omega),
            np.tile(np.concatenate([np.full(3, cfg.q_quad_pos), np.full(3, cfg.q_quad_vel)]), self.n),
        ])
        return np.diag(diag * h)

    def _direction_jacobian(self, i, R, s, d):
        """d s_i / d(error state), 3 x nerr."""
        Ps = (np.eye(3) - np.outer(s, s)) / d
        out = np.zeros((3, self.nerr))
        out[:, 0:3] = Ps
        out[:, 6:9] = Ps @ (-R @ hat(self.params.rho[i]))
        qi = 12 + 6 * i
        out[:, qi : qi + 3] = -Ps
        return out

    def update(self, meas: EkfMeasurement):
        """Fuse quadrotor states and cable directions; returns True if applied."""
        cfg = self.config
        n = self.n
        R, e, d, s_pred, *_ = self._cable_states()

        rows = []
        innov = []
        rdiag = []
        for i in range(n):
            qi = 12 + 6 * i
            if meas.cable_valid[i]:
                basis = _tangent_basis(s_pred[i])
                Hs = basis.T @ self._direction_jacobian(i, R, s_pred[i], d[i])
                rows.append(Hs)
                innov.append(basis.T @ (meas.cable_dir[i] - s_pred[i]))
                rdiag.append(np.full(2, cfg.r_cable_dir**2))
            Hp = np.zeros((3, self.nerr))
            Hp[:, qi : qi + 3] = np.eye(3)
            rows.append(Hp)
            innov.append(meas.quad_pos[i] - self.quad_p[i])
            rdiag.append(np.full(3, cfg.r_quad_pos**2))
            Hv = np.zeros((3, self.nerr))
            Hv[:, qi + 3 : qi + 6] = np.eye(3)
            rows.append(Hv)
            innov.append(meas.quad_vel[i] - self.quad_v[i])
            rdiag.append(np.full(3, cfg.r_quad_vel**2))

        H = np.vstack(rows)
        y = np.concatenate(innov)
        Rm = np.diag(np.concatenate(rdiag))
        S = H @ self.P @ H.T + Rm
        cond = np.linalg.cond(S)
        if not np.isfinite(cond) or cond > 1e12:
            self.updates_skipped += 1
            return False
        K = self.P @ H.T @ np.linalg.inv(S)
        delta = K @ y
        self.p += delta[0:3]
        self.v += delta[3:6]
        self.q = quat_normalize(quat_mul(self.q, quat_from_rotvec(delta[6:9])))
        self.w += delta[9:12]
        for i in range(n):
            qi = 12 + 6 * i
            self.quad_p[i] += delta[qi : qi + 3]
            self.quad_v[i] += delta[qi + 3 : qi + 6]
        IKH = np.eye(self.nerr) - K @ H
        self.P = IKH @ self.P @ IKH.T + K @ Rm @ K.T
        self.P = 0.5 * (self.P + self.P.T)
        return True


def _tangent_basis(s):
    """Orthonormal 3x2 basis of the plane perpendicular to unit vector s."""
    ref = np.array([0.0, 0.0, 1.0]) if abs(s[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    b1 = np.cross(s, ref)
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(s, b1)
    return np.stack([b1, b2], axis=-1)
