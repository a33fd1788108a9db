"""Continuous-time models of the load-cable system and the quadrotors.

All functions operate on packed state vectors (see ``state``) and broadcast
over leading axes, so the planner can evaluate a whole shooting grid in one
call.  The load translational dynamics are driven purely by cable tensions
and gravity; the load rotational dynamics by the cable moments about the
attachment points.  Each cable contributes a kinematic chain
s -> r -> rd -> rdd (direction / angular velocity and derivatives) and
t -> td (tension), closed by the planner inputs (gamma, lam).

Jacobians are hand-derived and exact; the test suite checks every block
against central finite differences.
"""

import numpy as np

from .errors import ModelEvaluationError, SingularReferenceError
from .rotation import (
    cross3,
    drotate_dq,
    drotate_T_dq,
    hat,
    quat_left,
    quat_right,
    quat_to_rot,
    rotate,
    quat_conj,
)
from .state import (
    CABLE_DIM,
    LOAD_DIM,
    OFF_R,
    OFF_RD,
    OFF_RDD,
    OFF_S,
    OFF_T,
    OFF_TD,
    cable_base,
    input_dim,
    state_dim,
    unpack_input,
    unpack_state,
)

E3 = np.array([0.0, 0.0, 1.0])


def _omega_quat(w):
    zero = np.zeros(w.shape[:-1] + (1,))
    return np.concatenate([zero, w], axis=-1)


def load_cable_derivative(x, u, params, check=True):
    """Time derivative of the packed load-cable state.

    Broadcasts over leading axes of ``x``/``u``.  With ``check`` the inputs
    are screened for non-finite entries (raises ModelEvaluationError).
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if check and not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise ModelEvaluationError("non-finite state or input")
    n = params.n
    p, v, q, w, s, r, rd, rdd, t, td = unpack_state(x, n)
    gamma, lam = unpack_input(u, n)

    inv_m = 1.0 / params.load_mass
    vdot = params.gravity - inv_m * np.sum(t[..., None] * s, axis=-2)
    qdot = 0.5 * np.einsum("...ij,...j->...i", quat_left(q), _omega_quat(w))

    b = rotate(quat_conj(q)[..., None, :], s)  # R(q)^T s_i, per cable
    torque = np.sum(t[..., None] * cross3(b, params.rho), axis=-2)
    Jw = np.einsum("ij,...j->...i", params.load_inertia, w)
    wdot = np.einsum(
        "ij,...j->...i", params.load_inertia_inv, -cross3(w, Jw) + torque
    )

    xdot = np.empty_like(x)
    xdot[..., 0:3] = v
    xdot[..., 3:6] = vdot
    xdot[..., 6:10] = qdot
    xdot[..., 10:13] = wdot
    c = xdot[..., LOAD_DIM:].reshape(x.shape[:-1] + (n, CABLE_DIM))
    c[..., OFF_S : OFF_S + 3] = cross3(r, s)
    c[..., OFF_R : OFF_R + 3] = rd
    c[..., OFF_RD : OFF_RD + 3] = rdd
    c[..., OFF_RDD : OFF_RDD + 3] = gamma
    c[..., OFF_T] = td
    c[..., OFF_TD] = lam
    return xdot


def load_accel_jacobians(x, params):
    """Jacobians of the load accelerations w.r.t. the packed state.

    Returns (dvdot_dx, dwdot_dx), each (..., 3, nx).  Shared by the dynamics
    Jacobian and the planner constraint linearization.
    """
    x = np.asarray(x, dtype=float)
    n = params.n
    nx = state_dim(n)
    p, v, q, w, s, r, rd, rdd, t, td = unpack_state(x, n)
    batch = x.shape[:-1]
    Jinv = params.load_inertia_inv
    J = params.load_inertia
    inv_m = 1.0 / params.load_mass

    dvdot = np.zeros(batch + (3, nx))
    dwdot = np.zeros(batch + (3, nx))

    qc = quat_conj(q)
    b = rotate(qc[..., None, :], s)
    Jw = np.einsum("ij,...j->...i", J, w)
    # d(-w x Jw)/dw = hat(Jw) - hat(w) J
    dwdot[..., :, 10:13] = np.einsum(
        "ij,...jk->...ik", Jinv, hat(Jw) - np.einsum("...ij,jk->...ik", hat(w), J)
    )
    dtorque_dq = np.zeros(batch + (3, 4))
    for i in range(n):
        base = cable_base(i)
        S = slice(base + OFF_S, base + OFF_S + 3)
        T = base + OFF_T
        dvdot[..., :, S] = -inv_m * t[..., i, None, None] * np.eye(3)
        dvdot[..., :, T] = -inv_m * s[..., i, :]
        rho_hat = hat(params.rho[i])
        db_dq = drotate_T_dq(q, s[..., i, :])
        dtorque_dq += -t[..., i, None, None] * np.einsum("ij,...jk->...ik", rho_hat, db_dq)
        Rt = np.swapaxes(quat_to_rot(q), -1, -2)
        dwdot[..., :, S] = np.einsum(
            "ij,...jk->...ik", Jinv, -t[..., i, None, None] * np.einsum("ij,...jk->...ik", rho_hat, Rt)
        )
        dwdot[..., :, T] = np.einsum("ij,...j->...i", Jinv, cross3(b[..., i, :], params.rho[i]))
    dwdot[..., :, 6:10] = np.einsum("ij,...jk->...ik", Jinv, dtorque_dq)
    return dvdot, dwdot


def load_cable_jacobians(x, u, params):
    """Exact Jacobians (fx, fu) of ``load_cable_derivative`` (broadcasts)."""
    x = np.asarray(x, dtype=float)
    n = params.n
    nx, nu = state_dim(n), input_dim(n)
    batch = x.shape[:-1]
    p, v, q, w, s, r, rd, rdd, t, td = unpack_state(x, n)

    fx = np.zeros(batch + (nx, nx))
    fu = np.zeros(batch + (nx, nu))
    I3 = np.eye(3)

    fx[..., 0:3, 3:6] = I3
    dvdot, dwdot = load_accel_jacobians(x, params)
    fx[..., 3:6, :] = dvdot
    fx[..., 10:13, :] = dwdot
    fx[..., 6:10, 6:10] = 0.5 * quat_right(_omega_quat(w))
    fx[..., 6:10, 10:13] = 0.5 * quat_left(q)[..., :, 1:]

    for i in range(n):
        base = cable_base(i)
        S = slice(base + OFF_S, base + OFF_S + 3)
        R_ = slice(base + OFF_R, base + OFF_R + 3)
        RD = slice(base + OFF_RD, base + OFF_RD + 3)
        RDD = slice(base + OFF_RDD, base + OFF_RDD + 3)
        fx[..., S, S] = hat(r[..., i, :])
        fx[..., S, R_] = -hat(s[..., i, :])
        fx[..., R_, RD] = I3
        fx[..., RD, RDD] = I3
        fx[..., base + OFF_T, base + OFF_TD] = 1.0
        ub = 4 * i
        fu[..., RDD, ub : ub + 3] = I3
        fu[..., base + OFF_TD, ub + 3] = 1.0
    return fx, fu


def load_accel_rate(x, params):
    """Second derivatives of the load twist: (vddot, wddot).

    These follow from differentiating the load dynamics once and only involve
    states (the planner inputs enter at the next derivative level), which is
    what makes the per-quadrotor jerk a pure state function.
    """
    n = params.n
    p, v, q, w, s, r, rd, rdd, t, td = unpack_state(np.asarray(x, dtype=float), n)
    inv_m = 1.0 / params.load_mass
    J, Jinv = params.load_inertia, params.load_inertia_inv

    sdot = cross3(r, s)
    vddot = -inv_m * np.sum(td[..., None] * s + t[..., None] * sdot, axis=-2)

    qc = quat_conj(q)
    b = rotate(qc[..., None, :], s)
    torque = np.sum(t[..., None] * cross3(b, params.rho), axis=-2)
    Jw = np.einsum("ij,...j->...i", J, w)
    wdot = np.einsum("ij,...j->...i", Jinv, -cross3(w, Jw) + torque)

    bdot = -cross3(w[..., None, :], b) + rotate(qc[..., None, :], sdot)
    force_rate = td[..., None] * b + t[..., None] * bdot
    torque_rate = np.sum(cross3(force_rate, params.rho), axis=-2)
    Jwdot = np.einsum("ij,...j->...i", J, wdot)
    wddot = np.einsum(
        "ij,...j->...i",
        Jinv,
        -cross3(wdot, Jw) - cross3(w, Jwdot) + torque_rate,
    )
    return vddot, wddot


def load_accels(x, params):
    """First derivatives of the load twist: (vdot, wdot)."""
    n = params.n
    p, v, q, w, s, r, rd, rdd, t, td = unpack_state(np.asarray(x, dtype=float), n)
    inv_m = 1.0 / params.load_mass
    vdot = params.gravity - inv_m * np.sum(t[..., None] * s, axis=-2)
    qc = quat_conj(q)
    b = rotate(qc[..., None, :], s)
    torque = np.sum(t[..., None] * cross3(b, params.rho), axis=-2)
    Jw = np.einsum("ij,...j->...i", params.load_inertia, w)
    wdot = np.einsum("ij,...j->...i", params.load_inertia_inv, -cross3(w, Jw) + torque)
    return vdot, wdot


def quad_positions(x, params):
    """Quadrotor CoG positions implied by the taut-cable constraint, (..., n, 3)."""
    n = params.n
    p, v, q, w, s, *_ = unpack_state(np.asarray(x, dtype=float), n)
    rho_w = rotate(q[..., None, :], np.broadcast_to(params.rho, s.shape))
    return p[..., None, :] + rho_w - params.cable_length[:, None] * s


def quad_kinematics(x, params):
    """Position, velocity, acceleration and jerk of every quadrotor.

    Returns four arrays (..., n, 3).  Everything is a closed-form function of
    the whole-body state; with piecewise-constant bounded inputs the jerk is
    continuous because it only reads states up to (rdd, td).
    """
    x = np.asarray(x, dtype=float)
    n = params.n
    p, v, q, w, s, r, rd, rdd, t, td = unpack_state(x, n)
    rho = np.broadcast_to(params.rho, s.shape)
    l = params.cable_length[:, None]
    q_b = q[..., None, :]

    vdot, wdot = load_accels(x, params)
    vddot, wddot = load_accel_rate(x, params)
    w_b = w[..., None, :]
    wdot_b = wdot[..., None, :]
    wddot_b = wddot[..., None, :]

    pos = p[..., None, :] + rotate(q_b, rho) - l * s
    vel = v[..., None, :] + rotate(q_b, cross3(w_b, rho)) - l * cross3(r, s)

    c2 = cross3(wdot_b, rho) + cross3(w_b, cross3(w_b, rho))
    sddot = cross3(rd, s) + cross3(r, cross3(r, s))
    acc = vdot[..., None, :] + rotate(q_b, c2) - l * sddot

    c3 = (
        cross3(w_b, c2)
        + cross3(wddot_b, rho)
        + cross3(wdot_b, cross3(w_b, rho))
        + cross3(w_b, cross3(wdot_b, rho))
    )
    s3 = (
        cross3(rdd, s)
        + 2.0 * cross3(rd, cross3(r, s))
        + cross3(r, cross3(rd, s))
        + cross3(r, cross3(r, cross3(r, s)))
    )
    jerk = vddot[..., None, :] + rotate(q_b, c3) - l * s3
    return pos, vel, acc, jerk


def quad_thrust_vectors(x, params):
    """Required thrust vector of each quadrotor, (..., n, 3).

    F_i = m_i (a_i - g) - t_i s_i, with a_i the cable-consistent quadrotor
    acceleration.  Drag is deliberately not modeled on the planner side.
    """
    n = params.n
    p, v, q, w, s, r, rd, rdd, t, td = unpack_state(np.asarray(x, dtype=float), n)
    _, _, acc, _ = quad_kinematics(x, params)
    m_i = params.quad_mass[:, None]
    return m_i * (acc - params.gravity) - t[..., None] * s


def quad_thrust(x, params, eps=1e-9):
    """(T_i, z_i) for every quadrotor; raises on a singular (zero-force) reference."""
    F = quad_thrust_vectors(x, params)
    T = np.linalg.norm(F, axis=-1)
    if np.any(T <= eps):
        raise SingularReferenceError("required specific force is zero; thrust direction undefined")
    return T, F / T[..., None]


def quad_rate_refs(x, params, eps=1e-9):
    """World-frame angular-velocity reference of each quadrotor, (..., n, 3).

    Zero-drag, zero-yaw-rate form: the rotation rate of the thrust direction
    needed to realize the jerk, perpendicular to z_i by construction.
    """
    x = np.asarray(x, dtype=float)
    n = params.n
    p, v, q, w, s, r, rd, rdd, t, td = unpack_state(x, n)
    _, _, _, jerk = quad_kinematics(x, params)
    T, z = quad_thrust(x, params, eps)
    m_i = params.quad_mass[:, None]
    h = m_i * jerk - td[..., None] * s - t[..., None] * cross3(r, s)
    return cross3(z, h) / T[..., None]


def quad_position_jacobian(x, params):
    """d(quad positions)/dx, shape (..., n, 3, nx)."""
    x = np.asarray(x, dtype=float)
    n = params.n
    nx = state_dim(n)
    p, v, q, w, s, *_ = unpack_state(x, n)
    batch = x.shape[:-1]
    Jp = np.zeros(batch + (n, 3, nx))
    Jp[..., :, :, 0:3] = np.eye(3)
    for i in range(n):
        base = cable_base(i)
        Jp[..., i, :, 6:10] = drotate_dq(q, params.rho[i])
        Jp[..., i, :, base + OFF_S : base + OFF_S + 3] = -params.cable_length[i] * np.eye(3)
    return Jp


def quad_acceleration_jacobian(x, params):
    """d(quad accelerations)/dx, shape (..., n, 3, nx)."""
    x = np.asarray(x, dtype=float)
    n = params.n
    nx = state_dim(n)
    p, v, q, w, s, r, rd, rdd, t, td = unpack_state(x, n)
    batch = x.shape[:-1]
    dvdot, dwdot = load_accel_jacobians(x, params)
    _, wdot = load_accels(x, params)
    R = quat_to_rot(q)
    Ja = np.zeros(batch + (n, 3, nx))
    for i in range(n):
        base = cable_base(i)
        rho = params.rho[i]
        l = params.cable_length[i]
        si, ri, rdi = s[..., i, :], r[..., i, :], rd[..., i, :]

        c2 = cross3(wdot, rho) + cross3(w, cross3(w, rho))
        Ji = dvdot.copy()
        # R(q) c2 through q (direct) and through wdot(x)
        Ji[..., :, 6:10] += drotate_dq(q, c2)
        R_rho_hat = -np.einsum("...ij,jk->...ik", R, hat(rho))
        Ji += np.einsum("...ij,...jk->...ik", R_rho_hat, dwdot)
        # direct w dependence of w x (w x rho)
        dw_direct = -hat(cross3(w, rho)) - np.einsum("...ij,jk->...ik", hat(w), hat(rho))
        Ji[..., :, 10:13] += np.einsum("...ij,...jk->...ik", R, dw_direct)
        # cable terms: -(l) d(rd x s + r x (r x s))
        S = slice(base + OFF_S, base + OFF_S + 3)
        R_ = slice(base + OFF_R, base + OFF_R + 3)
        RD = slice(base + OFF_RD, base + OFF_RD + 3)
        Ji[..., :, S] += -l * (hat(rdi) + np.einsum("...ij,...jk->...ik", hat(ri), hat(ri)))
        Ji[..., :, R_] += -l * (
            -hat(cross3(ri, si)) - np.einsum("...ij,...jk->...ik", hat(ri), hat(si))
        )
        Ji[..., :, RD] += -l * (-hat(si))
        Ja[..., i, :, :] = Ji
    return Ja


def quad_thrust_sq_jacobian(x, params):
    """Squared thrust magnitudes and their state Jacobians.

    Returns (T_sq (..., n), J (..., n, nx)).  The squared form keeps the
    constraint smooth when the force passes near zero.
    """
    x = np.asarray(x, dtype=float)
    n = params.n
    p, v, q, w, s, r, rd, rdd, t, td = unpack_state(x, n)
    F = quad_thrust_vectors(x, params)
    Ja = quad_acceleration_jacobian(x, params)
    T_sq = np.sum(F * F, axis=-1)
    batch = x.shape[:-1]
    nx = state_dim(n)
    Jt = np.zeros(batch + (n, nx))
    for i in range(n):
        base = cable_base(i)
        m_i = params.quad_mass[i]
        dF = m_i * Ja[..., i, :, :]
        S = slice(base + OFF_S, base + OFF_S + 3)
        dF[..., :, S] += -t[..., i, None, None] * np.eye(3)
        dF[..., :, base + OFF_T] += -s[..., i, :]
        Jt[..., i, :] = 2.0 * np.einsum("...j,...jk->...k", F[..., i, :], dF)
    return T_sq, Jt


def quadrotor_derivative(xq, thrust, torque, tension, s_dir, wind, params, i=0, check=True):
    """Rigid-body derivative of one quadrotor under thrust, cable pull and drag.

    ``xq`` is the packed 13-vector [p, v, q, w].  The cable force on the
    vehicle is +tension * s_dir (it is pulled toward the load).  Aerodynamic
    torque is neglected; drag follows the rotated linear model against the
    wind-relative velocity.
    """
    xq = np.asarray(xq, dtype=float)
    if check:
        vals = np.concatenate([xq, np.atleast_1d(thrust), np.asarray(torque, dtype=float)])
        if not np.all(np.isfinite(vals)):
            raise ModelEvaluationError("non-finite quadrotor state or input")
    p, v, q, w = xq[0:3], xq[3:6], xq[6:10], xq[10:13]
    R = quat_to_rot(q)
    z = R[:, 2]
    f_a = quad_drag_force(q, v, wind, params)
    m_i = params.quad_mass[i]
    vdot = (thrust * z + tension * np.asarray(s_dir) + f_a) / m_i + params.gravity
    qdot = 0.5 * quat_left(q) @ np.concatenate([[0.0], w])
    J_i = params.quad_inertia
    wdot = np.linalg.solve(J_i, -cross3(w, J_i @ w) + np.asarray(torque))
    return np.concatenate([v, vdot, qdot, wdot])


def quad_drag_force(q, v, wind, params):
    """Rotated linear drag model f_a = R D R^T (wind - v); broadcasts."""
    rel = np.asarray(wind, dtype=float) - np.asarray(v, dtype=float)
    R = quat_to_rot(np.asarray(q, dtype=float))
    body = np.einsum("...ji,...j->...i", R, rel)       # into body frame
    drag_body = np.einsum("ij,...j->...i", params.quad_drag, body)
    return np.einsum("...ij,...j->...i", R, drag_body)  # back to world
