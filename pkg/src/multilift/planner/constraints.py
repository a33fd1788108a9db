"""Path-constraint residuals h(x, u) <= 0 and their exact Jacobians.

Row order per node: quadrotor thrust (squared-norm bounds, 2 per quad),
cable tension bounds (2 per quad), pairwise clearance (1 per pair), no-fly
zones (1 per zone and control point), input box (2 per input component).
Control points are the quadrotor CoGs and the cable attachment points on the
load.  Residuals are positive when violated.
"""

import numpy as np

from ..dynamics import (
    quad_position_jacobian,
    quad_positions,
    quad_thrust_sq_jacobian,
    quad_thrust_vectors,
)
from ..rotation import drotate_dq, rotate
from ..state import cable_base, input_dim, state_dim, unpack_state

GROUP_THRUST, GROUP_TENSION, GROUP_DISTANCE, GROUP_ZONE, GROUP_INPUT = range(5)


def constraint_layout(params, zones, u_abs_max):
    """Row metadata: total count and group id per row."""
    n = params.n
    n_pairs = n * (n - 1) // 2
    zones = [z for z in zones if z.active]
    n_points = 2 * n
    groups = (
        [GROUP_THRUST] * (2 * n)
        + [GROUP_TENSION] * (2 * n)
        + [GROUP_DISTANCE] * n_pairs
        + [GROUP_ZONE] * (len(zones) * n_points)
        + [GROUP_INPUT] * (2 * input_dim(n))
    )
    return np.array(groups, dtype=np.int64)


def control_points(x, params):
    """Quadrotor CoGs and load attachment points, (..., 2n, 3)."""
    n = params.n
    p, v, q, w, s, *_ = unpack_state(np.asarray(x, dtype=float), n)
    quads = quad_positions(x, params)
    attach = p[..., None, :] + rotate(q[..., None, :], np.broadcast_to(params.rho, s.shape))
    return np.concatenate([quads, attach], axis=-2)


def eval_constraints(x, u, zones, params, u_abs_max=400.0):
    """Stacked residual vector, batched over leading axes of x/u."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    n = params.n
    batch = x.shape[:-1]
    rows = []

    F = quad_thrust_vectors(x, params)
    T_sq = np.sum(F * F, axis=-1)
    rows.append(T_sq - params.thrust_max**2)
    rows.append(params.thrust_min**2 - T_sq)

    *_, t, td = unpack_state(x, n)
    rows.append(params.tension_min - t)
    rows.append(t - params.tension_max)

    pos = quad_positions(x, params)
    pair_rows = []
    for i in range(n):
        for j in range(i + 1, n):
            dij = pos[..., i, :] - pos[..., j, :]
            pair_rows.append(params.quad_clearance**2 - np.sum(dij * dij, axis=-1))
    if pair_rows:
        rows.append(np.stack(pair_rows, axis=-1))

    active = [z for z in zones if z.active]
    if active:
        pts = control_points(x, params)
        zrows = []
        for z in active:
            delta = pts - z.center
            dist_sq = np.sum(delta * delta * z.shape_diag, axis=-1)
            zrows.append(z.safe_distance**2 - dist_sq)
        rows.append(np.concatenate(zrows, axis=-1))

    rows.append(u - u_abs_max)
    rows.append(-u - u_abs_max)
    return np.concatenate([np.reshape(r, batch + (-1,)) for r in rows], axis=-1)


def linearize_constraints(x, u, zones, params, u_abs_max=400.0):
    """(h, Gx, Gu) with exact Jacobians, batched."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    n = params.n
    nx, nu = state_dim(n), input_dim(n)
    batch = x.shape[:-1]
    h = eval_constraints(x, u, zones, params, u_abs_max)
    nc = h.shape[-1]
    Gx = np.zeros(batch + (nc, nx))
    Gu = np.zeros(batch + (nc, nu))
    row = 0

    T_sq, Jt = quad_thrust_sq_jacobian(x, params)
    for i in range(n):
        Gx[..., row + i, :] = Jt[..., i, :]
        Gx[..., row + n + i, :] = -Jt[..., i, :]
    row += 2 * n

    for i in range(n):
        Gx[..., row + i, cable_base(i) + 12] = -1.0
        Gx[..., row + n + i, cable_base(i) + 12] = 1.0
    row += 2 * n

    pos = quad_positions(x, params)
    Jp = quad_position_jacobian(x, params)
    for i in range(n):
        for j in range(i + 1, n):
            dij = pos[..., i, :] - pos[..., j, :]
            dJ = Jp[..., i, :, :] - Jp[..., j, :, :]
            Gx[..., row, :] = -2.0 * np.einsum("...k,...kl->...l", dij, dJ)
            row += 1

    active = [z for z in zones if z.active]
    if active:
        p, v, q, w, s, *_ = unpack_state(x, n)
        pts = control_points(x, params)
        # attachment-point jacobians: identity in p, rotation block in q
        Ja = np.zeros(batch + (n, 3, nx))
        Ja[..., :, :, 0:3] = np.eye(3)
        for i in range(n):
            Ja[..., i, :, 6:10] = drotate_dq(q, params.rho[i])
        Jpts = np.concatenate([Jp, Ja], axis=-3)
        for z in active:
            delta = (pts - z.center) * z.shape_diag
            for c in range(2 * n):
                Gx[..., row, :] = -2.0 * np.einsum("...k,...kl->...l", delta[..., c, :], Jpts[..., c, :, :])
                row += 1

    iu = np.arange(nu)
    Gu[..., row + iu, iu] = 1.0
    row += nu
    Gu[..., row + iu, iu] = -1.0
    row += nu
    assert row == nc
    return h, Gx, Gu
