"""Quaternion and rotation utilities.

Convention used everywhere in this package: quaternions are scalar-first
``[w, x, y, z]`` and map body-frame vectors into the world frame,
``v_world = R(q) v_body``.  All functions broadcast over leading axes so the
planner can evaluate whole trajectories at once.
"""

import numpy as np


def cross3(a, b):
    """Cross product on the last axis; avoids np.cross's axis shuffling."""
    a = np.asarray(a)
    b = np.asarray(b)
    out = np.empty(np.broadcast(a[..., 0], b[..., 0]).shape + (3,))
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    out[..., 0] = a1 * b2 - a2 * b1
    out[..., 1] = a2 * b0 - a0 * b2
    out[..., 2] = a0 * b1 - a1 * b0
    return out


def hat(v):
    """Skew-symmetric matrix such that hat(a) @ b == cross(a, b)."""
    v = np.asarray(v)
    out = np.zeros(v.shape[:-1] + (3, 3), dtype=v.dtype)
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def quat_normalize(q):
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_conj(q):
    out = np.array(q, copy=True)
    out[..., 1:] *= -1.0
    return out


def quat_mul(q1, q2):
    """Hamilton product q1 ⊗ q2."""
    w1, x1, y1, z1 = (q1[..., i] for i in range(4))
    w2, x2, y2, z2 = (q2[..., i] for i in range(4))
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def quat_left(q):
    """Matrix L(q) with L(q) @ p == quat_mul(q, p)."""
    w, x, y, z = (q[..., i] for i in range(4))
    rows = [
        [w, -x, -y, -z],
        [x, w, -z, y],
        [y, z, w, -x],
        [z, -y, x, w],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def quat_right(p):
    """Matrix Rm(p) with Rm(p) @ q == quat_mul(q, p)."""
    w, x, y, z = (p[..., i] for i in range(4))
    rows = [
        [w, -x, -y, -z],
        [x, w, z, -y],
        [y, -z, w, x],
        [z, y, -x, w],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def quat_to_rot(q):
    """Rotation matrix of a unit quaternion (world <- body)."""
    w, x, y, z = (q[..., i] for i in range(4))
    xx, yy, zz = x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    rows = [
        [1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy)],
        [2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx)],
        [2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy)],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def rot_to_quat(R):
    """Unit quaternion of a rotation matrix (scalar part >= 0)."""
    R = np.asarray(R)
    t = np.trace(R)
    if t > 0:
        w = 0.5 * np.sqrt(1.0 + t)
        s = 0.25 / w
        q = np.array(
            [w, s * (R[2, 1] - R[1, 2]), s * (R[0, 2] - R[2, 0]), s * (R[1, 0] - R[0, 1])]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        r = np.sqrt(1.0 + R[i, i] - R[j, j] - R[k, k])
        s = 0.5 / r
        q = np.empty(4)
        q[0] = s * (R[k, j] - R[j, k])
        q[1 + i] = 0.5 * r
        q[1 + j] = s * (R[j, i] + R[i, j])
        q[1 + k] = s * (R[k, i] + R[i, k])
    if q[0] < 0:
        q = -q
    return quat_normalize(q)


def rotate(q, v):
    """Apply R(q) to v without forming the matrix."""
    qv = q[..., 1:]
    qw = q[..., :1]
    t = 2.0 * cross3(qv, v)
    return v + qw * t + cross3(qv, t)


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n < 1e-15:
        return np.array([1.0, 0.0, 0.0, 0.0])
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis / n])


def quat_from_rotvec(rv):
    """Exponential map: rotation vector -> quaternion (broadcasts)."""
    rv = np.asarray(rv, dtype=float)
    angle = np.linalg.norm(rv, axis=-1, keepdims=True)
    small = angle < 1e-12
    half = 0.5 * angle
    with np.errstate(invalid="ignore", divide="ignore"):
        sc = np.where(small, 0.5, np.sin(half) / np.where(small, 1.0, angle))
    return np.concatenate([np.cos(half), sc * rv], axis=-1)


def quat_to_rotvec(q):
    """Logarithmic map: quaternion -> rotation vector (angle in [0, pi])."""
    q = np.asarray(q, dtype=float)
    q = np.where(q[..., :1] < 0, -q, q)
    vec = q[..., 1:]
    sin_half = np.linalg.norm(vec, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(sin_half[..., 0], q[..., 0])[..., None]
    small = sin_half < 1e-12
    with np.errstate(invalid="ignore", divide="ignore"):
        sc = np.where(small, 2.0, angle / np.where(small, 1.0, sin_half))
    return sc * vec


def quat_angle(q1, q2):
    """Angle of the relative rotation between two quaternions, in radians."""
    dq = quat_mul(quat_conj(q1), q2)
    w = np.clip(np.abs(dq[..., 0]), -1.0, 1.0)
    return 2.0 * np.arccos(w)


def quat_error_vec(q_ref, q):
    """Vector part of q_ref^-1 ⊗ q, sign-picked so the scalar part is >= 0.

    This is the 3-dim attitude error used in tracking costs; it vanishes iff
    q == ±q_ref.
    """
    e = quat_mul(quat_conj(q_ref), q)
    sign = np.where(e[..., :1] < 0, -1.0, 1.0)
    return sign * e[..., 1:]


def drotate_dq(q, v):
    """Jacobian of ``rotate(q, v)`` with respect to the free 4-vector q.

    Shape (..., 3, 4).  Uses the same off-manifold extension as ``rotate``
    and ``quat_to_rot``, namely
    f(q) = (1 - 2 qv.qv) v + 2 (qv.v) qv + 2 qw (qv x v),
    so it matches finite differences of the code paths it linearizes.
    """
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    qw = q[..., 0]
    qv = q[..., 1:]
    d_qw = 2.0 * cross3(qv, v)
    I = np.eye(3)
    qv_dot_v = np.sum(qv * v, axis=-1)[..., None, None]
    d_qv = (
        -4.0 * v[..., :, None] * qv[..., None, :]
        + 2.0 * qv_dot_v * I
        + 2.0 * qv[..., :, None] * v[..., None, :]
        - 2.0 * qw[..., None, None] * hat(v)
    )
    return np.concatenate([d_qw[..., :, None], d_qv], axis=-1)


def drotate_T_dq(q, v):
    """Jacobian of R(q)^T v with respect to q, shape (..., 3, 4)."""
    J = drotate_dq(quat_conj(q), v)
    J = np.array(J, copy=True)
    J[..., 1:] *= -1.0
    return J


def dnormalize(v):
    """Jacobian of v / ||v||, shape (..., m, m)."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    u = v / n
    m = v.shape[-1]
    return (np.eye(m) - u[..., :, None] * u[..., None, :]) / n[..., None]


def yaw_quat(yaw):
    """Quaternion for a pure rotation about the world z axis (broadcasts)."""
    yaw = np.asarray(yaw, dtype=float)
    half = 0.5 * yaw
    z = np.zeros_like(half)
    return np.stack([np.cos(half), z, z, np.sin(half)], axis=-1)
