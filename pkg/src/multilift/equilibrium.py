"""Static equilibrium construction for symmetric attachment rings.

Used to initialize scenarios and as ground truth in fixed-point tests.  With
the quadrotors spread outward by a common cable tilt angle, the radial
tension components cancel pairwise and each cable carries
m g / (n cos(tilt)).
"""

import numpy as np

from .rotation import yaw_quat, rotate
from .state import pack_state

G_ABS = 9.81


def spread_tilt(params, quad_spacing):
    """Cable tilt (rad, from vertical) placing adjacent quadrotors ``quad_spacing`` apart."""
    n = params.n
    rho_r = float(np.linalg.norm(params.rho[0][:2]))
    ring = quad_spacing / (2.0 * np.sin(np.pi / n))
    offset = ring - rho_r
    if offset <= 0.0:
        return 0.0
    l = float(params.cable_length[0])
    if offset >= l:
        raise ValueError("requested spread exceeds cable length")
    return float(np.arcsin(offset / l))


def equilibrium_state(params, position=None, yaw=0.0, spread=0.0):
    """Packed whole-body state of a static hover, cables tilted by ``spread`` rad."""
    n = params.n
    p = np.zeros(3) if position is None else np.asarray(position, dtype=float)
    q = yaw_quat(yaw)
    radial_body = params.rho / np.linalg.norm(params.rho, axis=-1, keepdims=True)
    radial_world = rotate(q[None, :], radial_body)
    s = -np.sin(spread) * radial_world - np.cos(spread) * np.array([0.0, 0.0, 1.0])
    s /= np.linalg.norm(s, axis=-1, keepdims=True)
    t = params.load_mass * G_ABS / (n * np.cos(spread)) * np.ones(n)
    zeros3 = np.zeros((n, 3))
    return pack_state(
        p=p,
        v=np.zeros(3),
        q=q,
        w=np.zeros(3),
        s=s,
        r=zeros3,
        rd=zeros3.copy(),
        rdd=zeros3.copy(),
        t=t,
        td=np.zeros(n),
    )


def equilibrium_quad_thrusts(params, spread=0.0):
    """Per-quad (thrust magnitude, world z-axis) at the spread equilibrium."""
    n = params.n
    t = params.load_mass * G_ABS / (n * np.cos(spread))
    radial_body = params.rho / np.linalg.norm(params.rho, axis=-1, keepdims=True)
    s = -np.sin(spread) * radial_body - np.cos(spread) * np.array([0.0, 0.0, 1.0])
    F = -t * s + params.quad_mass[:, None] * G_ABS * np.array([0.0, 0.0, 1.0])
    T = np.linalg.norm(F, axis=-1)
    return T, F / T[:, None]
