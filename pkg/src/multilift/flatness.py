"""Load pose references and their expansion into whole-body planner references.

A load reference supplies position (with four time derivatives) and yaw (with
two).  Expansion distributes the reference wrench over the cables with the
minimum-2-norm solution of the stacked per-cable force map, then recovers the
cable-chain states (direction derivatives, tension derivatives) and the input
references by stencil differentiation in time.  Expanded references are cost
targets for the planner, not feasibility certificates.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError
from .rotation import cross3, hat, yaw_quat
from .state import input_dim, state_dim, cable_base, LOAD_DIM, CABLE_DIM

# C^4 smoothstep: zero value/1st..4th derivatives at 0, unit value at 1
_SMOOTH9 = np.array([70.0, -315.0, 540.0, -420.0, 126.0])  # x^9 .. x^5


def _smoothstep9(s):
    """C^4 step and its first four derivatives on [0, 1] (clamped outside)."""
    s = np.asarray(s, dtype=float)
    sc = np.clip(s, 0.0, 1.0)
    powers = np.array([9, 8, 7, 6, 5])
    val = np.zeros_like(sc)
    ders = [np.zeros_like(sc) for _ in range(4)]
    for c, p in zip(_SMOOTH9, powers):
        val += c * sc**p
        fac = float(p)
        term = c
        for d in range(4):
            term = term * (fac - d) if fac - d > 0 else 0.0
            ders[d] += term * sc ** max(p - d - 1, 0)
    inside = (s > 0.0) & (s < 1.0)
    for d in range(4):
        ders[d] = np.where(inside, ders[d], 0.0)
    val = np.where(s <= 0.0, 0.0, np.where(s >= 1.0, 1.0, val))
    return val, ders[0], ders[1], ders[2], ders[3]


def _quintic_warp(t, lead):
    """Time warp tau(t): zero speed/acceleration at t=0, unit speed after ``lead``.

    tau(lead) = lead/2 and tau(t) = t - lead/2 afterwards, so the warped clock
    lags the true clock by half the lead-in once up to speed.
    """
    t = np.asarray(t, dtype=float)
    T = lead
    # quintic with tau(0)=tau'(0)=tau''(0)=0, tau(T)=T/2, tau'(T)=1, tau''(T)=0
    a3 = 1.0 / T**2
    a4 = -1.0 / (2.0 * T**3)
    s = np.clip(t, 0.0, T)
    tau_in = a3 * s**3 + a4 * s**4
    d1_in = 3 * a3 * s**2 + 4 * a4 * s**3
    d2_in = 6 * a3 * s + 12 * a4 * s**2
    d3_in = 6 * a3 + 24 * a4 * s
    after = t > T
    tau = np.where(after, t - T / 2.0, tau_in)
    d1 = np.where(after, 1.0, d1_in)
    d2 = np.where(after, 0.0, d2_in)
    d3 = np.where(after, 0.0, d3_in)
    d4 = np.where(after, 0.0, np.full_like(d2_in, 24 * a4))
    before = t < 0.0
    tau = np.where(before, 0.0, tau)
    d1 = np.where(before, 0.0, d1)
    d2 = np.where(before, 0.0, d2)
    d3 = np.where(before, 0.0, d3)
    d4 = np.where(before, 0.0, d4)
    return tau, d1, d2, d3, d4


@dataclass
class FlatOutput:
    """Load flat output at a batch of times: position chain and yaw chain."""

    p: np.ndarray       # (..., 3)
    v: np.ndarray
    a: np.ndarray
    j: np.ndarray
    snap: np.ndarray
    yaw: np.ndarray     # (...,)
    yaw_rate: np.ndarray
    yaw_acc: np.ndarray


class LoadReference:
    """Base class; subclasses implement ``_eval_raw`` on the unwarped clock."""

    lead_in: float = 0.0

    def eval(self, t):
        t = np.asarray(t, dtype=float)
        if self.lead_in > 0.0:
            tau, d1, d2, d3, d4 = _quintic_warp(t, self.lead_in)
        else:
            tau, d1, d2, d3, d4 = t, np.ones_like(t), np.zeros_like(t), np.zeros_like(t), np.zeros_like(t)
        raw = self._eval_raw(tau)
        if self.lead_in <= 0.0:
            return raw
        # Faa di Bruno up to 4th order for p(tau(t)) and 2nd for yaw
        e1 = d1[..., None]
        e2 = d2[..., None]
        e3 = d3[..., None]
        e4 = d4[..., None]
        v = raw.v * e1
        a = raw.a * e1**2 + raw.v * e2
        j = raw.j * e1**3 + 3.0 * raw.a * e1 * e2 + raw.v * e3
        snap = (
            raw.snap * e1**4
            + 6.0 * raw.j * e1**2 * e2
            + raw.a * (3.0 * e2**2 + 4.0 * e1 * e3)
            + raw.v * e4
        )
        return FlatOutput(
            p=raw.p,
            v=v,
            a=a,
            j=j,
            snap=snap,
            yaw=raw.yaw,
            yaw_rate=raw.yaw_rate * d1,
            yaw_acc=raw.yaw_acc * d1**2 + raw.yaw_rate * d2,
        )


@dataclass
class Figure8Reference(LoadReference):
    """Lissajous figure-eight: [ax cos(wx t), ay sin(wy t), z0], yaw ramp."""

    amp: tuple = (2.5, 2.0)
    freq: tuple = (1.0, 2.0)
    height: float = 1.0
    yaw_rate: float = 0.25
    yaw0: float = 0.0
    lead_in: float = 0.0

    def _eval_raw(self, t):
        ax, ay = self.amp
        wx, wy = self.freq
        cx, sx = np.cos(wx * t), np.sin(wx * t)
        cy, sy = np.cos(wy * t), np.sin(wy * t)
        zeros = np.zeros_like(t)

        def comp(fx, fy):
            return np.stack([fx, fy, zeros], axis=-1)

        p = comp(ax * cx, ay * sy)
        p[..., 2] = self.height
        v = comp(-ax * wx * sx, ay * wy * cy)
        a = comp(-ax * wx**2 * cx, -ay * wy**2 * sy)
        j = comp(ax * wx**3 * sx, -ay * wy**3 * cy)
        snap = comp(ax * wx**4 * cx, ay * wy**4 * sy)
        return FlatOutput(
            p=p, v=v, a=a, j=j, snap=snap,
            yaw=self.yaw0 + self.yaw_rate * t,
            yaw_rate=np.full_like(t, self.yaw_rate),
            yaw_acc=zeros,
        )


TABLE_FIGURE8 = {
    "slow": dict(amp=(2.5, 2.0), freq=(0.25, 0.5)),
    "medium": dict(amp=(2.5, 2.0), freq=(0.5, 1.0)),
    "medium_plus": dict(amp=(1.0, 1.0), freq=(1.0, 2.0)),
    "fast": dict(amp=(2.5, 2.0), freq=(1.0, 2.0)),
}


def named_figure8(name, height=1.0, yaw_rate=0.25, lead_in=0.0):
    key = name.lower().replace(" ", "_")
    if key not in TABLE_FIGURE8:
        raise KeyError(f"unknown reference trajectory '{name}'")
    cfg = TABLE_FIGURE8[key]
    return Figure8Reference(
        amp=cfg["amp"], freq=cfg["freq"], height=height, yaw_rate=yaw_rate, lead_in=lead_in
    )


@dataclass
class SetpointReference(LoadReference):
    """Constant pose with all derivatives zero."""

    position: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    yaw: float = 0.0
    lead_in: float = 0.0

    def _eval_raw(self, t):
        zeros3 = np.zeros(np.shape(t) + (3,))
        p = zeros3 + np.asarray(self.position, dtype=float)
        z = np.zeros_like(np.asarray(t, dtype=float))
        return FlatOutput(p=p, v=zeros3, a=zeros3, j=zeros3, snap=zeros3,
                          yaw=z + self.yaw, yaw_rate=z, yaw_acc=z)


@dataclass
class SegmentReference(LoadReference):
    """Point-to-point pose change over a single C^4 polynomial segment.

    Starts after ``hold`` seconds of hover at the start pose; boundary
    velocity through snap are zero at both ends.
    """

    start: np.ndarray = field(default_factory=lambda: np.zeros(3))
    end: np.ndarray = field(default_factory=lambda: np.array([0.0, 6.0, 0.0]))
    yaw_start: float = 0.0
    yaw_end: float = 0.0
    duration: float = 4.0
    hold: float = 1.0
    lead_in: float = 0.0

    def _eval_raw(self, t):
        t = np.asarray(t, dtype=float)
        s = (t - self.hold) / self.duration
        val, d1, d2, d3, d4 = _smoothstep9(s)
        delta = np.asarray(self.end, dtype=float) - np.asarray(self.start, dtype=float)
        T = self.duration

        def chain(der, order):
            return der[..., None] * delta / T**order

        p = np.asarray(self.start, dtype=float) + val[..., None] * delta
        dyaw = self.yaw_end - self.yaw_start
        return FlatOutput(
            p=p,
            v=chain(d1, 1),
            a=chain(d2, 2),
            j=chain(d3, 3),
            snap=chain(d4, 4),
            yaw=self.yaw_start + val * dyaw,
            yaw_rate=d1 * dyaw / T,
            yaw_acc=d2 * dyaw / T**2,
        )


def fornberg_weights(x0, xs, max_order):
    """Finite-difference weights on arbitrary stencil xs for derivatives 0..max_order."""
    xs = np.asarray(xs, dtype=float)
    npts = len(xs)
    w = np.zeros((max_order + 1, npts))
    w[0, 0] = 1.0
    c1 = 1.0
    c4 = xs[0] - x0
    for i in range(1, npts):
        mn = min(i, max_order)
        c2 = 1.0
        c5 = c4
        c4 = xs[i] - x0
        for j in range(i):
            c3 = xs[i] - xs[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    w[k, i] = c1 * (k * w[k - 1, i - 1] - c5 * w[k, i - 1]) / c2
                w[0, i] = -c1 * c5 * w[0, i - 1] / c2
            for k in range(mn, 0, -1):
                w[k, j] = ((xs[i] - x0) * w[k, j] - k * w[k - 1, j]) / c3
            w[0, j] = (xs[i] - x0) * w[0, j] / c3
        c1 = c2
    return w


def allocate_cable_forces(R, rho, wrench):
    """Minimum-norm per-cable world forces realizing a load wrench.

    ``R`` (..., 3, 3) load attitude, ``rho`` (n, 3) attachments, ``wrench``
    (..., 6) stacked [world force; body torque].  Returns (..., n, 3) world
    force of each cable on the load.
    """
    n = rho.shape[0]
    batch = wrench.shape[:-1]
    A = np.zeros(batch + (6, 3 * n))
    Rt = np.swapaxes(R, -1, -2)
    for i in range(n):
        A[..., 0:3, 3 * i : 3 * i + 3] = np.eye(3)
        A[..., 3:6, 3 * i : 3 * i + 3] = np.einsum("ij,...jk->...ik", hat(rho[i]), Rt)
    sv = np.linalg.svd(A, compute_uv=False)
    if np.any(sv[..., -1] < 1e-10):
        raise GeometryError("cable force allocation map is rank deficient")
    W = np.einsum("...ij,...j->...i", np.linalg.pinv(A), wrench)
    return W.reshape(batch + (n, 3))


def expand_reference(ref, params, times, stencil_h=5e-3):
    """Whole-body state and input references on a time grid.

    Returns (x_ref (m, nx), u_ref (m, nu)).  Reference tensions and cable
    directions are taken from the minimum-norm wrench allocation at each
    stencil time; the cable-chain derivatives and the inputs come from
    Fornberg differentiation of those smooth samples.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    m = times.shape[0]
    n = params.n
    offsets = np.arange(-4, 5)
    stencil = times[:, None] + stencil_h * offsets[None, :]
    flat = ref.eval(stencil)  # batch (m, 9)

    q = yaw_quat(flat.yaw)
    from .rotation import quat_to_rot

    R = quat_to_rot(q)
    w_body = np.stack(
        [np.zeros_like(flat.yaw), np.zeros_like(flat.yaw), flat.yaw_rate], axis=-1
    )
    wdot_body = np.stack(
        [np.zeros_like(flat.yaw), np.zeros_like(flat.yaw), flat.yaw_acc], axis=-1
    )
    J = params.load_inertia
    Jw = np.einsum("ij,...j->...i", J, w_body)
    force = params.load_mass * (flat.a - params.gravity)
    torque = np.einsum("ij,...j->...i", J, wdot_body) + cross3(w_body, Jw)
    wrench = np.concatenate([force, torque], axis=-1)
    Wf = allocate_cable_forces(R, params.rho, wrench)  # (m, 9, n, 3)

    t_mag = np.linalg.norm(Wf, axis=-1)
    t_mag = np.maximum(t_mag, 1e-9)
    s_dir = -Wf / t_mag[..., None]

    wts = fornberg_weights(0.0, stencil_h * offsets, 4)

    def der(arr, order):
        return np.tensordot(wts[order], arr, axes=(0, 1))

    s0 = s_dir[:, 4]
    s1 = der(s_dir, 1)
    s2 = der(s_dir, 2)
    s3 = der(s_dir, 3)
    s4 = der(s_dir, 4)
    t0 = t_mag[:, 4]
    t1 = der(t_mag, 1)
    t2 = der(t_mag, 2)

    r = cross3(s0, s1)
    rd = cross3(s0, s2)
    rdd = cross3(s1, s2) + cross3(s0, s3)
    gamma = 2.0 * cross3(s1, s3) + cross3(s0, s4)

    x_ref = np.zeros((m, state_dim(n)))
    x_ref[:, 0:3] = flat.p[:, 4]
    x_ref[:, 3:6] = flat.v[:, 4]
    x_ref[:, 6:10] = q[:, 4]
    x_ref[:, 10:13] = w_body[:, 4]
    for i in range(n):
        base = cable_base(i)
        x_ref[:, base : base + 3] = s0[:, i]
        x_ref[:, base + 3 : base + 6] = r[:, i]
        x_ref[:, base + 6 : base + 9] = rd[:, i]
        x_ref[:, base + 9 : base + 12] = rdd[:, i]
        x_ref[:, base + 12] = t0[:, i]
        x_ref[:, base + 13] = t1[:, i]

    u_ref = np.zeros((m, input_dim(n)))
    for i in range(n):
        u_ref[:, 4 * i : 4 * i + 3] = gamma[:, i]
        u_ref[:, 4 * i + 3] = t2[:, i]
    return x_ref, u_ref
