"""State containers and the canonical vector packing shared by all modules.

The whole-body state of the load-cable model stacks the load rigid-body state
with, per cable: unit direction (quadrotor -> load, world frame), the cable
angular velocity and its first two derivatives, tension and tension rate.
The planner input per cable is the snap of the cable direction dynamics and
the second tension derivative.

Vector layout (nx = 13 + 14 n):
    [p(3), v(3), q(4), w(3)] + per cable [s(3), r(3), rd(3), rdd(3), t, td]
Input layout (nu = 4 n): per cable [gamma(3), lam].
"""

from dataclasses import dataclass, field

import numpy as np

from .rotation import quat_normalize

LOAD_DIM = 13
CABLE_DIM = 14
INPUT_DIM = 4


def state_dim(n):
    return LOAD_DIM + CABLE_DIM * n


def input_dim(n):
    return INPUT_DIM * n


# offsets of the cable sub-blocks relative to the cable base index
OFF_S, OFF_R, OFF_RD, OFF_RDD, OFF_T, OFF_TD = 0, 3, 6, 9, 12, 13


def cable_base(i):
    return LOAD_DIM + CABLE_DIM * i


@dataclass
class LoadCableState:
    """Whole-body planner state: load pose/twist plus per-cable chain."""

    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    w: np.ndarray
    s: np.ndarray      # (n, 3) unit cable directions
    r: np.ndarray      # (n, 3) cable angular velocities
    rd: np.ndarray     # (n, 3)
    rdd: np.ndarray    # (n, 3)
    t: np.ndarray      # (n,) tensions, N
    td: np.ndarray     # (n,) tension rates, N/s

    @property
    def n(self):
        return self.s.shape[0]

    def to_vector(self):
        return pack_state(
            self.p, self.v, self.q, self.w, self.s, self.r, self.rd, self.rdd, self.t, self.td
        )

    @classmethod
    def from_vector(cls, x, n):
        return cls(*unpack_state(np.asarray(x, dtype=float), n))

    def copy(self):
        return LoadCableState.from_vector(self.to_vector(), self.n)

    def normalized(self):
        out = self.copy()
        out.q = quat_normalize(out.q)
        out.s = out.s / np.linalg.norm(out.s, axis=-1, keepdims=True)
        return out

    def validate(self, atol=1e-9):
        if abs(np.linalg.norm(self.q) - 1.0) > atol:
            raise ValueError("load quaternion is not unit norm")
        if np.any(np.abs(np.linalg.norm(self.s, axis=-1) - 1.0) > atol):
            raise ValueError("cable directions are not unit norm")
        if np.any(self.t < -atol):
            raise ValueError("negative cable tension")


def pack_state(p, v, q, w, s, r, rd, rdd, t, td):
    n = np.shape(s)[0]
    x = np.empty(state_dim(n))
    x[0:3], x[3:6], x[6:10], x[10:13] = p, v, q, w
    c = x[LOAD_DIM:].reshape(n, CABLE_DIM)
    c[:, OFF_S : OFF_S + 3] = s
    c[:, OFF_R : OFF_R + 3] = r
    c[:, OFF_RD : OFF_RD + 3] = rd
    c[:, OFF_RDD : OFF_RDD + 3] = rdd
    c[:, OFF_T] = t
    c[:, OFF_TD] = td
    return x


def unpack_state(x, n):
    c = x[..., LOAD_DIM:].reshape(x.shape[:-1] + (n, CABLE_DIM))
    return (
        x[..., 0:3],
        x[..., 3:6],
        x[..., 6:10],
        x[..., 10:13],
        c[..., OFF_S : OFF_S + 3],
        c[..., OFF_R : OFF_R + 3],
        c[..., OFF_RD : OFF_RD + 3],
        c[..., OFF_RDD : OFF_RDD + 3],
        c[..., OFF_T],
        c[..., OFF_TD],
    )


@dataclass
class PlannerInput:
    """Per-cable direction snap and tension second derivative."""

    gamma: np.ndarray  # (n, 3), rad/s^4
    lam: np.ndarray    # (n,), N/s^2

    def to_vector(self):
        n = self.gamma.shape[0]
        u = np.empty(input_dim(n))
        c = u.reshape(n, INPUT_DIM)
        c[:, 0:3] = self.gamma
        c[:, 3] = self.lam
        return u

    @classmethod
    def from_vector(cls, u, n):
        c = np.asarray(u, dtype=float).reshape(n, INPUT_DIM)
        return cls(gamma=c[:, 0:3].copy(), lam=c[:, 3].copy())

    @classmethod
    def zero(cls, n):
        return cls(gamma=np.zeros((n, 3)), lam=np.zeros(n))


def unpack_input(u, n):
    c = u[..., :].reshape(u.shape[:-1] + (n, INPUT_DIM))
    return c[..., 0:3], c[..., 3]


@dataclass
class QuadrotorState:
    """13-dim rigid-body state of a single vehicle."""

    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    w: np.ndarray

    def to_vector(self):
        return np.concatenate([self.p, self.v, self.q, self.w])

    @classmethod
    def from_vector(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(p=x[0:3].copy(), v=x[3:6].copy(), q=x[6:10].copy(), w=x[10:13].copy())

    def normalized(self):
        return QuadrotorState(self.p.copy(), self.v.copy(), quat_normalize(self.q), self.w.copy())


@dataclass
class FlatQuadRef:
    """Flat-output reference for one quadrotor at one instant."""

    t: float
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    jerk: np.ndarray
    thrust: float
    z_axis: np.ndarray
    omega_world: np.ndarray = field(default_factory=lambda: np.zeros(3))
