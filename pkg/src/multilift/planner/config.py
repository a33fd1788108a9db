"""Planner configuration: horizon grid, weights, bounds, penalties."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..state import CABLE_DIM, LOAD_DIM, cable_base, input_dim, state_dim


@dataclass
class NoFlyZone:
    """Ellipsoidal / cylindrical keep-out region.

    Shape matrix is diagonal; a zero entry extends the zone to infinity along
    that axis (vertical walls use diag(1,1,0)).  ``safe_distance`` of zero
    disables the zone.
    """

    center: np.ndarray
    shape_diag: np.ndarray
    safe_distance: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.shape_diag = np.asarray(self.shape_diag, dtype=float)
        if self.safe_distance < 0:
            raise ConfigError("safe_distance must be >= 0")
        if np.any(self.shape_diag < 0) or (self.safe_distance > 0 and not np.any(self.shape_diag > 0)):
            raise ConfigError("shape_diag needs nonnegative entries, at least one positive")

    @property
    def active(self):
        return self.safe_distance > 0.0


def vertical_cylinder(center_xy, radius):
    return NoFlyZone(center=[center_xy[0], center_xy[1], 0.0], shape_diag=[1.0, 1.0, 0.0],
                     safe_distance=radius)


def horizontal_cylinder_x(center_yz, radius):
    """Cylinder with its axis along world x."""
    return NoFlyZone(center=[0.0, center_yz[0], center_yz[1]], shape_diag=[0.0, 1.0, 1.0],
                     safe_distance=radius)


# default diagonal state weights, by block
STATE_WEIGHTS = dict(
    position=100.0,
    velocity=10.0,
    attitude=50.0,   # on the 3-dim quaternion error
    omega=5.0,
    cable=0.1,       # s, r, rd, rdd components
    tension=0.01,    # t and td
)
INPUT_WEIGHTS = dict(gamma=1e-3, lam=1e-3)


@dataclass
class OcpConfig:
    """Finite-horizon OCP setup; defaults follow the published problem sizes."""

    N: int = 20
    horizon: float = 2.0
    sqp_iters_per_call: int = 1          # real-time iteration
    shoot_substeps: int = 2
    state_weights: dict = field(default_factory=lambda: dict(STATE_WEIGHTS))
    input_weights: dict = field(default_factory=lambda: dict(INPUT_WEIGHTS))
    terminal_scale: float = 5.0
    slack_l1: float = 1e4
    slack_l2: float = 1e2
    # per-group multipliers on the slack weights (thrust, tension, distance,
    # zone, input); lets a scenario harden the constraints that matter most
    slack_group_scale: dict = field(
        default_factory=lambda: dict(thrust=1.0, tension=1.0, distance=1.0, zone=1.0, input=1.0)
    )
    u_abs_max: float = 400.0             # per component of gamma and lam
    step_x_max: float = 10.0             # trust region on the SQP state step
    zone_margin: float = 0.1             # planner-side inflation of no-fly zones, m
    clearance_margin: float = 0.05       # planner-side inflation of d_min, m
    qp_tol: float = 1e-6
    qp_max_iter: int = 50
    line_search: bool = False            # enabled by batch-mode solving
    merit_dyn_weight: float = 1e6
    reg: float = 1e-8                    # Tikhonov on the QP diagonal

    def __post_init__(self):
        if self.N < 2:
            raise ConfigError("need at least two shooting intervals")
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")

    def make_grid(self):
        """Linearly increasing interval lengths summing exactly to the horizon.

        dt_k = dt_0 + k * delta with dt_0 = horizon / (2N) and
        delta = horizon / (N (N - 1)).
        """
        N = self.N
        dt0 = self.horizon / (2.0 * N)
        delta = self.horizon / (N * (N - 1.0))
        return dt0 + delta * np.arange(N)

    def state_weight_vec(self, n):
        """Diagonal weights over the error-state layout (3-dim attitude error)."""
        w = np.zeros(state_dim(n) - 1)  # quaternion contributes 3, not 4
        w[0:3] = self.state_weights["position"]
        w[3:6] = self.state_weights["velocity"]
        w[6:9] = self.state_weights["attitude"]
        w[9:12] = self.state_weights["omega"]
        for i in range(n):
            b = 12 + CABLE_DIM * i
            w[b : b + 12] = self.state_weights["cable"]
            w[b + 12 : b + 14] = self.state_weights["tension"]
        return w

    def input_weight_vec(self, n):
        w = np.zeros(input_dim(n))
        for i in range(n):
            w[4 * i : 4 * i + 3] = self.input_weights["gamma"]
            w[4 * i + 3] = self.input_weights["lam"]
        return w
