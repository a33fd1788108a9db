"""System parameters for the cable-suspended multi-lifting system.

Numbers that the experiments fix: 1.4 kg load, 0.6 kg quadrotors, 1 m cables,
attachment points on a 0.27 m radius (0.54 m load width).  Inertias, drag
coefficients and the rotor model are not published for the platform and are
declared engineering defaults here; every one of them is overridable from a
scenario config.
"""

from dataclasses import dataclass, field

import numpy as np

GRAVITY = np.array([0.0, 0.0, -9.81])
AIR_DENSITY = 1.225  # kg/m^3


def ring_attachments(n, radius=0.27):
    """Attachment offsets evenly spaced on a circle in the load xy plane."""
    ang = 2.0 * np.pi * np.arange(n) / n + np.pi / 2.0
    return np.stack([radius * np.cos(ang), radius * np.sin(ang), np.zeros(n)], axis=-1)


@dataclass
class RotorModel:
    """Rotor-speed level actuation model shared by simulator and controller."""

    c_t: float = 1.7e-6          # thrust coefficient, N/(rad/s)^2
    c_q_over_c_t: float = 0.016  # drag-torque to thrust ratio, m
    arm: float = 0.08            # rotor offset from CoG along both x and y, m
    inertia: float = 1e-5        # rotor moment of inertia, kg m^2
    time_constant: float = 0.03  # first-order speed-tracking lag, s
    speed_min: float = 150.0     # rad/s
    speed_max: float = 1800.0    # rad/s
    spin_dirs: tuple = (1.0, -1.0, 1.0, -1.0)

    @property
    def c_q(self):
        return self.c_q_over_c_t * self.c_t

    def allocation_matrices(self):
        """(G1, G2) mapping rotor speeds squared / accelerations to (T, tau).

        X configuration, rotors at (+a,+a), (-a,+a), (-a,-a), (+a,-a) in the
        body frame; spin directions alternate so yaw authority exists.
        """
        a = self.arm
        xs = np.array([a, -a, -a, a])
        ys = np.array([a, a, -a, -a])
        G1 = np.zeros((4, 4))
        G1[0] = self.c_t
        G1[1] = self.c_t * ys
        G1[2] = -self.c_t * xs
        G1[3] = -self.c_q * np.asarray(self.spin_dirs)
        G2 = np.zeros((4, 4))
        G2[3] = -self.inertia * np.asarray(self.spin_dirs)
        return G1, G2

    def hover_speed(self, thrust):
        return float(np.sqrt(max(thrust, 0.0) / (4.0 * self.c_t)))


@dataclass
class SystemParameters:
    """Masses, geometry and limits for one n-quadrotor slung-load system."""

    n: int = 3
    load_mass: float = 1.4
    load_inertia: np.ndarray = field(
        default_factory=lambda: np.diag([0.027, 0.027, 0.051])
    )
    rho: np.ndarray = field(default_factory=lambda: ring_attachments(3))
    cable_length: np.ndarray = field(default_factory=lambda: np.ones(3))
    quad_mass: np.ndarray = field(default_factory=lambda: 0.6 * np.ones(3))
    quad_inertia: np.ndarray = field(
        default_factory=lambda: np.diag([2.5e-3, 2.5e-3, 4.0e-3])
    )
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())
    thrust_min: np.ndarray = field(default_factory=lambda: np.zeros(3))
    thrust_max: np.ndarray = field(default_factory=lambda: 20.0 * np.ones(3))
    tension_min: float = 0.5
    tension_max: float = 25.0
    # d_min between quadrotor CoGs; must stay below the vertical-cable hover
    # spacing (0.468 m for the 0.27 m ring) so nominal hover is feasible.
    # Obstacle scenarios override this with the 0.8 m safety margin.
    quad_clearance: float = 0.4
    quad_drag: np.ndarray = field(
        default_factory=lambda: np.diag([0.25, 0.25, 0.10])
    )  # linear body-frame drag matrix, N s/m
    load_drag_area: float = 0.05         # m^2
    load_drag_coeff: float = 1.05        # cube-like bluff body
    cable_attach_below_cog: float = 0.03  # cable hooks below the quad CoG, m
    rotor: RotorModel = field(default_factory=RotorModel)

    def __post_init__(self):
        self.load_inertia = np.asarray(self.load_inertia, dtype=float)
        self.rho = np.asarray(self.rho, dtype=float)
        self.cable_length = np.asarray(self.cable_length, dtype=float)
        self.quad_mass = np.asarray(self.quad_mass, dtype=float)
        self.quad_inertia = np.asarray(self.quad_inertia, dtype=float)
        self.gravity = np.asarray(self.gravity, dtype=float)
        self.thrust_min = np.asarray(self.thrust_min, dtype=float)
        self.thrust_max = np.asarray(self.thrust_max, dtype=float)
        self.quad_drag = np.asarray(self.quad_drag, dtype=float)
        self.validate()

    def validate(self):
        if self.n < 1:
            raise ValueError("need at least one quadrotor")
        if self.load_mass <= 0 or np.any(self.quad_mass <= 0):
            raise ValueError("masses must be positive")
        if np.any(np.linalg.eigvalsh(self.load_inertia) <= 0):
            raise ValueError("load inertia must be positive definite")
        if np.any(self.cable_length <= 0):
            raise ValueError("cable lengths must be positive")
        if np.any(self.thrust_min < 0):
            raise ValueError("thrust_min must be nonnegative")
        if not (0.0 < self.tension_min < self.tension_max):
            raise ValueError("need 0 < tension_min < tension_max")
        if self.quad_clearance <= 0:
            raise ValueError("quad_clearance must be positive")
        shapes = {
            "rho": (self.rho.shape, (self.n, 3)),
            "cable_length": (self.cable_length.shape, (self.n,)),
            "quad_mass": (self.quad_mass.shape, (self.n,)),
            "thrust_min": (self.thrust_min.shape, (self.n,)),
            "thrust_max": (self.thrust_max.shape, (self.n,)),
        }
        for name, (got, want) in shapes.items():
            if got != want:
                raise ValueError(f"{name} has shape {got}, expected {want}")

    @property
    def load_inertia_inv(self):
        return np.linalg.inv(self.load_inertia)

    def hover_tension(self):
        """Per-cable tension for a level hover with vertical cables."""
        return self.load_mass * 9.81 / self.n

    def control_points_body(self):
        """Obstacle-constraint control points fixed to the load (body frame)."""
        return self.rho.copy()


def scaled_system(n, base=None, attach_radius=0.27):
    """Centrosymmetric n-quadrotor system with load mass proportional to n.

    Used by the scalability study: cables attach on a ring, the clearance
    constraint is 1.6x the adjacent attachment spacing so it can actually
    become active.
    """
    base = base or SystemParameters()
    scale = n / base.n
    rho = ring_attachments(n, attach_radius)
    spacing = 2.0 * attach_radius * np.sin(np.pi / n)
    inertia = base.load_inertia * scale
    return SystemParameters(
        n=n,
        load_mass=base.load_mass * scale,
        load_inertia=inertia,
        rho=rho,
        cable_length=np.full(n, float(base.cable_length[0])),
        quad_mass=np.full(n, float(base.quad_mass[0])),
        quad_inertia=base.quad_inertia.copy(),
        thrust_min=np.zeros(n),
        thrust_max=np.full(n, float(base.thrust_max[0])),
        tension_min=base.tension_min,
        tension_max=base.tension_max,
        quad_clearance=1.6 * spacing,
        quad_drag=base.quad_drag.copy(),
        rotor=base.rotor,
    )
