"""Ground-truth physics and sensor simulation.

Distinct from the planner/estimator models on purpose: cables are unilateral
spring-dampers hooked 0.03 m below each quadrotor CoG, rotors track their
commands through a first-order lag, the load sees quadratic drag and the
vehicles the rotated linear model, and the load can carry configured model
mismatch (mass/inertia scaling, CoG bias, an internal sloshing mass) that no
other module knows about.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ModelEvaluationError
from .params import AIR_DENSITY
from .rotation import cross3, quat_left, quat_normalize, quat_to_rot, quat_from_rotvec, quat_mul
from .state import QuadrotorState


@dataclass
class WindConfig:
    speed: float = 0.0
    direction: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    ramp_time: float = 5.0
    # optional fan-disk field: uniform flow inside a cylinder along `direction`
    fan_mode: bool = False
    fan_center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    fan_radius: float = 0.75

    def velocity(self, position, t):
        if self.speed == 0.0:
            return np.zeros(3)
        mag = self.speed * min(1.0, t / self.ramp_time) if self.ramp_time > 0 else self.speed
        d = np.asarray(self.direction, dtype=float)
        d = d / np.linalg.norm(d)
        if not self.fan_mode:
            return mag * d
        rel = np.asarray(position, dtype=float) - self.fan_center
        radial = rel - np.dot(rel, d) * d
        if np.linalg.norm(radial) <= self.fan_radius:
            return mag * d
        return np.zeros(3)


@dataclass
class NoiseConfig:
    accel_sigma: float = 0.02        # m/s^2 per axis
    accel_bias: float = 0.01
    gyro_sigma: float = 0.002        # rad/s
    gyro_bias: float = 0.001
    mocap_pos_sigma: float = 0.002   # m
    mocap_vel_sigma: float = 0.01    # m/s
    rotor_speed_sigma: float = 1.0   # rad/s
    random_walk_level: int = 0       # 0 disables; level 4 = paper's printed case
    seed: int = 0

    @staticmethod
    def level_sigmas(level):
        """(pos m, att rad, vel m/s) standard deviations after 50 s.

        Level 4 is printed in the protocol (0.07 m, 7 deg, 0.07 m/s); other
        levels are spaced geometrically by sqrt(2) per level.
        """
        base = np.array([0.07, np.radians(7.0), 0.07])
        return base * (np.sqrt(2.0) ** (level - 4))


@dataclass
class MismatchConfig:
    mass_scale: float = 1.0
    inertia_scale: float = 1.0
    cog_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))  # m, load frame
    slosh_mass: float = 0.0          # kg, 0 disables
    slosh_stiffness: float = 80.0    # N/m
    slosh_damping: float = 1.4       # N s/m
    slosh_travel: float = 0.1        # m


class RandomWalkInjector:
    """Additive random walk on position, Euler attitude and velocity.

    The level fixes the standard deviation reached after 50 s; level 0 is a
    bit-exact passthrough.  One independent walk per quadrotor.
    """

    def __init__(self, n, level, dt, seed):
        self.n = n
        self.level = int(level)
        self.dt = dt
        self.offsets = np.zeros((n, 9))  # pos(3), euler(3), vel(3)
        if self.level > 0:
            sig = NoiseConfig.level_sigmas(self.level)
            per_axis = np.concatenate([np.full(3, sig[0]), np.full(3, sig[1]), np.full(3, sig[2])])
            self.step_sigma = per_axis * np.sqrt(dt / 50.0)
            self.rng = np.random.default_rng(seed)
        else:
            self.step_sigma = np.zeros(9)
            self.rng = None

    def advance(self):
        if self.level > 0:
            self.offsets += self.rng.normal(size=(self.n, 9)) * self.step_sigma

    def apply(self, i, state: QuadrotorState):
        if self.level == 0:
            return state
        off = self.offsets[i]
        q_err = _euler_to_quat(off[3:6])
        return QuadrotorState(
            p=state.p + off[0:3],
            v=state.v + off[6:9],
            q=quat_normalize(quat_mul(q_err, state.q)),
            w=state.w.copy(),
        )


def _euler_to_quat(euler):
    roll, pitch, yaw = euler
    qz = quat_from_rotvec([0.0, 0.0, yaw])
    qy = quat_from_rotvec([0.0, pitch, 0.0])
    qx = quat_from_rotvec([roll, 0.0, 0.0])
    return quat_mul(quat_mul(qz, qy), qx)


class World:
    """Full ground-truth state with an RK4 integrator at the physics rate."""

    CABLE_STIFFNESS = 1e4   # N/m; deliberately different from the estimator model
    CABLE_DAMPING = 1e2     # N s/m

    def __init__(self, params, wind: WindConfig = None, noise: NoiseConfig = None,
                 mismatch: MismatchConfig = None, physics_dt=1.0 / 1200.0):
        self.params = params
        self.wind = wind or WindConfig()
        self.noise = noise or NoiseConfig()
        self.mismatch = mismatch or MismatchConfig()
        self.dt = physics_dt
        if physics_dt > 1.0 / 1000.0 + 1e-12:
            raise ValueError("physics substep must be at most 1 ms")
        n = params.n

        # true load properties under mismatch (models keep the nominal ones)
        self.true_mass = params.load_mass * self.mismatch.mass_scale
        self.true_inertia = params.load_inertia * self.mismatch.inertia_scale
        self.true_inertia_inv = np.linalg.inv(self.true_inertia)
        # a CoG bias shifts every geometric attachment point in the body frame
        self.rho_true = params.rho - np.asarray(self.mismatch.cog_offset, dtype=float)

        self.t = 0.0
        self.load_p = np.zeros(3)
        self.load_v = np.zeros(3)
        self.load_q = np.array([1.0, 0.0, 0.0, 0.0])
        self.load_w = np.zeros(3)
        self.quad_p = np.zeros((n, 3))
        self.quad_v = np.zeros((n, 3))
        self.quad_q = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
        self.quad_w = np.zeros((n, 3))
        self.rotor = np.zeros((n, 4))
        self.slosh_p = np.zeros(3)
        self.slosh_v = np.zeros(3)

        self.G1, self.G2 = params.rotor.allocation_matrices()
        ss = np.random.SeedSequence(self.noise.seed)
        child = ss.spawn(3 + n)
        self._rng_imu = np.random.default_rng(child[0])
        self._rng_mocap = np.random.default_rng(child[1])
        self._rng_bias = np.random.default_rng(child[2])
        self.walk = RandomWalkInjector(n, self.noise.random_walk_level, physics_dt,
                                       child[3].entropy)
        self.accel_bias = self._rng_bias.normal(scale=self.noise.accel_bias, size=(n, 3))
        self.gyro_bias = self._rng_bias.normal(scale=self.noise.gyro_bias, size=(n, 3))
        self._last_quad_acc = np.zeros((n, 3))
        self._cable_tensions = np.zeros(n)

    # ----- state vector packing for the integrator -----
    def _pack(self):
        parts = [self.load_p, self.load_v, self.load_q, self.load_w,
                 self.quad_p.ravel(), self.quad_v.ravel(), self.quad_q.ravel(),
                 self.quad_w.ravel(), self.rotor.ravel()]
        if self.mismatch.slosh_mass > 0:
            parts += [self.slosh_p, self.slosh_v]
        return np.concatenate(parts)

    def _unpack(self, y):
        n = self.params.n
        i = 0

        def take(k):
            nonlocal i
            out = y[i : i + k]
            i += k
            return out

        load_p, load_v, load_q, load_w = take(3), take(3), take(4), take(3)
        quad_p = take(3 * n).reshape(n, 3)
        quad_v = take(3 * n).reshape(n, 3)
        quad_q = take(4 * n).reshape(n, 4)
        quad_w = take(3 * n).reshape(n, 3)
        rotor = take(4 * n).reshape(n, 4)
        if self.mismatch.slosh_mass > 0:
            slosh_p, slosh_v = take(3), take(3)
        else:
            slosh_p = slosh_v = np.zeros(3)
        return load_p, load_v, load_q, load_w, quad_p, quad_v, quad_q, quad_w, rotor, slosh_p, slosh_v

    def _cable_forces(self, load_p, load_q, load_v, load_w, quad_p, quad_v, quad_q, quad_w):
        """Per-cable tension force on the load (world) and geometry helpers."""
        params = self.params
        n = params.n
        R_L = quat_to_rot(load_q)
        attach_load = load_p + self.rho_true @ R_L.T
        hook = np.array([0.0, 0.0, -params.cable_attach_below_cog])
        R_q = quat_to_rot(quad_q)
        attach_quad = quad_p + np.einsum("nij,j->ni", R_q, hook)
        e = attach_load - attach_quad
        d = np.linalg.norm(e, axis=-1)
        u = e / np.maximum(d, 1e-12)[:, None]
        v_attach_load = load_v + cross3(np.broadcast_to(load_w, (n, 3)), self.rho_true) @ R_L.T
        v_attach_quad = quad_v + np.einsum("nij,nj->ni", R_q, cross3(quad_w, np.broadcast_to(hook, (n, 3))))
        ddot = np.sum(u * (v_attach_load - v_attach_quad), axis=-1)
        stretch = d - params.cable_length
        taut = stretch > 0.0
        tension = np.where(
            taut, np.maximum(0.0, self.CABLE_STIFFNESS * stretch + self.CABLE_DAMPING * ddot), 0.0
        )
        return tension, u, attach_load, attach_quad, R_L, R_q

    def _derivative(self, y, cmds, t):
        params = self.params
        n = params.n
        (load_p, load_v, load_q, load_w, quad_p, quad_v, quad_q, quad_w,
         rotor, slosh_p, slosh_v) = self._unpack(y)

        tension, u, attach_load, attach_quad, R_L, R_q = self._cable_forces(
            load_p, load_q, load_v, load_w, quad_p, quad_v, quad_q, quad_w
        )
        f_cable_load = -tension[:, None] * u      # pulls the load toward each quad
        f_cable_quad = +tension[:, None] * u      # equal and opposite

        # rotors: first-order lag toward the commanded speeds
        rotor_dot = (cmds - rotor) / params.rotor.time_constant
        thrust_torque = np.einsum("ij,nj->ni", self.G1, rotor**2) + np.einsum(
            "ij,nj->ni", self.G2, rotor_dot
        )
        T = thrust_torque[:, 0]
        tau_rotor = thrust_torque[:, 1:4]

        # load rigid body
        wind_load = self.wind.velocity(load_p, t)
        v_rel = wind_load - load_v
        drag_load = (
            0.5 * AIR_DENSITY * params.load_drag_coeff * params.load_drag_area
            * np.linalg.norm(v_rel) * v_rel
        )
        force_load = np.sum(f_cable_load, axis=0) + drag_load + self.true_mass * params.gravity
        slosh_force = np.zeros(3)
        if self.mismatch.slosh_mass > 0:
            mm = self.mismatch
            rel_p = slosh_p - load_p
            rel_v = slosh_v - load_v
            spring = -mm.slosh_stiffness * rel_p - mm.slosh_damping * rel_v
            over = np.linalg.norm(rel_p) - mm.slosh_travel
            if over > 0:
                spring += -2000.0 * over * rel_p / np.linalg.norm(rel_p)
            slosh_force = spring                    # force on the slosh mass
            force_load -= spring                    # reaction at the load CoG
        load_a = force_load / self.true_mass
        arms = self.rho_true @ R_L.T
        torque_world = np.sum(cross3(arms, f_cable_load), axis=0)
        torque_body = R_L.T @ torque_world
        Jw = self.true_inertia @ load_w
        load_wd = self.true_inertia_inv @ (-np.cross(load_w, Jw) + torque_body)
        load_qd = 0.5 * quat_left(load_q) @ np.concatenate([[0.0], load_w])

        # quadrotors
        quad_a = np.zeros((n, 3))
        quad_wd = np.zeros((n, 3))
        quad_qd = np.zeros((n, 4))
        hook = np.array([0.0, 0.0, -params.cable_attach_below_cog])
        for i in range(n):
            wind_i = self.wind.velocity(quad_p[i], t)
            rel = wind_i - quad_v[i]
            drag = R_q[i] @ (params.quad_drag @ (R_q[i].T @ rel))
            force = T[i] * R_q[i][:, 2] + f_cable_quad[i] + drag + params.quad_mass[i] * params.gravity
            quad_a[i] = force / params.quad_mass[i]
            tau_cable = np.cross(hook, R_q[i].T @ f_cable_quad[i])
            Jq = params.quad_inertia
            quad_wd[i] = np.linalg.solve(Jq, -np.cross(quad_w[i], Jq @ quad_w[i]) + tau_rotor[i] + tau_cable)
            quad_qd[i] = 0.5 * quat_left(quad_q[i]) @ np.concatenate([[0.0], quad_w[i]])

        parts = [load_v, load_a, load_qd, load_wd, quad_v.ravel(), quad_a.ravel(),
                 quad_qd.ravel(), quad_wd.ravel(), rotor_dot.ravel()]
        if self.mismatch.slosh_mass > 0:
            slosh_a = slosh_force / self.mismatch.slosh_mass + params.gravity
            parts += [slosh_v, slosh_a]
        return np.concatenate(parts), quad_a, tension

    def step(self, rotor_commands):
        """Advance one physics substep under held rotor-speed commands."""
        cmds = np.clip(np.asarray(rotor_commands, dtype=float),
                       self.params.rotor.speed_min, self.params.rotor.speed_max)
        y0 = self._pack()
        h = self.dt
        k1, acc1, tension = self._derivative(y0, cmds, self.t)
        k2, _, _ = self._derivative(y0 + 0.5 * h * k1, cmds, self.t + 0.5 * h)
        k3, _, _ = self._derivative(y0 + 0.5 * h * k2, cmds, self.t + 0.5 * h)
        k4, _, _ = self._derivative(y0 + h * k3, cmds, self.t + h)
        y = y0 + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise ModelEvaluationError("simulation state diverged")
        (self.load_p, self.load_v, load_q, self.load_w, self.quad_p, self.quad_v,
         quad_q, self.quad_w, rotor, self.slosh_p, self.slosh_v) = (
            a.copy() if isinstance(a, np.ndarray) else a for a in self._unpack(y)
        )
        self.load_q = quat_normalize(load_q)
        self.quad_q = quad_q / np.linalg.norm(quad_q, axis=-1, keepdims=True)
        self.rotor = np.clip(rotor, 0.0, self.params.rotor.speed_max)
        self._last_quad_acc = acc1
        self._cable_tensions = tension
        self.t += h
        self.walk.advance()

    # ----- sensing -----
    def imu_measure(self, i, noisy=True):
        """(world-frame specific force, body gyro) of quadrotor i."""
        acc = self._last_quad_acc[i] - self.params.gravity
        gyro = self.quad_w[i].copy()
        if noisy:
            acc = acc + self._rng_imu.normal(scale=self.noise.accel_sigma, size=3) + self.accel_bias[i]
            gyro = gyro + self._rng_imu.normal(scale=self.noise.gyro_sigma, size=3) + self.gyro_bias[i]
        return acc, gyro

    def rotor_measure(self, i, noisy=True):
        out = self.rotor[i].copy()
        if noisy and self.noise.rotor_speed_sigma > 0:
            out = out + self._rng_imu.normal(scale=self.noise.rotor_speed_sigma, size=4)
        return np.clip(out, 0.0, None)

    def quad_truth(self, i):
        return QuadrotorState(
            p=self.quad_p[i].copy(), v=self.quad_v[i].copy(),
            q=self.quad_q[i].copy(), w=self.quad_w[i].copy(),
        )

    def quad_measured(self, i, noisy=True):
        """Quadrotor state as its onboard estimator would report it."""
        st = self.quad_truth(i)
        if noisy:
            st = QuadrotorState(
                p=st.p + self._rng_mocap.normal(scale=self.noise.mocap_pos_sigma, size=3),
                v=st.v + self._rng_mocap.normal(scale=self.noise.mocap_vel_sigma, size=3),
                q=st.q, w=st.w,
            )
        return self.walk.apply(i, st)

    @property
    def cable_tensions(self):
        return self._cable_tensions.copy()

    def place_equilibrium(self, position, yaw=0.0, spread=0.0):
        """Static hover consistent with the *true* cable springs and rotors."""
        from .equilibrium import equilibrium_state, equilibrium_quad_thrusts
        from .rotation import rotate, yaw_quat
        from .state import unpack_state

        params = self.params
        n = params.n
        x = equilibrium_state(params, position=position, yaw=yaw, spread=spread)
        _, _, q, _, s, _, _, _, t_nom, _ = unpack_state(x, n)
        # true equilibrium tension balances the *true* (possibly mismatched) mass
        t_true = self.true_mass * 9.81 / (n * np.cos(spread))
        scale = t_true / t_nom[0]
        self.load_p = np.asarray(position, dtype=float).copy()
        self.load_v = np.zeros(3)
        self.load_q = q.copy()
        self.load_w = np.zeros(3)
        R_L = quat_to_rot(q)
        attach = self.load_p + self.rho_true @ R_L.T
        stretch = params.cable_length + t_true / self.CABLE_STIFFNESS
        hook_offset = np.array([0.0, 0.0, params.cable_attach_below_cog])
        for i in range(n):
            F_thrust = -t_true * s[i] - params.quad_mass[i] * params.gravity
            T = np.linalg.norm(F_thrust)
            z = F_thrust / T
            axis = np.cross([0.0, 0.0, 1.0], z)
            na = np.linalg.norm(axis)
            ang = np.arctan2(na, z[2])
            qq = quat_from_rotvec(axis / na * ang) if na > 1e-12 else np.array([1.0, 0, 0, 0])
            self.quad_q[i] = qq
            Rq = quat_to_rot(qq)
            hook_world = attach[i] - stretch[i] * s[i]
            self.quad_p[i] = hook_world + Rq @ hook_offset
            self.quad_v[i] = np.zeros(3)
            self.quad_w[i] = np.zeros(3)
            # rotor speeds producing exactly (T, tau) needed at rest
            tau_cable = np.cross(-hook_offset, Rq.T @ (t_true * s[i]))
            target = np.concatenate([[T], -tau_cable])
            sq = np.linalg.solve(self.G1, target)
            self.rotor[i] = np.sqrt(np.maximum(sq, 0.0))
        if self.mismatch.slosh_mass > 0:
            mm = self.mismatch
            sag = mm.slosh_mass * 9.81 / mm.slosh_stiffness
            self.slosh_p = self.load_p + np.array([0.0, 0.0, -min(sag, mm.slosh_travel)])
            self.slosh_v = np.zeros(3)
        self._last_quad_acc = np.zeros((n, 3))
        self._cable_tensions = np.full(n, t_true)
