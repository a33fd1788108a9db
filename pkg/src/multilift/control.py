"""Per-quadrotor trajectory tracking: PD position control with external-force
compensation, tilt-prioritized attitude control and INDI rotor allocation.

The controller treats the cable pull (plus drag and wind) as an external
force measured by the accelerometer: filtering the accelerometer and the
rotor-speed-derived thrust with the *same* low-pass keeps their delays
matched, so the difference isolates the disturbance.  The commanded thrust
vector must supply gravity compensation, the PD/feedforward acceleration and
the negative of that external force:

    T_des z_des = m (Kp e_p + Kv e_v + a_ref) - m g - f_ext

which at hover over a taut cable gives T_des = m g + tension.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import butter

from .rotation import cross3, quat_to_rot


@dataclass
class ControllerGains:
    kp: np.ndarray = field(default_factory=lambda: np.diag([10.0, 10.0, 10.0]))
    kv: np.ndarray = field(default_factory=lambda: np.diag([6.0, 6.0, 6.0]))
    k_tilt: float = 150.0
    k_yaw: float = 15.0
    k_rate: float = 20.0
    cutoff_hz: float = 12.0

    def __post_init__(self):
        self.kp = np.asarray(self.kp, dtype=float)
        self.kv = np.asarray(self.kv, dtype=float)
        if np.any(np.linalg.eigvalsh(self.kp) <= 0) or np.any(np.linalg.eigvalsh(self.kv) <= 0):
            raise ValueError("position gains must be positive definite")


class LowPass2:
    """Second-order Butterworth with per-channel state (DF2-transposed).

    The same coefficients are used for every signal that participates in the
    external-force estimate so their group delays cancel.
    """

    def __init__(self, cutoff_hz, rate_hz, channels):
        if not 0.0 < cutoff_hz < 0.5 * rate_hz:
            raise ValueError("cutoff must lie below Nyquist")
        self.b, self.a = butter(2, cutoff_hz, fs=rate_hz)
        self.z = np.zeros((2, channels))

    def reset(self, value):
        """Set the internal state so a constant input starts in steady state."""
        value = np.broadcast_to(np.asarray(value, dtype=float), self.z.shape[1:])
        # steady state of DF2T: z1 = (b1 - a1 b0) x, z2 = (b2 - a2 b0) x
        self.z[0] = (self.b[1] - self.a[1] * self.b[0]) * value
        self.z[1] = (self.b[2] - self.a[2] * self.b[0]) * value

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        y = self.b[0] * x + self.z[0]
        self.z[0] = self.b[1] * x - self.a[1] * y + self.z[1]
        self.z[1] = self.b[2] * x - self.a[2] * y
        return y


def external_force_estimate(accel_filtered, thrust_vec_filtered, mass):
    """f_ext = m a_filtered - f_filtered, both already identically filtered."""
    return mass * np.asarray(accel_filtered) - np.asarray(thrust_vec_filtered)


def position_pd(ref, pos, vel, f_ext, gains, mass, gravity, prev_z=None):
    """Desired collective thrust magnitude and direction (Eq. above)."""
    e_p = ref.position - pos
    e_v = ref.velocity - vel
    acc_cmd = gains.kp @ e_p + gains.kv @ e_v + ref.acceleration
    force = mass * acc_cmd - mass * gravity - f_ext
    T = float(np.linalg.norm(force))
    if T < 1e-9:
        z = prev_z if prev_z is not None else np.array([0.0, 0.0, 1.0])
        return 0.0, z
    return T, force / T


def tilt_prioritized_attitude(z_des, q, w_body, omega_ref_world, gains,
                              yaw_rate_ref=0.0, yaw_error=0.0):
    """Angular acceleration command from attitude and rate errors.

    The reduced-attitude (tilt) error rotates the body z-axis onto the
    desired thrust direction and is corrected with priority; heading is left
    free apart from the (weaker) yaw term and damping the yaw rate toward
    its reference, zero by default.
    """
    R = quat_to_rot(q)
    zb_des = R.T @ np.asarray(z_des, dtype=float)
    e3 = np.array([0.0, 0.0, 1.0])
    axis = np.cross(e3, zb_des)
    sin_a = np.linalg.norm(axis)
    cos_a = float(zb_des[2])
    if sin_a < 1e-12:
        if cos_a > 0:
            e_tilt = np.zeros(3)
        else:
            e_tilt = np.array([np.pi, 0.0, 0.0])  # antipodal: flip about body x
    else:
        e_tilt = axis / sin_a * np.arctan2(sin_a, cos_a)
    omega_ref_body = R.T @ np.asarray(omega_ref_world, dtype=float)
    omega_ref_body[2] = yaw_rate_ref
    e_rate = omega_ref_body - w_body
    alpha = gains.k_tilt * e_tilt + gains.k_rate * e_rate
    alpha[2] += gains.k_yaw * yaw_error
    return alpha


def indi_allocate(T_des, tau_des, u_prev_cmd, G1, G2, dt,
                  speed_min, speed_max, iters=10):
    """Solve G1 u^2 + G2 (u - u_prev)/dt = [T; tau] for rotor speeds.

    Newton iteration on the rotor speeds with saturation at the end; returns
    (command, saturated flag).
    """
    target = np.concatenate([[T_des], np.asarray(tau_des, dtype=float)])
    u = np.clip(np.asarray(u_prev_cmd, dtype=float).copy(), speed_min, speed_max)
    G2dt = G2 / dt
    for _ in range(iters):
        f = G1 @ (u * u) + G2dt @ (u - u_prev_cmd) - target
        Jac = 2.0 * G1 * u[None, :] + G2dt
        try:
            du = np.linalg.solve(Jac, f)
        except np.linalg.LinAlgError:
            du = np.linalg.lstsq(Jac, f, rcond=None)[0]
        u = u - du
        u = np.maximum(u, 1.0)  # keep the square root branch positive
        if np.max(np.abs(du)) < 1e-9:
            break
    saturated = bool(np.any(u < speed_min - 1e-9) or np.any(u > speed_max + 1e-9))
    u = np.clip(u, speed_min, speed_max)
    return u, saturated


class QuadrotorController:
    """One 300 Hz tracking controller bound to a single vehicle."""

    def __init__(self, params, index, gains: ControllerGains = None, rate_hz=300.0):
        self.params = params
        self.i = index
        self.gains = gains or ControllerGains()
        self.rate = rate_hz
        self.dt = 1.0 / rate_hz
        self.mass = params.quad_mass[index]
        self.J = params.quad_inertia
        self.G1, self.G2 = params.rotor.allocation_matrices()
        fc = self.gains.cutoff_hz
        self.f_accel = LowPass2(fc, rate_hz, 3)
        self.f_thrust = LowPass2(fc, rate_hz, 3)
        self.f_gyro = LowPass2(fc, rate_hz, 3)
        self.f_rotor = LowPass2(fc, rate_hz, 4)
        self._gyro_f_prev = np.zeros(3)
        self._rotor_f_prev = None
        self._u_cmd_prev = None
        self._z_prev = np.array([0.0, 0.0, 1.0])

    def reset(self, rotor_speeds, accel_world, thrust_axis):
        """Warm the filters at a steady operating point (hover start)."""
        rotor_speeds = np.asarray(rotor_speeds, dtype=float)
        thrust = self.params.rotor.c_t * np.sum(rotor_speeds**2)
        self.f_accel.reset(accel_world)
        self.f_thrust.reset(thrust * np.asarray(thrust_axis, dtype=float))
        self.f_gyro.reset(np.zeros(3))
        self.f_rotor.reset(rotor_speeds)
        self._gyro_f_prev = np.zeros(3)
        self._rotor_f_prev = rotor_speeds.copy()
        self._u_cmd_prev = rotor_speeds.copy()
        self._z_prev = np.asarray(thrust_axis, dtype=float).copy()

    def command(self, t, quad_state, accel_world, gyro, rotor_speeds, traj):
        """One control tick: returns (rotor speed command, info dict)."""
        ref = traj.sample_quad_ref(self.i, t)
        R = quat_to_rot(quad_state.q)
        z_body = R[:, 2]

        a_f = self.f_accel(accel_world)
        thrust_meas = self.params.rotor.c_t * float(np.sum(np.square(rotor_speeds)))
        f_f = self.f_thrust(thrust_meas * z_body)
        f_ext = external_force_estimate(a_f, f_f, self.mass)

        T_des, z_des = position_pd(
            ref, quad_state.p, quad_state.v, f_ext, self.gains, self.mass,
            self.params.gravity, prev_z=self._z_prev,
        )
        self._z_prev = z_des
        alpha_des = tilt_prioritized_attitude(
            z_des, quad_state.q, quad_state.w, ref.omega_world, self.gains
        )

        gyro_f = self.f_gyro(gyro)
        omega_dot_f = (gyro_f - self._gyro_f_prev) / self.dt
        self._gyro_f_prev = gyro_f
        rotor_f = self.f_rotor(rotor_speeds)
        if self._rotor_f_prev is None:
            self._rotor_f_prev = rotor_f.copy()
        tau_f = (self.G1 @ (rotor_f * rotor_f)
                 + self.G2 @ ((rotor_f - self._rotor_f_prev) / self.dt))[1:4]
        self._rotor_f_prev = rotor_f
        tau_des = tau_f + self.J @ (alpha_des - omega_dot_f)

        if self._u_cmd_prev is None:
            self._u_cmd_prev = np.asarray(rotor_speeds, dtype=float).copy()
        cmd, saturated = indi_allocate(
            T_des, tau_des, self._u_cmd_prev, self.G1, self.G2, self.dt,
            self.params.rotor.speed_min, self.params.rotor.speed_max,
        )
        self._u_cmd_prev = cmd.copy()
        info = dict(T_des=T_des, z_des=z_des, f_ext=f_ext, alpha_des=alpha_des,
                    saturated=saturated)
        return cmd, info
