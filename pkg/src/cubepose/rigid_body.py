"""Truth-side 6-DOF rigid body dynamics and lever-arm kinematics."""
import math
from dataclasses import dataclass, field

import numpy as np

from .attitude import IDENTITY, cross, dcm_from_rotvec, quat_from_rotvec, quat_mul, quat_to_dcm, skew
from .errors import ConfigurationError

# uniform 1 kg, 10 cm cube: m a^2 / 6
DEFAULT_INERTIA = (0.0017, 0.0017, 0.0017)
MAX_STEP = 0.1
_EYE3_FLAT = np.eye(3).reshape(9)


@dataclass
class MassProperties:
    m: float = 1.0
    J: np.ndarray = field(default_factory=lambda: np.diag(DEFAULT_INERTIA))

    def __post_init__(self):
        self.J = np.asarray(self.J, dtype=float)
        if self.J.shape == (3,):
            self.J = np.diag(self.J)
        if not self.m > 0:
            raise ConfigurationError("mass must be positive")
        if self.J.shape != (3, 3) or not np.allclose(self.J, self.J.T):
            raise ConfigurationError("inertia must be a symmetric 3x3 matrix")
        if np.linalg.eigvalsh(self.J).min() <= 0:
            raise ConfigurationError("inertia must be positive definite")
        self.J_inv = np.linalg.inv(self.J)


@dataclass
class RigidBodyState:
    """Position/velocity in the chief frame, attitude body->chief, rates in body."""

    x: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q: np.ndarray = field(default_factory=lambda: IDENTITY.copy())
    w: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def copy(self):
        return RigidBodyState(self.x.copy(), self.v.copy(), self.q.copy(), self.w.copy())


@dataclass
class Wrench:
    f: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tau: np.ndarray = field(default_factory=lambda: np.zeros(3))


def translational_accel(state, f, mp):
    return quat_to_dcm(state.q) @ np.asarray(f, dtype=float) / mp.m


def rotational_accel(w, tau, mp):
    """Euler's equation ``J⁻¹(τ - ω × Jω)``."""
    return mp.J_inv @ (tau - cross(w, mp.J @ w))


def tag_velocity(rho_dot, w, arm):
    return np.asarray(rho_dot, dtype=float) + cross(w, arm)


def tag_accel(rho_ddot, w_dot, w, arm):
    return (np.asarray(rho_ddot, dtype=float) + cross(w_dot, arm)
            + cross(w, cross(w, arm)))


def step_with_rate(state, wrench, mp, dt):
    """One integration step; also returns the mean body rate used for attitude.

    Rates follow Euler's equation with classic RK4. The attitude is advanced
    with the exact exponential of the midpoint rate, and translation is RK4
    along that attitude path.
    """
    if not 0.0 < dt <= MAX_STEP:
        raise ValueError(f"dt must be in (0, {MAX_STEP}] s")
    tau = wrench.tau
    w0 = state.w
    k1 = rotational_accel(w0, tau, mp)
    k2 = rotational_accel(w0 + 0.5 * dt * k1, tau, mp)
    k3 = rotational_accel(w0 + 0.5 * dt * k2, tau, mp)
    k4 = rotational_accel(w0 + dt * k3, tau, mp)
    w1 = w0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    w_mid = 0.5 * (w0 + w1)

    q1 = quat_mul(state.q, quat_from_rotvec(w_mid * dt))
    a_body = wrench.f / mp.m
    Eh_a = dcm_from_rotvec(w_mid * (0.5 * dt)) @ a_body
    R0 = quat_to_dcm(state.q)
    a0 = R0 @ a_body
    ah = R0 @ Eh_a
    a1 = R0 @ (dcm_from_rotvec(w_mid * dt) @ a_body)
    x1 = state.x + dt * state.v + dt * dt / 6.0 * (a0 + 2.0 * ah)
    v1 = state.v + dt / 6.0 * (a0 + 4.0 * ah + a1)
    return RigidBodyState(x1, v1, q1, w1), w_mid


def step(state, wrench, mp, dt):
    return step_with_rate(state, wrench, mp, dt)[0]


def rotation_integrals(w, dt):
    """Closed-form integrals of ``E(s) = exp([w×] s)`` over one step.

    Returns ``(E(dt), G1, G2)`` with ``G1 = ∫E`` and ``G2 = ∫∫E``. For constant
    body rate and constant body specific force ``a``, the chief-frame velocity
    and position advance by ``R0 G1 a`` and ``R0 G2 a``.
    """
    K = skew(w)
    K2 = K @ K
    th = math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    x = th * dt
    if x < 0.1:
        x2 = x * x
        s1 = 1.0 - x2 / 6.0 + x2 * x2 / 120.0 - x2 ** 3 / 5040.0             # sin x / x
        c1 = 0.5 - x2 / 24.0 + x2 * x2 / 720.0 - x2 ** 3 / 40320.0           # (1-cos x)/x^2
        c2 = 1 / 6.0 - x2 / 120.0 + x2 * x2 / 5040.0 - x2 ** 3 / 362880.0    # (x-sin x)/x^3
        c3 = 1 / 24.0 - x2 / 720.0 + x2 * x2 / 40320.0 - x2 ** 3 / 3628800.0  # (x^2/2-1+cos x)/x^4
    else:
        s, c = math.sin(x), math.cos(x)
        s1 = s / x
        c1 = (1.0 - c) / (x * x)
        c2 = (x - s) / x ** 3
        c3 = (0.5 * x * x - 1.0 + c) / x ** 4
    dt2 = dt * dt
    dt3 = dt2 * dt
    coef = np.array([
        [1.0, s1 * dt, c1 * dt2],
        [dt, c1 * dt2, c2 * dt3],
        [0.5 * dt2, c2 * dt3, c3 * dt3 * dt],
    ])
    basis = np.concatenate([_EYE3_FLAT, K.reshape(9), K2.reshape(9)]).reshape(3, 9)
    E, G1, G2 = (coef @ basis).reshape(3, 3, 3)
    return E, G1, G2


def kinetic_energy(w, mp):
    return 0.5 * w @ mp.J @ w
