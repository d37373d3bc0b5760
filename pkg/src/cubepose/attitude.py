"""Quaternion and rotation algebra.

Conventions used everywhere in the package:

* quaternions are ``[x, y, z, w]`` (vector part first, scalar last);
* products are Hamilton products;
* ``quat_to_dcm(q)`` maps body-frame vectors into the chief frame.
"""
import math

import numpy as np

from .errors import InvalidQuaternionError

UNIT_TOL = 1e-6
IDENTITY = np.array([0.0, 0.0, 0.0, 1.0])


def _raise_not_unit(n2):
    raise InvalidQuaternionError(f"quaternion norm {math.sqrt(n2):.9g} is not unit")


def normalize(q):
    q = np.asarray(q, dtype=float)
    n = math.sqrt(q @ q)
    if n == 0.0 or not np.isfinite(n):
        raise InvalidQuaternionError("cannot normalize a zero or non-finite quaternion")
    return q / n


def skew(v):
    """Cross-product matrix: ``skew(v) @ u == np.cross(v, u)``."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def cross(a, b):
    """3-vector cross product (much cheaper than ``np.cross`` for single vectors)."""
    return np.array([
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])


def quat_mul(a, b):
    """Hamilton product ``a ⊗ b``, renormalized."""
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    na = ax * ax + ay * ay + az * az + aw * aw
    nb = bx * bx + by * by + bz * bz + bw * bw
    if not (abs(na - 1.0) <= 2.0 * UNIT_TOL and abs(nb - 1.0) <= 2.0 * UNIT_TOL):
        _raise_not_unit(nb if abs(na - 1.0) <= 2.0 * UNIT_TOL else na)
    out = np.array([
        aw * bx + bw * ax + ay * bz - az * by,
        aw * by + bw * ay + az * bx - ax * bz,
        aw * bz + bw * az + ax * by - ay * bx,
        aw * bw - ax * bx - ay * by - az * bz,
    ])
    return out / math.sqrt(out @ out)


def quat_conjugate(q):
    return np.array([-q[0], -q[1], -q[2], q[3]])


def quat_to_dcm(q):
    x, y, z, w = q
    n2 = x * x + y * y + z * z + w * w
    if not abs(n2 - 1.0) <= 2.0 * UNIT_TOL:
        _raise_not_unit(n2)
    return np.array([
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ])


def quat_from_rotvec(phi):
    """Unit quaternion for a rotation of ``|phi|`` rad about ``phi``."""
    phi = np.asarray(phi, dtype=float)
    angle = math.sqrt(phi @ phi)
    half = 0.5 * angle
    if angle < 1e-8:
        # sin(a/2)/a to second order
        s = 0.5 - angle * angle / 48.0
    else:
        s = math.sin(half) / angle
    return np.array([s * phi[0], s * phi[1], s * phi[2], math.cos(half)])


def dcm_from_rotvec(phi):
    """Rotation matrix ``exp([phi×])`` (Rodrigues)."""
    angle = math.sqrt(phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2])
    K = skew(phi)
    if angle < 1e-4:
        a2 = angle * angle
        s = 1.0 - a2 / 6.0 + a2 * a2 / 120.0
        c = 0.5 - a2 / 24.0 + a2 * a2 / 720.0
    else:
        s = math.sin(angle) / angle
        c = (1.0 - math.cos(angle)) / (angle * angle)
    return np.eye(3) + s * K + c * (K @ K)


def rotvec_from_quat(q):
    """Inverse of :func:`quat_from_rotvec`, choosing the short rotation."""
    q = np.asarray(q, dtype=float)
    if q[3] < 0.0:
        q = -q
    vn = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2])
    if vn < 1e-12:
        return 2.0 * q[:3]
    angle = 2.0 * math.atan2(vn, q[3])
    return q[:3] * (angle / vn)


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    return quat_from_rotvec(axis / np.linalg.norm(axis) * angle)


def error_quat(q_true, q_est):
    """Error quaternion ``δq = q ⊗ q̂⁻¹`` so that ``δq ⊗ q̂ = q``."""
    return quat_mul(q_true, quat_conjugate(q_est))


def attitude_error(q_true, q_est):
    """Small-angle attitude error vector expressed in the estimated body frame.

    This is the error the filter carries: ``q_true = q_est ⊗ exp(δα)``.
    """
    return rotvec_from_quat(quat_mul(quat_conjugate(q_est), q_true))


def sigma_matrix(q):
    """4x3 matrix ``[q4 I + [ϱ×]; -ϱᵀ]`` with ``q ⊗ [v; 0] = Σ(q) v``."""
    x, y, z, w = q
    return np.array([
        [w, -z, y],
        [z, w, -x],
        [-y, x, w],
        [-x, -y, -z],
    ])


def quat_integrate(q, omega, dt):
    """Propagate ``q`` under constant body rate ``omega`` for ``dt`` seconds.

    Uses the exact exponential ``q ⊗ exp(omega dt)``.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    return quat_mul(q, quat_from_rotvec(np.asarray(omega, dtype=float) * dt))


def yaw_of(q):
    """Heading of the body x axis projected on the chief xy plane."""
    x, y, z, w = q
    return math.atan2(2.0 * (x * y + z * w), 1.0 - 2.0 * (y * y + z * z))


def wrap_angle(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi
