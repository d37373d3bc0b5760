"""Error-state EKF for position, body velocity and attitude.

Error state ordering is ``(δx, δρ, δα)``:

* ``δx``: chief-frame position error, ``x = x̂ + δx``;
* ``δρ``: body-frame velocity error, ``ρ = ρ̂ + δρ``;
* ``δα``: attitude error in the estimated body frame, ``q = q̂ ⊗ exp(δα)``.

The gyro bias is fixed at initialization and is not part of the covariance.
"""
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .attitude import (IDENTITY, quat_from_rotvec, quat_mul,
                       quat_to_dcm, sigma_matrix, skew, normalize)
from .errors import ConfigurationError, DegenerateGeometryError, NumericalFailureError
from .rigid_body import rotation_integrals

N_ERR = 9
POS, VEL, ATT = slice(0, 3), slice(3, 6), slice(6, 9)
MIN_RANGE = 1e-6
PSD_TOL = 1e-10
_EYE9 = np.eye(N_ERR)
_DIAG = np.diag_indices(N_ERR)


@dataclass
class FilterState:
    x: np.ndarray
    rho: np.ndarray
    q: np.ndarray
    P: np.ndarray
    bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dalpha: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: float = 0.0

    @property
    def v_chief(self):
        return quat_to_dcm(self.q) @ self.rho

    def copy(self):
        return FilterState(self.x.copy(), self.rho.copy(), self.q.copy(), self.P.copy(),
                           self.bias.copy(), self.dalpha.copy(), self.t)


@dataclass(frozen=True)
class NoiseConfig:
    """Process noise spectral densities per error channel, range variance in m²."""

    # gyro channel: sigma_rate² x 10 ms sample interval
    Q_diag: tuple = (1e-8,) * 3 + (2e-6,) * 3 + (1.2e-7,) * 3
    R_range: float = 0.012 ** 2

    def __post_init__(self):
        if len(self.Q_diag) != N_ERR or min(self.Q_diag) < 0 or self.R_range < 0:
            raise ConfigurationError("Q_diag needs 9 non-negative entries and R_range >= 0")


@dataclass(frozen=True)
class GateConfig:
    chi2_threshold: float = 6.63   # chi-square, 1 DOF, 99 %

    def __post_init__(self):
        if not self.chi2_threshold > 0:
            raise ConfigurationError("gate threshold must be positive")


class UpdateResult(NamedTuple):
    state: FilterState
    accepted: bool
    expected: float
    innovation: float
    variance: float


def _check_cov(P):
    P = np.asarray(P, dtype=float)
    if P.shape != (N_ERR, N_ERR):
        raise ConfigurationError("covariance must be 9x9")
    if not np.allclose(P, P.T, rtol=0.0, atol=1e-12):
        raise ConfigurationError("covariance is not symmetric")
    if np.linalg.eigvalsh(P).min() < -PSD_TOL:
        raise ConfigurationError("covariance is not positive semi-definite")
    return P


def sample_offset(cov, rng):
    """Draw ``N(0, cov)`` through a symmetric square root (works for singular cov)."""
    w, V = np.linalg.eigh(cov)
    root = V * np.sqrt(np.clip(w, 0.0, None))
    return root @ rng.standard_normal(len(w))


def init(x, rho, q, cov0, bias=(0.0, 0.0, 0.0), rng=None, t=0.0):
    """Initialize the filter at the given mean.

    With ``rng`` the mean is displaced by an error drawn from ``cov0`` such
    that truth = estimate + error.
    """
    cov0 = _check_cov(cov0)
    x = np.array(x, dtype=float)
    rho = np.array(rho, dtype=float)
    q = normalize(q)
    if rng is not None:
        e = sample_offset(cov0, rng)
        x = x - e[POS]
        rho = rho - e[VEL]
        q = quat_mul(q, quat_from_rotvec(-e[ATT]))
    return FilterState(x, rho, q, cov0.copy(), np.array(bias, dtype=float), np.zeros(3), t)


def transition(fs, w_hat, accel, dt):
    """Nominal one-step map and its exact error-state Jacobian.

    Body rate ``w_hat`` and body specific force ``accel`` are held constant
    over ``dt``. Returns ``(x, rho, q, F)``.
    """
    R = quat_to_dcm(fs.q)
    E, G1, G2 = rotation_integrals(w_hat, dt)
    disp = fs.rho * dt + G2 @ accel
    x = fs.x + R @ disp
    rho = E.T @ (fs.rho + G1 @ accel)
    q = quat_mul(fs.q, quat_from_rotvec(w_hat * dt))
    F = _EYE9.copy()
    F[POS, VEL] = R * dt
    F[POS, ATT] = -R @ skew(disp)
    F[VEL, VEL] = E.T
    F[ATT, ATT] = E.T
    return x, rho, q, F


def predict(fs, imu, accel, dt, nc):
    """Propagate with one IMU sample.

    ``accel`` is the body-frame specific force driving translation: commanded
    thrust over mass in simulation, the bias-corrected accelerometer in replay.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if np.any(fs.dalpha):
        raise ValueError("attitude error must be reset before predicting")
    w_hat = np.asarray(imu.gyro, dtype=float) - fs.bias
    x, rho, q, F = transition(fs, w_hat, np.asarray(accel, dtype=float), dt)
    P = F @ fs.P @ F.T
    P[_DIAG] += np.asarray(nc.Q_diag) * dt
    P = 0.5 * (P + P.T)
    return FilterState(x, rho, q, P, fs.bias, np.zeros(3), fs.t + dt)


def tag_position(fs, tag_arm):
    return fs.x + quat_to_dcm(fs.q) @ np.asarray(tag_arm, dtype=float)


def expected_range(fs, anchor, tag_arm):
    d = tag_position(fs, tag_arm) - np.asarray(anchor.position, dtype=float)
    r = float(np.sqrt(d @ d))
    if r <= MIN_RANGE:
        raise DegenerateGeometryError(f"predicted tag position coincides with anchor {anchor.id}")
    return r


def range_jacobian(fs, anchor, tag_arm):
    """1x9 row ``[uᵀ, 0, -uᵀ R [P×]]`` with ``u`` the anchor->tag unit vector."""
    arm = np.asarray(tag_arm, dtype=float)
    R = quat_to_dcm(fs.q)
    d = fs.x + R @ arm - np.asarray(anchor.position, dtype=float)
    r = float(np.sqrt(d @ d))
    if r <= MIN_RANGE:
        raise DegenerateGeometryError(f"predicted tag position coincides with anchor {anchor.id}")
    u = d / r
    H = np.zeros(N_ERR)
    H[POS] = u
    H[ATT] = -u @ R @ skew(arm)
    return H


def gate(innovation, S, g):
    """Mahalanobis test on a scalar innovation; ties accept."""
    if not S > 0:
        raise NumericalFailureError(f"innovation variance {S!r} is not positive")
    return innovation * innovation / S <= g.chi2_threshold


def update(fs, meas, anchor, tag_arm, nc, g, attitude_update=False):
    """Range update with gating and a Joseph-form covariance update.

    By default the attitude error is not corrected by range data (consider
    state): its gain rows are zero, so ``P_αα`` and ``δα`` are left as they
    are. ``attitude_update=True`` runs the full update and stores ``δα`` for
    :func:`reset`.
    """
    if meas.anchor_id != anchor.id:
        raise ConfigurationError(f"measurement is for anchor {meas.anchor_id}, got anchor {anchor.id}")
    y = expected_range(fs, anchor, tag_arm)
    H = range_jacobian(fs, anchor, tag_arm)
    PHt = fs.P @ H
    S = float(H @ PHt) + nc.R_range
    nu = float(meas.range) - y
    if not gate(nu, S, g):
        return UpdateResult(fs, False, y, nu, S)
    K = PHt / S
    if not attitude_update:
        K[ATT] = 0.0
    IKH = np.eye(N_ERR) - np.outer(K, H)
    P = IKH @ fs.P @ IKH.T + nc.R_range * np.outer(K, K)
    P = 0.5 * (P + P.T)
    dz = K * nu
    out = FilterState(fs.x + dz[POS], fs.rho + dz[VEL], fs.q, P, fs.bias,
                      fs.dalpha + dz[ATT], fs.t)
    return UpdateResult(out, True, y, nu, S)


def reset(fs):
    """Fold ``δα`` into the nominal quaternion and zero it; P is left unchanged."""
    if not np.any(fs.dalpha):
        return fs
    q = normalize(fs.q + 0.5 * sigma_matrix(fs.q) @ fs.dalpha)
    return replace(fs, q=q, dalpha=np.zeros(3))


def inject(fs, err):
    """Apply a 9-vector error to the nominal state (truth = estimate ⊕ error)."""
    err = np.asarray(err, dtype=float)
    return replace(fs, x=fs.x + err[POS], rho=fs.rho + err[VEL],
                   q=quat_mul(fs.q, quat_from_rotvec(err[ATT])))


def identity_state(P=None):
    return FilterState(np.zeros(3), np.zeros(3), IDENTITY.copy(),
                       np.zeros((N_ERR, N_ERR)) if P is None else np.array(P, dtype=float))
