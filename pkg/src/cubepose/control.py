"""LQR pose controller, thruster allocation and line-of-sight guidance."""
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .attitude import IDENTITY, attitude_error, quat_to_dcm, wrap_angle, yaw_of
from .errors import ConfigurationError, DesignError, NumericalFailureError

RICCATI_TOL = 1e-10


@dataclass
class LqrGains:
    K: np.ndarray
    P: np.ndarray
    closed_loop: np.ndarray

    @property
    def max_real_eig(self):
        return float(np.linalg.eigvals(self.closed_loop).real.max())


def solve_lyapunov(A, C):
    """Solve ``Aᵀ X + X A + C = 0`` by vectorization."""
    n = A.shape[0]
    I = np.eye(n)
    L = np.kron(A.T, I) + np.kron(I, A.T)
    try:
        X = np.linalg.solve(L, -C.reshape(-1)).reshape(n, n)
    except np.linalg.LinAlgError as exc:
        raise DesignError("Lyapunov equation is singular") from exc
    return 0.5 * (X + X.T)


def _stabilizable(A, B):
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if lam.real >= -1e-12:
            M = np.hstack([A - lam * np.eye(n), B.astype(complex)])
            if np.linalg.matrix_rank(M, tol=1e-9) < n:
                return False
    return True


def _initial_gain(A, B):
    """Stabilizing seed via Bass' method: shift A past its spectral radius."""
    n = A.shape[0]
    beta = np.linalg.norm(A) + 1.0
    Ab = A + beta * np.eye(n)
    # Ab Z + Z Abᵀ = 2 B Bᵀ  <=>  (Abᵀ)ᵀ Z + Z Abᵀ - 2BBᵀ = 0
    Z = solve_lyapunov(Ab.T, -2.0 * B @ B.T)
    if np.linalg.eigvalsh(Z).min() > 1e-12 * max(1.0, np.abs(Z).max()):
        return B.T @ np.linalg.inv(Z)
    if np.linalg.eigvals(A).real.max() < 0:
        return np.zeros((B.shape[1], n))
    raise DesignError("could not find a stabilizing initial gain")


def lqr_design(A, B, Q, R, max_iter=60):
    """Continuous-time LQR by Newton-Kleinman iteration on the Riccati equation."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n, m = B.shape
    if A.shape != (n, n) or Q.shape != (n, n) or R.shape != (m, m):
        raise DesignError("inconsistent LQR matrix shapes")
    if not np.allclose(R, R.T) or np.linalg.eigvalsh(R).min() <= 0:
        raise DesignError("R must be symmetric positive definite")
    if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q).min() < -1e-12:
        raise DesignError("Q must be symmetric positive semi-definite")
    if not _stabilizable(A, B):
        raise DesignError("(A, B) is not stabilizable")

    R_inv = np.linalg.inv(R)
    K = _initial_gain(A, B)
    scale = max(1.0, np.linalg.norm(Q))
    for _ in range(max_iter):
        Acl = A - B @ K
        P = solve_lyapunov(Acl, Q + K.T @ R @ K)
        K = R_inv @ B.T @ P
        res = A.T @ P + P @ A - P @ B @ R_inv @ B.T @ P + Q
        if np.linalg.norm(res) <= RICCATI_TOL * scale:
            break
    else:
        raise DesignError("Newton-Kleinman iteration did not converge")
    Acl = A - B @ K
    if np.linalg.eigvals(Acl).real.max() >= 0:
        raise DesignError("closed loop is not stable")
    return LqrGains(K, P, Acl)


@dataclass(frozen=True)
class LqrWeights:
    q_pos: float = 100.0
    q_vel: float = 10.0
    q_att: float = 10.0
    q_rate: float = 1.0
    r_force: float = 1.0e4
    r_torque: float = 2.0e5


def pose_model(m, J):
    """Linear model of position, velocity, attitude error and rates.

    Inputs are the chief-frame force and the body torque.
    """
    J = np.asarray(J, dtype=float)
    A = np.zeros((12, 12))
    A[0:3, 3:6] = np.eye(3)
    A[6:9, 9:12] = np.eye(3)
    B = np.zeros((12, 6))
    B[3:6, 0:3] = np.eye(3) / m
    B[9:12, 3:6] = np.linalg.inv(J)
    return A, B


def pose_lqr(m, J, w=LqrWeights()):
    A, B = pose_model(m, J)
    Q = np.diag([w.q_pos] * 3 + [w.q_vel] * 3 + [w.q_att] * 3 + [w.q_rate] * 3)
    R = np.diag([w.r_force] * 3 + [w.r_torque] * 3)
    return lqr_design(A, B, Q, R)


@dataclass
class Setpoint:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    attitude: np.ndarray = field(default_factory=lambda: IDENTITY.copy())
    rates: np.ndarray = field(default_factory=lambda: np.zeros(3))


def control_error(x, v_chief, q, w, sp):
    return np.concatenate([
        np.asarray(x) - sp.position,
        np.asarray(v_chief) - sp.velocity,
        attitude_error(q, sp.attitude),
        np.asarray(w) - sp.rates,
    ])


def compute_control(est, sp, gains, f_limit, tau_limit, w_hat):
    """Saturated LQR wrench from the estimate.

    Returns the chief-frame force and the body torque.
    """
    e = control_error(est.x, est.v_chief, est.q, w_hat, sp)
    u = -gains.K @ e
    return np.clip(u[:3], -f_limit, f_limit), np.clip(u[3:], -tau_limit, tau_limit)


def to_body_frame(f_chief, q):
    return quat_to_dcm(q).T @ np.asarray(f_chief, dtype=float)


def to_chief_frame(f_body, q):
    return quat_to_dcm(q) @ np.asarray(f_body, dtype=float)


@dataclass
class ThrusterConfig:
    positions: np.ndarray
    directions: np.ndarray
    f_max: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.directions = np.asarray(self.directions, dtype=float)
        n = len(self.positions)
        self.f_max = np.broadcast_to(np.asarray(self.f_max, dtype=float), (n,)).copy()
        if self.positions.shape != (n, 3) or self.directions.shape != (n, 3):
            raise ConfigurationError("thruster positions/directions must be n x 3")
        if not np.allclose(np.linalg.norm(self.directions, axis=1), 1.0, atol=1e-9):
            raise ConfigurationError("thruster directions must be unit vectors")
        if np.any(self.f_max <= 0):
            raise ConfigurationError("thruster limits must be positive")
        self.M = self.influence_matrix()
        if np.linalg.matrix_rank(self.M) < 6:
            raise ConfigurationError("thruster layout cannot control all six degrees of freedom")

    def influence_matrix(self):
        """6 x n map from thrust magnitudes to body force and torque."""
        return np.vstack([self.directions.T, np.cross(self.positions, self.directions).T])


def default_thrusters(half_width=0.05, f_max=0.1, cant=0.6):
    """Ten thrusters: eight canted corner jets in the xy plane plus two axial jets.

    Corner jets push inward with a tangential cant whose sense flips between
    the top and bottom rings, so the set spans all six force/torque directions
    with nonnegative thrust.
    """
    h = half_width
    pos, dirs = [], []
    for sz in (1, -1):
        for sx, sy in ((1, 1), (-1, 1), (-1, -1), (1, -1)):
            pos.append((sx * h, sy * h, sz * h))
            d = np.array([-sx, -sy, 0.0]) + cant * sz * np.array([-sy, sx, 0.0])
            dirs.append(d / np.linalg.norm(d))
    pos += [(0.0, 0.0, h), (0.0, 0.0, -h)]
    dirs += [np.array([0.0, 0.0, -1.0]), np.array([0.0, 0.0, 1.0])]
    return ThrusterConfig(np.array(pos), np.array(dirs), f_max)


class Allocation(NamedTuple):
    thrust: np.ndarray
    residual: float            # |M u - demand|
    weighted_residual: float   # |W (M u - demand)|


def _free_system(G, free, lo, hi, cache):
    key = free.tobytes()
    hit = None if cache is None else cache.get(key)
    if hit is None:
        F = np.flatnonzero(free)
        B = np.flatnonzero(~free)
        G_FF = G[np.ix_(F, F)]
        try:
            G_inv = np.linalg.inv(G_FF) if len(F) else np.zeros((0, 0))
        except np.linalg.LinAlgError as exc:
            raise NumericalFailureError("free subproblem is singular") from exc
        hit = (F, B, G_inv, G[np.ix_(F, B)], G_FF, lo[F], hi[F])
        if cache is not None:
            cache[key] = hit
    return hit


def _descend(G, c, u, free, lo, hi, entering=None, cache=None):
    """Move the free variables toward their unconstrained optimum.

    ``G = AᵀA`` and ``c = Aᵀb``; ``cache`` memoizes per-free-set data and is
    valid only for one ``(G, lo, hi)``. Variables that hit a bound on the way
    are fixed there and the free subproblem is re-solved. Returns False when
    the entering variable could not move inward (it is released back to its
    bound).
    """
    n = len(u)
    for _ in range(n + 1):
        F, B, G_inv, G_FB, G_FF, loF, hiF = _free_system(G, free, lo, hi, cache)
        if len(F) == 0:
            return True
        rhs = c[F] - G_FB @ u[B]
        z = G_inv @ rhs
        # one refinement step; G_FF can be ill-conditioned through the tie-break term
        z += G_inv @ (rhs - G_FF @ z)
        if entering is not None:
            k = int(F.searchsorted(entering))
            if u[entering] <= lo[entering]:
                moved_in = z[k] > lo[entering]
            else:
                moved_in = z[k] < hi[entering]
            if not moved_in:
                free[entering] = False
                return False
            entering = None
        inside = (z > loF) & (z < hiF)
        if inside.all():
            u[F] = z
            return True
        step = u[F]
        d = z - step
        with np.errstate(divide="ignore", invalid="ignore"):
            alpha = np.where(d < 0, (loF - step) / d, np.where(d > 0, (hiF - step) / d, np.inf))
        alpha = alpha.clip(0.0, 1.0)
        a = alpha.min()
        u[F] = step + a * d
        hit = alpha <= a + 1e-15
        for k, dk in zip(F[hit], d[hit]):
            u[k] = lo[k] if dk < 0 else hi[k]
            free[k] = False
    return True


def bounded_lsq(A, b, lo, hi, start=None, max_iter=200):
    """Bounded-variable least squares ``min |A u - b|`` with ``lo <= u <= hi``.

    Active-set method in the style of Lawson-Hanson: each variable is either
    held at a bound or free, and the free subproblem is solved through its
    normal equations. ``A`` must have full column rank.
    ``start`` is a previous solution used to warm-start the active set.

    Returns ``(u, free_mask)``.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = np.abs(A).max() ** 2 * max(np.abs(b).max(), np.abs(hi).max())
    return bounded_lsq_normal(A.T @ A, A.T @ b, lo, hi, start, max_iter, scale)


def bounded_lsq_normal(G, c, lo, hi, start=None, max_iter=200, scale=1.0, cache=None):
    """:func:`bounded_lsq` on precomputed normal equations ``G = AᵀA``, ``c = Aᵀb``.

    ``G`` must be positive definite. ``scale`` sets the gradient tolerance;
    ``cache`` is a dict reused across calls that share ``G``, ``lo`` and ``hi``.
    """
    n = len(c)
    if start is None:
        u = np.clip(np.zeros(n), lo, hi)
        free = np.zeros(n, dtype=bool)
    else:
        u = np.clip(np.asarray(start, dtype=float), lo, hi)
        free = (u > lo) & (u < hi)
        _descend(G, c, u, free, lo, hi, cache=cache)
    blocked = np.zeros(n, dtype=bool)
    tol = 1e-13 * max(1.0, scale)
    for _ in range(max_iter):
        grad = G @ u - c
        # a bound variable wants to move inward if the gradient points outward
        want = np.where(u >= hi, grad, -grad)
        want[free | blocked] = 0.0
        j = int(want.argmax())
        if not want[j] > tol:
            return u, free
        free[j] = True
        if _descend(G, c, u, free, lo, hi, entering=j, cache=cache):
            blocked[:] = False
        else:
            blocked[j] = True
    raise NumericalFailureError("bounded least squares did not converge")


def allocation_weights(half_width=0.05, torque_priority=10.0):
    """Row weights; torque rows are nondimensionalized by the body half-width."""
    return np.array([1.0] * 3 + [torque_priority / half_width] * 3)


class Allocator:
    """Nonnegative bounded thrust allocation with attitude-priority weighting.

    A tiny Tikhonov term selects the minimum-norm thrust among equally good
    solutions (redundant layouts admit internal thrust cancellation). The
    normal equations are fixed per layout and built once.
    """

    def __init__(self, tc, weights=None, reg=1e-10):
        self.tc = tc
        self.W = allocation_weights() if weights is None else np.asarray(weights, dtype=float)
        self.A = self.W[:, None] * tc.M
        n = self.A.shape[1]
        G = self.A.T @ self.A
        # trace(G) / n == sum(A²) / n
        G[np.diag_indices(n)] += reg * np.trace(G) / n
        self.G = G
        self.lo = np.zeros(n)
        self.amax2 = np.abs(self.A).max() ** 2
        self._cache = {}

    def __call__(self, f_body, tau_body, start=None):
        """``start`` warm-starts the active set from a previous allocation."""
        demand = np.concatenate([np.asarray(f_body, dtype=float), np.asarray(tau_body, dtype=float)])
        tc, W = self.tc, self.W
        b = W * demand
        scale = self.amax2 * max(np.abs(b).max(), tc.f_max.max())
        u, _ = bounded_lsq_normal(self.G, self.A.T @ b, self.lo, tc.f_max, start, scale=scale,
                                  cache=self._cache)
        u = np.clip(u, 0.0, tc.f_max)
        r = tc.M @ u - demand
        return Allocation(u, float(np.linalg.norm(r)), float(np.linalg.norm(W * r)))


def allocate(f_body, tau_body, tc, weights=None, reg=1e-10, start=None):
    """One-shot :class:`Allocator` call."""
    return Allocator(tc, weights, reg)(f_body, tau_body, start)


def los_guidance(pos_est, q_est, target, k_v, v_max=math.inf):
    """Heading correction toward the target and distance-proportional speed.

    Returns ``(heading_correction, forward_speed)``; zero command when the
    deputy sits on the target.
    """
    d = np.asarray(target, dtype=float) - np.asarray(pos_est, dtype=float)
    dist = float(np.linalg.norm(d))
    if dist < 1e-9:
        return 0.0, 0.0
    los = math.atan2(d[1], d[0])
    return wrap_angle(los - yaw_of(q_est)), min(k_v * dist, v_max)
