"""Truth + estimate co-simulation, consistency metrics and Monte Carlo batches.

Each epoch ``k`` (time ``t_k = k dt``):

1. the filter is propagated with the IMU sample covering ``[t_{k-1}, t_k]``;
2. on UWB epochs one anchor is drawn uniformly, a range is synthesized from
   the true tag position, and the filter is updated and reset;
3. the epoch is logged;
4. the controller computes a wrench from the estimate, thrust is allocated,
   and truth is integrated over ``[t_k, t_{k+1}]``. The IMU sample for that
   interval is generated from the truth step.

Truth and filter are driven by the same allocated thrust.
"""
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import eskf
from .attitude import attitude_error, quat_from_rotvec, quat_mul, quat_to_dcm, yaw_of
from .control import (Allocator, Setpoint, allocation_weights, compute_control, los_guidance,
                      pose_lqr, to_body_frame)
from .errors import ConfigurationError, DegenerateGeometryError
from .rigid_body import RigidBodyState, Wrench, step_with_rate, tag_accel
from .sensors import (ImuSample, accel_measure, bias_walk_step, gyro_measure, pick_anchor,
                      uwb_measure)

CHANNELS = ("x", "y", "z", "vx", "vy", "vz", "ax", "ay", "az")
RANGE_FIELDS = ("t", "epoch", "anchor_id", "measured", "expected", "innovation",
                "variance", "accepted", "outlier")
TAIL_FRACTION = 0.2
STREAMS = ("init", "gyro", "accel", "uwb", "anchor", "bias")


def rng_streams(seed):
    """Independent generators per noise source, derived from one seed."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(STREAMS, children)}


@dataclass
class RunLog:
    """Per-epoch record of one run. Truth arrays are ``None`` for truth-free replays.

    ``truth_v`` and ``est_v`` are body-frame velocities. IMU arrays hold the
    sample that propagated the filter *into* each epoch (row 0 is unused).
    """

    name: str
    t: np.ndarray
    est_x: np.ndarray
    est_v: np.ndarray
    est_q: np.ndarray
    P: np.ndarray
    truth_x: Optional[np.ndarray] = None
    truth_v: Optional[np.ndarray] = None
    truth_q: Optional[np.ndarray] = None
    truth_w: Optional[np.ndarray] = None
    gyro: Optional[np.ndarray] = None
    accel: Optional[np.ndarray] = None
    prop_input: Optional[np.ndarray] = None
    thrust: Optional[np.ndarray] = None
    ranges: list = field(default_factory=list)
    n_injected_outliers: int = 0
    setpoint: Optional[np.ndarray] = None
    n_stale_ranges: int = 0

    @property
    def n_epochs(self):
        return len(self.t)

    @property
    def has_truth(self):
        return self.truth_x is not None

    def range_table(self):
        """Range records as a dict of arrays keyed by :data:`RANGE_FIELDS`."""
        cols = list(zip(*self.ranges)) if self.ranges else [()] * len(RANGE_FIELDS)
        return {k: np.array(c) for k, c in zip(RANGE_FIELDS, cols)}

    @classmethod
    def empty(cls, name="empty"):
        return cls(name, np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)),
                   np.zeros((0, 9, 9)), np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)),
                   np.zeros((0, 3)))


class _Recorder:
    def __init__(self, name, n, n_thr):
        self.name = name
        self.t = np.zeros(n)
        self.est_x = np.zeros((n, 3))
        self.est_v = np.zeros((n, 3))
        self.est_q = np.zeros((n, 4))
        self.P = np.zeros((n, 9, 9))
        self.truth_x = np.zeros((n, 3))
        self.truth_v = np.zeros((n, 3))
        self.truth_q = np.zeros((n, 4))
        self.truth_w = np.zeros((n, 3))
        self.gyro = np.full((n, 3), np.nan)
        self.accel = np.full((n, 3), np.nan)
        self.prop_input = np.full((n, 3), np.nan)
        self.thrust = np.zeros((n, n_thr))
        self.ranges = []

    def epoch(self, k, t, fs, truth):
        self.t[k] = t
        self.est_x[k] = fs.x
        self.est_v[k] = fs.rho
        self.est_q[k] = fs.q
        self.P[k] = fs.P
        self.truth_x[k] = truth.x
        self.truth_v[k] = quat_to_dcm(truth.q).T @ truth.v
        self.truth_q[k] = truth.q
        self.truth_w[k] = truth.w

    def log(self, **extra):
        return RunLog(self.name, self.t, self.est_x, self.est_v, self.est_q, self.P,
                      self.truth_x, self.truth_v, self.truth_q, self.truth_w,
                      self.gyro, self.accel, self.prop_input, self.thrust, self.ranges, **extra)


def initial_truth(cfg):
    ini = cfg.initial
    return RigidBodyState(np.array(ini.position, dtype=float), np.array(ini.velocity, dtype=float),
                          np.array(ini.attitude, dtype=float), np.array(ini.rates, dtype=float))


def initial_filter(cfg, rng):
    """Filter initialization shared by simulation and replay."""
    truth = initial_truth(cfg)
    rho = quat_to_dcm(truth.q).T @ truth.v
    return eskf.init(truth.x, rho, truth.q, cfg.filter.cov0, bias=cfg.gyro.bias,
                     rng=rng if cfg.filter.sample_initial_error else None, t=0.0)


def filter_tag_arm(cfg):
    return np.array(cfg.tag_arm if cfg.filter.lever_arm_aware else (0.0, 0.0, 0.0), dtype=float)


def range_epoch(fs, truth, t, k, cfg, rngs, anchors, arm_filter, rec):
    """Synthesize one range and run update + reset. Returns (filter, injected_outlier)."""
    anchor = pick_anchor(anchors, rngs["anchor"])
    tag_true = truth.x + quat_to_dcm(truth.q) @ np.asarray(cfg.tag_arm, dtype=float)
    meas = uwb_measure(tag_true, anchor, cfg.uwb, rngs["uwb"], t=t)
    fs, rec_row = apply_range(fs, meas, anchor, arm_filter, cfg, k)
    rec.ranges.append(rec_row)
    return fs, meas.outlier


def apply_range(fs, meas, anchor, arm_filter, cfg, k):
    try:
        res = eskf.update(fs, meas, anchor, arm_filter, cfg.filter.noise, cfg.filter.gate,
                          attitude_update=cfg.filter.attitude_update)
    except DegenerateGeometryError:
        return fs, (meas.t, k, meas.anchor_id, meas.range, math.nan, math.nan, math.nan,
                    False, meas.outlier)
    fs = eskf.reset(res.state)
    return fs, (meas.t, k, meas.anchor_id, meas.range, res.expected, res.innovation,
                res.variance, res.accepted, meas.outlier)


def _yaw_quat(yaw):
    return np.array([0.0, 0.0, math.sin(0.5 * yaw), math.cos(0.5 * yaw)])


class _Controller:
    """Closed-loop controller state: gains, guidance and warm-started allocation."""

    def __init__(self, cfg):
        c = cfg.control
        self.cfg = c
        self.mass = cfg.mass
        self.gains = pose_lqr(cfg.mass, np.diag(cfg.inertia), c.weights)
        self.thrusters = c.build_thrusters()
        self.allocator = Allocator(self.thrusters, allocation_weights(torque_priority=c.torque_priority))
        self.target = np.array(c.target_position, dtype=float)
        self.sp = Setpoint(self.target.copy(), np.zeros(3), np.array(c.target_attitude, dtype=float))
        self.last_u = None

    def setpoint(self, fs):
        c = self.cfg
        if c.guidance == "los":
            dist = float(np.linalg.norm(self.target - fs.x))
            if dist > c.capture_radius:
                corr, speed = los_guidance(fs.x, fs.q, self.target, c.k_v, c.v_max)
                self.sp.attitude = _yaw_quat(yaw_of(fs.q) + corr)
                self.sp.velocity = speed * (self.target - fs.x) / dist
            else:
                self.sp.velocity = np.zeros(3)
        return self.sp

    def wrench(self, fs, w_hat):
        f_chief, tau = compute_control(fs, self.setpoint(fs), self.gains, self.cfg.f_limit,
                                       self.cfg.tau_limit, w_hat)
        return to_body_frame(f_chief, fs.q), tau

    def thrust(self, f_body, tau):
        alloc = self.allocator(f_body, tau, start=self.last_u)
        self.last_u = alloc.thrust
        return alloc.thrust

    def realized(self, u):
        w = self.thrusters.M @ u
        return Wrench(w[:3], w[3:])


def _translation_accel(cfg, t):
    """Alternating constant acceleration: +X, -X, +Y, -Y, repeat (chief frame)."""
    tc = cfg.translation
    seg = int(t // tc.segment) % 4
    a = np.zeros(3)
    a[0 if seg < 2 else 1] = tc.accel if seg % 2 == 0 else -tc.accel
    return a


def _turntable_rate(cfg, t):
    sign = 1.0 if t < cfg.turntable.reverse_at * cfg.duration else -1.0
    return np.array([0.0, 0.0, sign * cfg.turntable.rate])


def simulate(cfg):
    """Run one scenario (any mode) and return its :class:`RunLog`."""
    rngs = rng_streams(cfg.seed)
    mp = cfg.mass_properties
    anchors = cfg.anchors
    arm_filter = filter_tag_arm(cfg)
    imu_arm = np.asarray(cfg.imu_arm, dtype=float)
    nc = cfg.filter.noise
    gyro_model = cfg.gyro
    n = cfg.n_steps
    ctrl = _Controller(cfg) if cfg.mode != "turntable_open_loop" else None
    n_thr = ctrl.thrusters.M.shape[1] if ctrl else 0
    rec = _Recorder(cfg.name, n + 1, n_thr)

    truth = initial_truth(cfg)
    fs = initial_filter(cfg, rngs["init"])
    w_hat = np.zeros(3)
    accel_in = np.zeros(3)
    n_outliers = 0
    imu = None
    for k in range(n + 1):
        t = k * cfg.dt
        if k > 0:
            fs = eskf.predict(fs, imu, accel_in, t - fs.t, nc)
        if k % cfg.range_every == 0:
            fs, outlier = range_epoch(fs, truth, t, k, cfg, rngs, anchors, arm_filter, rec)
            n_outliers += outlier
        rec.epoch(k, t, fs, truth)
        if k == n:
            break

        t_next = (k + 1) * cfg.dt
        dt = t_next - t
        if cfg.mode == "turntable_open_loop":
            w = _turntable_rate(cfg, t)
            q1 = quat_mul(truth.q, quat_from_rotvec(w * dt))
            new_truth, w_mid = RigidBodyState(truth.x.copy(), truth.v.copy(), q1, w), w
            f_body = np.zeros(3)
            w_dot = np.zeros(3)
        else:
            if cfg.mode == "closed_loop":
                f_cmd, tau_cmd = ctrl.wrench(fs, w_hat)
            else:
                f_cmd = to_body_frame(mp.m * _translation_accel(cfg, t), fs.q)
                tau_cmd = np.zeros(3)
            u = ctrl.thrust(f_cmd, tau_cmd)
            rec.thrust[k] = u
            wrench = ctrl.realized(u)
            new_truth, w_mid = step_with_rate(truth, wrench, mp, dt)
            f_body = wrench.f
            w_dot = (new_truth.w - truth.w) / dt

        accel_in = f_body / mp.m
        sf = tag_accel(accel_in, w_dot, w_mid, imu_arm)
        imu = ImuSample(t_next, gyro_measure(w_mid, gyro_model, rngs["gyro"]),
                        accel_measure(sf, cfg.accel, rngs["accel"]))
        if gyro_model.sigma_bias_walk > 0:
            gyro_model = bias_walk_step(gyro_model, dt, rngs["bias"])
        rec.gyro[k + 1] = imu.gyro
        rec.accel[k + 1] = imu.accel
        rec.prop_input[k + 1] = accel_in
        w_hat = imu.gyro - fs.bias
        truth = new_truth

    sp = np.array(cfg.control.target_position, dtype=float) if cfg.mode == "closed_loop" else None
    return rec.log(n_injected_outliers=n_outliers, setpoint=sp)


def run_closed_loop(cfg):
    if cfg.mode != "closed_loop":
        raise ConfigurationError(f"run_closed_loop needs mode 'closed_loop', got {cfg.mode!r}")
    return simulate(cfg)


def run_turntable(cfg):
    if cfg.mode != "turntable_open_loop":
        raise ConfigurationError(f"run_turntable needs mode 'turntable_open_loop', got {cfg.mode!r}")
    if np.any(cfg.imu_arm):
        raise ConfigurationError("turntable runs need the IMU on the rotation axis (imu_arm = 0)")
    if not np.any(cfg.tag_arm):
        raise ConfigurationError("turntable runs need a non-zero tag lever arm")
    return simulate(cfg)


def run_translation(cfg):
    if cfg.mode != "translation_only":
        raise ConfigurationError(f"run_translation needs mode 'translation_only', got {cfg.mode!r}")
    return simulate(cfg)


# --- consistency ---------------------------------------------------------------

@dataclass
class ConsistencyReport:
    """Run metrics. Truth-dependent fields are ``None`` when truth is unavailable."""

    n_epochs: int              # epochs compared against truth (all epochs if truth-free)
    n_ranges: int
    n_rejected: int
    n_injected_outliers: int
    containment: Optional[dict] = None      # channel -> fraction within 3 sigma
    inside_counts: Optional[dict] = None    # channel -> epoch count within 3 sigma
    mean_nees_pos: Optional[float] = None
    mean_nees_posvel: Optional[float] = None
    terminal_pos_error: Optional[float] = None
    terminal_att_error: Optional[float] = None   # rad
    tail_rmse: Optional[tuple] = None            # per axis, final 20 % of epochs
    setpoint_error: Optional[float] = None       # truth position vs commanded

    @property
    def reject_fraction(self):
        return self.n_rejected / self.n_ranges if self.n_ranges else 0.0

    def rows(self):
        """Flat ``(metric, value)`` pairs; ``None`` becomes ``"unavailable"``."""
        out = [("n_epochs", self.n_epochs), ("n_ranges", self.n_ranges),
               ("n_rejected", self.n_rejected), ("reject_fraction", self.reject_fraction),
               ("n_injected_outliers", self.n_injected_outliers)]
        for ch in CHANNELS:
            out.append((f"containment_{ch}", None if self.containment is None else self.containment[ch]))
        out += [("mean_nees_pos", self.mean_nees_pos), ("mean_nees_posvel", self.mean_nees_posvel),
                ("terminal_pos_error", self.terminal_pos_error),
                ("terminal_att_error", self.terminal_att_error)]
        for i, ax in enumerate("xyz"):
            out.append((f"tail_rmse_{ax}", None if self.tail_rmse is None else self.tail_rmse[i]))
        out.append(("setpoint_error", self.setpoint_error))
        return [(k, "unavailable" if v is None else v) for k, v in out]


def estimation_errors(log):
    """Truth minus estimate per epoch: ``(N, 9)`` over position, body velocity, attitude.

    Epochs without truth are NaN.
    """
    e = np.zeros((log.n_epochs, 9))
    e[:, 0:3] = log.truth_x - log.est_x
    if log.truth_v is not None:
        e[:, 3:6] = log.truth_v - log.est_v
    else:
        e[:, 3:6] = np.nan
    for k in range(log.n_epochs):
        if np.isfinite(log.truth_q[k]).all():
            e[k, 6:9] = attitude_error(log.truth_q[k], log.est_q[k])
        else:
            e[k, 6:9] = np.nan
    return e


def _range_counts(log):
    n_ranges = len(log.ranges)
    n_rejected = sum(1 for r in log.ranges if not r[7])
    return n_ranges, n_rejected


def truth_free_report(log):
    n_ranges, n_rejected = _range_counts(log)
    return ConsistencyReport(log.n_epochs, n_ranges, n_rejected, log.n_injected_outliers)


def consistency_check(log):
    """Metrics over the epochs that have truth (all of them for simulated runs)."""
    if log.n_epochs == 0:
        raise ConfigurationError("log is empty")
    if not log.has_truth:
        raise ConfigurationError("consistency check needs truth")
    rows = np.isfinite(log.truth_x).all(axis=1) & np.isfinite(log.truth_q).all(axis=1)
    if not rows.any():
        raise ConfigurationError("truth does not cover any filter epoch")
    e = estimation_errors(log)[rows]
    P = log.P[rows]
    n = len(e)
    sig = np.sqrt(np.maximum(np.diagonal(P, axis1=1, axis2=2), 0.0))
    inside = np.abs(e) <= 3.0 * sig
    has_vel = bool(np.isfinite(e[:, 3:6]).all())
    counts, containment = {}, {}
    for i, ch in enumerate(CHANNELS):
        if 3 <= i < 6 and not has_vel:
            counts[ch], containment[ch] = 0, math.nan
        else:
            counts[ch] = int(inside[:, i].sum())
            containment[ch] = counts[ch] / n
    ep = e[:, 0:3]
    nees_pos = np.einsum("ki,ki->k", ep, np.linalg.solve(P[:, 0:3, 0:3], ep[..., None])[..., 0])
    nees_posvel = None
    if has_vel:
        epv = e[:, 0:6]
        nees_posvel = float(np.mean(np.einsum(
            "ki,ki->k", epv, np.linalg.solve(P[:, 0:6, 0:6], epv[..., None])[..., 0])))
    n_tail = max(1, int(math.ceil(TAIL_FRACTION * n)))
    tail = tuple(float(v) for v in np.sqrt(np.mean(ep[-n_tail:] ** 2, axis=0)))
    n_ranges, n_rejected = _range_counts(log)
    sp_err = None
    if log.setpoint is not None:
        last = np.flatnonzero(rows)[-1]
        sp_err = float(np.linalg.norm(log.truth_x[last] - log.setpoint))
    return ConsistencyReport(
        n_epochs=n, n_ranges=n_ranges, n_rejected=n_rejected,
        n_injected_outliers=log.n_injected_outliers,
        containment=containment, inside_counts=counts,
        mean_nees_pos=float(np.mean(nees_pos)), mean_nees_posvel=nees_posvel,
        terminal_pos_error=float(np.linalg.norm(ep[-1])),
        terminal_att_error=float(np.linalg.norm(e[-1, 6:9])),
        tail_rmse=tail, setpoint_error=sp_err,
    )


# --- Monte Carlo -------------------------------------------------------------

@dataclass
class MonteCarloReport:
    runs: list
    containment: dict          # pooled over all epochs of all runs
    mean_nees_pos: float
    std_nees_pos: float
    reject_fraction: float     # pooled over all ranges
    terminal_pos_error_mean: float
    terminal_pos_error_std: float
    terminal_att_error_mean: float
    terminal_att_error_std: float
    max_tail_rmse: float

    @property
    def n_runs(self):
        return len(self.runs)

    def rows(self):
        out = [("n_runs", self.n_runs)]
        out += [(f"containment_{ch}", v) for ch, v in self.containment.items()]
        out += [("mean_nees_pos", self.mean_nees_pos), ("std_nees_pos", self.std_nees_pos),
                ("reject_fraction", self.reject_fraction),
                ("terminal_pos_error_mean", self.terminal_pos_error_mean),
                ("terminal_pos_error_std", self.terminal_pos_error_std),
                ("terminal_att_error_mean", self.terminal_att_error_mean),
                ("terminal_att_error_std", self.terminal_att_error_std),
                ("max_tail_rmse", self.max_tail_rmse)]
        return out


def aggregate(reports):
    """Deterministic reduction of per-run reports, in run order."""
    if not reports:
        raise ConfigurationError("nothing to aggregate")
    n_ep = sum(r.n_epochs for r in reports)
    containment = {ch: sum(r.inside_counts[ch] for r in reports) / n_ep for ch in CHANNELS}
    nees = np.array([r.mean_nees_pos for r in reports])
    tpe = np.array([r.terminal_pos_error for r in reports])
    tae = np.array([r.terminal_att_error for r in reports])
    n_rng = sum(r.n_ranges for r in reports)
    return MonteCarloReport(
        runs=list(reports), containment=containment,
        mean_nees_pos=float(nees.mean()), std_nees_pos=float(nees.std()),
        reject_fraction=sum(r.n_rejected for r in reports) / n_rng if n_rng else 0.0,
        terminal_pos_error_mean=float(tpe.mean()), terminal_pos_error_std=float(tpe.std()),
        terminal_att_error_mean=float(tae.mean()), terminal_att_error_std=float(tae.std()),
        max_tail_rmse=float(max(max(r.tail_rmse) for r in reports)),
    )


def monte_carlo(cfg, n_runs, seed0=0):
    """Independent runs with seeds ``seed0, seed0 + 1, ...``."""
    if n_runs < 1:
        raise ConfigurationError("n_runs must be >= 1")
    reports = [consistency_check(simulate(replace(cfg, seed=seed0 + i))) for i in range(n_runs)]
    return aggregate(reports)
