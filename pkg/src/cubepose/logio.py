"""Sensor-log CSV format, offline replay and result emission.

Sensor log
----------
Plain text, one record per line: ``t,kind,payload...``. Blank lines and
lines starting with ``#`` are ignored. Payloads by kind:

==========  ===============================================================
``imu``     ``gx,gy,gz,ax,ay,az``: gyro (rad/s) and accelerometer (m/s²), body
``range``   ``anchor_id,range[,outlier]``: metres; outlier flag 0/1 optional
``truth``   ``x,y,z,qx,qy,qz,qw[,vx,vy,vz]``: chief-frame position/velocity
``cmd``     ``fx,fy,fz``: body specific force used for propagation (m/s²)
==========  ===============================================================

An ``imu`` or ``cmd`` record stamped ``t`` covers the interval ending at
``t``. Timestamps must be non-decreasing within each kind.
"""
import csv
import io
import math
import os
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import eskf
from .attitude import UNIT_TOL, normalize, quat_conjugate, quat_from_rotvec, quat_mul, quat_to_dcm, rotvec_from_quat
from .errors import ConfigurationError, LogOrderError, LogParseError
from .sensors import ImuSample, RangeSample
from .sim import (CHANNELS, RANGE_FIELDS, RunLog, apply_range, consistency_check, estimation_errors,
                  filter_tag_arm, initial_filter, rng_streams, truth_free_report)

ARITY = {"imu": (6,), "range": (2, 3), "truth": (7, 10), "cmd": (3,)}
# processing order for records sharing a timestamp
KIND_RANK = {"cmd": 0, "imu": 1, "range": 2, "truth": 3}
STALE_TOL = 1e-3   # s
LOG_HEADER = "# cubepose sensor log v1: t,kind,payload"

STATE_COLUMNS = (
    ["t"]
    + [f"truth_{c}" for c in ("x", "y", "z", "vx", "vy", "vz", "qx", "qy", "qz", "qw")]
    + [f"est_{c}" for c in ("x", "y", "z", "vx", "vy", "vz", "qx", "qy", "qz", "qw")]
)
ERROR_COLUMNS = ["t"] + [f"err_{c}" for c in CHANNELS] + [f"sigma3_{c}" for c in CHANNELS]
RANGE_COLUMNS = list(RANGE_FIELDS)
REPORT_COLUMNS = ["metric", "value"]


@dataclass
class TruthRecord:
    t: float
    x: np.ndarray
    q: np.ndarray
    v: np.ndarray = None   # chief frame; optional


@dataclass
class SensorStreams:
    imu: list = field(default_factory=list)
    ranges: list = field(default_factory=list)
    truth: list = field(default_factory=list)
    cmd: list = field(default_factory=list)   # (t, body specific force)

    def __len__(self):
        return len(self.imu) + len(self.ranges) + len(self.truth) + len(self.cmd)


# --- writing -------------------------------------------------------------------

def _fmt(v):
    return repr(float(v))


def atomic_write(path, text):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_sensor_log(streams):
    rows = []
    for s in streams.cmd:
        rows.append((s[0], "cmd", [_fmt(v) for v in s[1]]))
    for s in streams.imu:
        rows.append((s.t, "imu", [_fmt(v) for v in (*s.gyro, *s.accel)]))
    for r in streams.ranges:
        rows.append((r.t, "range", [str(int(r.anchor_id)), _fmt(r.range), str(int(r.outlier))]))
    for tr in streams.truth:
        vals = [*tr.x, *tr.q] + ([] if tr.v is None else [*tr.v])
        rows.append((tr.t, "truth", [_fmt(v) for v in vals]))
    # stable sort keeps per-kind order for equal timestamps
    rows.sort(key=lambda r: (r[0], KIND_RANK[r[1]]))
    lines = [LOG_HEADER]
    lines += [",".join([_fmt(t), kind, *payload]) for t, kind, payload in rows]
    return "\n".join(lines) + "\n"


def write_sensor_log(path, streams):
    atomic_write(path, format_sensor_log(streams))


def streams_from_run(log, include_truth=True, include_cmd=True):
    """Export a simulated run as the sensor streams an instrumented vehicle would record."""
    s = SensorStreams()
    for k in range(1, log.n_epochs):
        s.imu.append(ImuSample(float(log.t[k]), log.gyro[k].copy(), log.accel[k].copy()))
        if include_cmd:
            s.cmd.append((float(log.t[k]), log.prop_input[k].copy()))
    for r in log.ranges:
        s.ranges.append(RangeSample(r[0], int(r[2]), r[3], bool(r[8])))
    if include_truth and log.has_truth:
        for k in range(log.n_epochs):
            v = None if log.truth_v is None else quat_to_dcm(log.truth_q[k]) @ log.truth_v[k]
            s.truth.append(TruthRecord(float(log.t[k]), log.truth_x[k].copy(), log.truth_q[k].copy(), v))
    return s


# --- parsing -------------------------------------------------------------------

def _float(tok, lineno, what):
    try:
        v = float(tok)
    except ValueError:
        raise LogParseError(f"{what} {tok!r} is not a number", lineno) from None
    if not math.isfinite(v):
        raise LogParseError(f"{what} {tok!r} is not finite", lineno)
    return v


def parse_sensor_log_text(text, source="<string>"):
    streams = SensorStreams()
    last_t = {}
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
            continue
        if len(row) < 2:
            raise LogParseError("expected t,kind,payload", lineno)
        t = _float(row[0], lineno, "timestamp")
        kind = row[1].strip()
        payload = row[2:]
        if kind not in ARITY:
            raise LogParseError(f"unknown record kind {kind!r}", lineno)
        if len(payload) not in ARITY[kind]:
            want = " or ".join(str(a) for a in ARITY[kind])
            raise LogParseError(f"{kind} record needs {want} payload fields, got {len(payload)}", lineno)
        if kind in last_t and t < last_t[kind]:
            raise LogOrderError(f"{kind} timestamp {t!r} is earlier than previous {last_t[kind]!r}", lineno)
        last_t[kind] = t
        if kind == "range":
            try:
                anchor_id = int(payload[0])
            except ValueError:
                raise LogParseError(f"anchor id {payload[0]!r} is not an integer", lineno) from None
            outlier = False
            if len(payload) == 3:
                if payload[2].strip() not in ("0", "1"):
                    raise LogParseError(f"outlier flag must be 0 or 1, got {payload[2]!r}", lineno)
                outlier = payload[2].strip() == "1"
            streams.ranges.append(RangeSample(t, anchor_id, _float(payload[1], lineno, "range"), outlier))
            continue
        vals = np.array([_float(p, lineno, "field") for p in payload])
        if kind == "imu":
            streams.imu.append(ImuSample(t, vals[:3], vals[3:]))
        elif kind == "cmd":
            streams.cmd.append((t, vals))
        else:
            q = vals[3:7]
            # renormalize only beyond tolerance so exact unit values round-trip
            if abs(q @ q - 1.0) > 2.0 * UNIT_TOL:
                try:
                    q = normalize(q)
                except ValueError as exc:
                    raise LogParseError(str(exc), lineno) from None
            streams.truth.append(TruthRecord(t, vals[:3], q, vals[7:10] if len(vals) == 10 else None))
    if len(streams) == 0:
        warnings.warn(f"sensor log {source} contains no records", stacklevel=2)
    return streams


def parse_sensor_log(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"sensor log not found: {path}")
    return parse_sensor_log_text(path.read_text(), source=str(path))


# --- replay --------------------------------------------------------------------

def interpolate_truth(records, times):
    """Truth at ``times``: linear in position/velocity, geodesic in attitude.

    Epochs outside the recorded span are NaN. Exact node times return the
    recorded values unchanged.
    """
    n = len(times)
    x = np.full((n, 3), np.nan)
    q = np.full((n, 4), np.nan)
    has_v = all(r.v is not None for r in records)
    v = np.full((n, 3), np.nan) if has_v else None
    if not records:
        return x, q, v
    tr = np.array([r.t for r in records])
    for k, t in enumerate(times):
        if t < tr[0] or t > tr[-1]:
            continue
        j = int(np.searchsorted(tr, t, side="right")) - 1
        a = records[j]
        if a.t == t or j == len(records) - 1:
            x[k], q[k] = a.x, a.q
            if has_v:
                v[k] = a.v
            continue
        b = records[j + 1]
        s = (t - a.t) / (b.t - a.t)
        x[k] = a.x + s * (b.x - a.x)
        q[k] = quat_mul(a.q, quat_from_rotvec(s * rotvec_from_quat(quat_mul(quat_conjugate(a.q), b.q))))
        if has_v:
            v[k] = a.v + s * (b.v - a.v)
    return x, q, v


def replay(streams, cfg):
    """Drive the filter from recorded streams. Returns ``(RunLog, ConsistencyReport)``.

    Propagation uses ``cmd`` records when present and the accelerometer minus
    its configured bias otherwise. A range record is applied at the first
    filter epoch at or after its timestamp when within 1 ms of it, and is
    otherwise dropped as stale (counted in ``RunLog.n_stale_ranges``).
    """
    if not streams.imu:
        raise ConfigurationError("replay needs a non-empty IMU stream")
    anchors = cfg.anchor_map()
    missing = sorted({r.anchor_id for r in streams.ranges} - set(anchors))
    if missing:
        raise ConfigurationError(f"range records reference unknown anchor id(s) {missing}")

    events = [(s.t, KIND_RANK["imu"], i) for i, s in enumerate(streams.imu)]
    events += [(r.t, KIND_RANK["range"], i) for i, r in enumerate(streams.ranges)]
    events += [(c[0], KIND_RANK["cmd"], i) for i, c in enumerate(streams.cmd)]
    events.sort()

    fs = initial_filter(cfg, rng_streams(cfg.seed)["init"])
    arm = filter_tag_arm(cfg)
    accel_bias = np.asarray(cfg.accel.bias, dtype=float)
    nc = cfg.filter.noise
    n = len(streams.imu) + 1
    t = np.zeros(n)
    est_x, est_v, est_q = np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 4))
    P = np.zeros((n, 9, 9))
    gyro, accel, prop = (np.full((n, 3), np.nan) for _ in range(3))
    ranges, pending = [], []
    n_stale = 0
    n_outliers = 0
    cmd = None
    k = 0

    epoch_t = fs.t

    def apply_pending():
        nonlocal fs, n_stale, n_outliers
        for meas in pending:
            if abs(epoch_t - meas.t) <= STALE_TOL:
                fs, row = apply_range(fs, meas, anchors[meas.anchor_id], arm, cfg, k)
                ranges.append(row)
                n_outliers += meas.outlier
            else:
                n_stale += 1
                warnings.warn(f"range at t={meas.t!r} is stale at filter epoch t={epoch_t!r}; dropped",
                              stacklevel=3)
        pending.clear()

    def record():
        t[k], est_x[k], est_v[k], est_q[k], P[k] = epoch_t, fs.x, fs.rho, fs.q, fs.P

    for et, rank, i in events:
        if rank == KIND_RANK["cmd"]:
            cmd = streams.cmd[i][1]
        elif rank == KIND_RANK["imu"]:
            imu = streams.imu[i]
            dt = imu.t - fs.t
            if not dt > 0:
                raise LogOrderError(f"IMU sample at t={imu.t!r} does not advance the filter (t={fs.t!r})")
            record()
            u = cmd if cmd is not None else np.asarray(imu.accel) - accel_bias
            fs = eskf.predict(fs, imu, u, dt, nc)
            cmd = None
            k += 1
            epoch_t = imu.t
            gyro[k], accel[k], prop[k] = imu.gyro, imu.accel, u
            apply_pending()
        else:
            pending.append(streams.ranges[i])
            if streams.ranges[i].t <= epoch_t + STALE_TOL:
                apply_pending()
    apply_pending()
    record()

    sp = np.array(cfg.control.target_position, dtype=float) if cfg.mode == "closed_loop" else None
    log = RunLog(cfg.name, t, est_x, est_v, est_q, P, gyro=gyro, accel=accel, prop_input=prop,
                 ranges=ranges, n_injected_outliers=n_outliers, setpoint=sp, n_stale_ranges=n_stale)
    if streams.truth:
        tx, tq, tv = interpolate_truth(streams.truth, t)
        log.truth_x, log.truth_q = tx, tq
        if tv is not None:
            body = np.full_like(tv, np.nan)
            ok = np.isfinite(tq).all(axis=1)
            for j in np.flatnonzero(ok):
                body[j] = quat_to_dcm(tq[j]).T @ tv[j]
            log.truth_v = body
        report = consistency_check(log)
    else:
        report = truth_free_report(log)
    return log, report


# --- results -------------------------------------------------------------------

def _csv_text(header, rows):
    out = [",".join(header)]
    for r in rows:
        out.append(",".join(_cell(v) for v in r))
    return "\n".join(out) + "\n"


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def state_rows(log):
    nan3, nan4 = [math.nan] * 3, [math.nan] * 4
    for k in range(log.n_epochs):
        tx = log.truth_x[k] if log.truth_x is not None else nan3
        tv = log.truth_v[k] if log.truth_v is not None else nan3
        tq = log.truth_q[k] if log.truth_q is not None else nan4
        yield [log.t[k], *tx, *tv, *tq, *log.est_x[k], *log.est_v[k], *log.est_q[k]]


def error_rows(log):
    sig3 = 3.0 * np.sqrt(np.maximum(np.diagonal(log.P, axis1=1, axis2=2), 0.0))
    if log.has_truth and log.n_epochs:
        err = estimation_errors(log)
    else:
        err = np.full((log.n_epochs, 9), np.nan)
    for k in range(log.n_epochs):
        yield [log.t[k], *err[k], *sig3[k]]


def emit_results(log, report, out_dir):
    """Write states.csv, errors.csv, ranges.csv and report.csv into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "states.csv": _csv_text(STATE_COLUMNS, state_rows(log)),
        "errors.csv": _csv_text(ERROR_COLUMNS, error_rows(log)),
        "ranges.csv": _csv_text(RANGE_COLUMNS, log.ranges),
        "report.csv": _csv_text(REPORT_COLUMNS, [] if report is None else report.rows()),
    }
    for name, text in files.items():
        atomic_write(out / name, text)
    return [out / name for name in files]


def emit_monte_carlo(mc, out_dir):
    """Aggregate report.csv plus one runs.csv row per run."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "report.csv", _csv_text(REPORT_COLUMNS, mc.rows()))
    keys = [k for k, _ in mc.runs[0].rows()]
    rows = [[i, *[v for _, v in r.rows()]] for i, r in enumerate(mc.runs)]
    atomic_write(out / "runs.csv", _csv_text(["run", *keys], rows))
    return [out / "report.csv", out / "runs.csv"]
