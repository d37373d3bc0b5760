import math
from dataclasses import replace

import numpy as np
import pytest

from cubepose import config as cfgmod
from cubepose.attitude import IDENTITY, quat_from_rotvec, quat_to_dcm
from cubepose.errors import ConfigurationError
from cubepose.rigid_body import Wrench, step
from cubepose.control import default_thrusters
from cubepose.sensors import AccelModel, UwbModel
from cubepose.sim import (CHANNELS, RunLog, aggregate, consistency_check, estimation_errors, initial_truth,
                          monte_carlo, run_closed_loop, run_translation, run_turntable, simulate)

LOG_ARRAYS = ("t", "est_x", "est_v", "est_q", "P", "truth_x", "truth_v", "truth_q", "truth_w",
              "gyro", "accel", "prop_input", "thrust")


def noise_free(cfg):
    return replace(cfg, gyro=replace(cfg.gyro, sigma_rate=0.0), accel=AccelModel(0.0),
                   uwb=UwbModel(0.0, 0.0, 0.0),
                   filter=replace(cfg.filter, sample_initial_error=False))


def short(cfg, duration=5.0):
    return replace(cfg, duration=duration)


def assert_logs_identical(a, b):
    for name in LOG_ARRAYS:
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name), err_msg=name)
    assert a.ranges == b.ranges or all(
        x == y or (isinstance(x, float) and math.isnan(x) and math.isnan(y))
        for ra, rb in zip(a.ranges, b.ranges) for x, y in zip(ra, rb))
    assert a.n_injected_outliers == b.n_injected_outliers


# --- runs ----------------------------------------------------------------------

def test_noise_free_closed_loop_tracks_truth():
    log = run_closed_loop(noise_free(cfgmod.preset_pose_acquisition()))
    err = np.linalg.norm(log.truth_x - log.est_x, axis=1)
    assert err[-1] < 1e-6
    assert err.max() < 1e-6


def test_noise_free_translation_tracks_truth():
    log = run_translation(short(noise_free(cfgmod.preset_translation()), 20.0))
    assert np.linalg.norm(log.truth_x[-1] - log.est_x[-1]) < 1e-6


@pytest.mark.parametrize("preset", ["pose_acquisition", "turntable", "translation"])
def test_same_seed_bitwise_identical(preset):
    cfg = short(cfgmod.preset(preset), 3.0)
    assert_logs_identical(simulate(cfg), simulate(cfg))


def test_different_seeds_differ():
    cfg = short(cfgmod.preset_pose_acquisition(), 2.0)
    a, b = simulate(cfg), simulate(replace(cfg, seed=1))
    assert not np.array_equal(a.est_x, b.est_x)


def test_epochs_uniform_and_counts_consistent():
    cfg = short(cfgmod.preset_pose_acquisition(), 3.0)
    log = simulate(cfg)
    assert log.n_epochs == cfg.n_steps + 1
    np.testing.assert_allclose(np.diff(log.t), cfg.dt, rtol=1e-9)
    assert len(log.ranges) == cfg.n_steps // cfg.range_every + 1
    assert log.thrust.shape == (log.n_epochs, 10)


def test_outlier_bookkeeping():
    log = simulate(short(cfgmod.preset_pose_acquisition(), 20.0))
    table = log.range_table()
    assert log.n_injected_outliers == int(np.sum(table["outlier"]))
    assert log.n_injected_outliers > 0


def test_truth_depends_only_on_thrust():
    cfg = short(cfgmod.preset_translation(), 10.0)
    log = run_translation(cfg)
    M = default_thrusters().M
    mp = cfg.mass_properties
    s = initial_truth(cfg)
    for k in range(cfg.n_steps):
        w = M @ log.thrust[k]
        # epoch times are k * dt, so the step is their difference
        s = step(s, Wrench(w[:3], w[3:]), mp, (k + 1) * cfg.dt - k * cfg.dt)
        np.testing.assert_array_equal(s.x, log.truth_x[k + 1])
        np.testing.assert_array_equal(s.q, log.truth_q[k + 1])
        np.testing.assert_array_equal(quat_to_dcm(s.q).T @ s.v, log.truth_v[k + 1])


def test_turntable_noise_free_envelope():
    cfg = short(noise_free(cfgmod.preset_turntable()), 30.0)
    log = run_turntable(cfg)
    r = np.linalg.norm(cfg.tag_arm)
    np.testing.assert_array_equal(log.truth_x, 0.0)
    tab = log.range_table()
    for a in cfg.anchors:
        d = np.linalg.norm(a.position)
        z = tab["measured"][tab["anchor_id"] == a.id]
        assert z.min() >= d - r - 1e-9 and z.max() <= d + r + 1e-9
    # every epoch, every anchor: one full revolution passes both extremes
    tags = log.truth_x + np.einsum("kij,j->ki", np.array([quat_to_dcm(q) for q in log.truth_q]), cfg.tag_arm)
    dtheta = cfg.turntable.rate * cfg.dt
    slack = r * (1 - math.cos(dtheta / 2)) + 1e-12
    for a in cfg.anchors:
        d = np.linalg.norm(a.position)
        z = np.linalg.norm(tags - np.array(a.position), axis=1)
        assert d - r - 1e-9 <= z.min() <= d - r + slack
        assert d + r - slack <= z.max() <= d + r + 1e-9


def test_turntable_spin_reverses():
    cfg = short(cfgmod.preset_turntable(), 10.0)
    log = run_turntable(cfg)
    half = len(log.t) // 2
    assert np.all(log.truth_w[1: half - 1, 2] > 0) and np.all(log.truth_w[half + 1:, 2] < 0)


def test_mode_and_arm_validation():
    with pytest.raises(ConfigurationError):
        run_closed_loop(cfgmod.preset_turntable())
    with pytest.raises(ConfigurationError):
        run_turntable(replace(cfgmod.preset_turntable(), imu_arm=(0.01, 0, 0)))
    with pytest.raises(ConfigurationError):
        run_turntable(replace(cfgmod.preset_turntable(), tag_arm=(0.0, 0, 0)))
    with pytest.raises(ConfigurationError):
        run_translation(cfgmod.preset_pose_acquisition())
    with pytest.raises(ConfigurationError):
        replace(cfgmod.preset_pose_acquisition(), dt=0.0)


# --- consistency_check ---------------------------------------------------------

def hand_log(n=100, sigma=0.01):
    P = np.tile(np.eye(9) * sigma ** 2, (n, 1, 1))
    z3 = np.zeros((n, 3))
    q = np.tile(IDENTITY, (n, 1))
    return RunLog("hand", np.arange(n) * 0.1, z3.copy(), z3.copy(), q.copy(), P,
                  z3.copy(), z3.copy(), q.copy(), z3.copy())


def test_zero_error_full_containment():
    rep = consistency_check(hand_log())
    assert all(rep.containment[ch] == 1.0 for ch in CHANNELS)
    assert rep.mean_nees_pos == 0.0 and rep.terminal_pos_error == 0.0


def test_ten_violations_in_hundred():
    sigma = 0.01
    log = hand_log(sigma=sigma)
    big = 4 * sigma
    log.truth_x[:10] = big
    log.truth_v[:10] = big
    for k in range(10):
        log.truth_q[k] = quat_from_rotvec([big, big, big])
    rep = consistency_check(log)
    for ch in CHANNELS:
        assert rep.containment[ch] == pytest.approx(0.90, abs=1e-12)
        assert rep.inside_counts[ch] == 90


def test_consistency_needs_truth():
    log = hand_log()
    with pytest.raises(ConfigurationError):
        consistency_check(replace(log, truth_x=None))
    with pytest.raises(ConfigurationError):
        consistency_check(RunLog.empty())


def _linear_kf_log(rng, n=200, dt=0.1, q=1e-4, r=0.05 ** 2):
    """Three independent 1-D constant-velocity Kalman filters with position fixes."""
    F = np.array([[1.0, dt], [0.0, 1.0]])
    Qd = q * np.array([[dt ** 3 / 3, dt ** 2 / 2], [dt ** 2 / 2, dt]])
    Lq = np.linalg.cholesky(Qd)
    H = np.array([1.0, 0.0])
    P0 = np.diag([0.1 ** 2, 0.02 ** 2])
    x = np.sqrt(np.diag(P0))[None, :] * rng.standard_normal((3, 2))
    xh = np.zeros((3, 2))
    P = P0.copy()
    log = hand_log(n)
    for k in range(n):
        if k > 0:
            x = x @ F.T + rng.standard_normal((3, 2)) @ Lq.T
            xh = xh @ F.T
            P = F @ P @ F.T + Qd
        z = x[:, 0] + math.sqrt(r) * rng.standard_normal(3)
        S = H @ P @ H + r
        K = P @ H / S
        xh = xh + np.outer(z - xh[:, 0], K)
        IKH = np.eye(2) - np.outer(K, H)
        P = IKH @ P @ IKH.T + r * np.outer(K, K)
        log.truth_x[k], log.truth_v[k] = x[:, 0], x[:, 1]
        log.est_x[k], log.est_v[k] = xh[:, 0], xh[:, 1]
        C = np.zeros((9, 9))
        for i in range(3):
            C[np.ix_([i, 3 + i], [i, 3 + i])] = P
        C[6:, 6:] = np.eye(3)
        log.P[k] = C
    return log


def test_nees_of_exact_linear_filter():
    rng = np.random.default_rng(0)
    reps = [consistency_check(_linear_kf_log(rng)) for _ in range(100)]
    nees_pos = np.mean([r.mean_nees_pos for r in reps])
    nees_pv = np.mean([r.mean_nees_posvel for r in reps])
    assert abs(nees_pos / 3.0 - 1.0) < 0.15
    assert abs(nees_pv / 6.0 - 1.0) < 0.15


def test_estimation_errors_body_frame_attitude():
    log = hand_log(5)
    da = np.array([0.01, -0.02, 0.03])
    log.truth_q[:] = quat_from_rotvec(da)
    np.testing.assert_allclose(estimation_errors(log)[:, 6:9], np.tile(da, (5, 1)), atol=1e-15)


# --- Monte Carlo ---------------------------------------------------------------

def test_single_run_monte_carlo_matches_direct_run():
    cfg = short(cfgmod.preset_pose_acquisition(), 4.0)
    mc = monte_carlo(cfg, 1, seed0=7)
    direct = consistency_check(run_closed_loop(replace(cfg, seed=7)))
    assert mc.runs[0] == direct
    assert mc.mean_nees_pos == direct.mean_nees_pos
    assert mc.reject_fraction == direct.reject_fraction


def test_identical_runs_have_zero_spread():
    rep = consistency_check(simulate(short(cfgmod.preset_pose_acquisition(), 3.0)))
    mc = aggregate([rep] * 4)
    assert mc.std_nees_pos == 0.0
    assert mc.terminal_pos_error_std == 0.0 and mc.terminal_att_error_std == 0.0
    assert mc.containment == rep.containment


def test_monte_carlo_rejects_zero_runs():
    with pytest.raises(ConfigurationError):
        monte_carlo(cfgmod.preset_pose_acquisition(), 0)


def test_report_fractions_in_unit_interval():
    rep = consistency_check(simulate(short(cfgmod.preset_pose_acquisition(), 10.0)))
    assert 0.0 <= rep.reject_fraction <= 1.0
    assert all(0.0 <= v <= 1.0 for v in rep.containment.values())
