import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from cubepose.attitude import (IDENTITY, attitude_error, dcm_from_rotvec, error_quat, normalize,
                               quat_conjugate, quat_from_axis_angle, quat_from_rotvec, quat_integrate,
                               quat_mul, quat_to_dcm, rotvec_from_quat, sigma_matrix, skew, wrap_angle,
                               yaw_of)
from cubepose.errors import InvalidQuaternionError

finite = st.floats(-10, 10, allow_nan=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)


@st.composite
def unit_quats(draw):
    v = np.array(draw(st.tuples(*[st.floats(-1, 1)] * 4)))
    if np.linalg.norm(v) < 1e-3:
        v = np.array([0.1, -0.2, 0.3, 0.9])
    return normalize(v)


def rotvecs(max_angle=3.0):
    return st.tuples(*[st.floats(-1, 1)] * 3).map(
        lambda v: np.array(v) * max_angle / math.sqrt(3.0))


def same_rotation(a, b, tol=1e-9):
    return min(np.abs(a - b).max(), np.abs(a + b).max()) <= tol


Z90 = quat_from_axis_angle((0, 0, 1), math.pi / 2)


# --- skew ----------------------------------------------------------------------

def test_skew_basis_example():
    np.testing.assert_array_equal(skew(np.array([0.0, 0, 1])) @ [1, 0, 0], [0, 1, 0])


def test_skew_of_self_vanishes_and_is_antisymmetric():
    v = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(skew(v) @ v, 0.0)
    np.testing.assert_array_equal(skew(v) + skew(v).T, 0.0)


@given(vec3, vec3, finite)
def test_skew_linear_and_anticommuting(a, b, s):
    np.testing.assert_allclose(skew(a) @ b, np.cross(a, b), atol=1e-9)
    np.testing.assert_allclose(skew(a) @ b, -skew(b) @ a, atol=1e-9)
    np.testing.assert_allclose(skew(s * a + b), s * skew(a) + skew(b), atol=1e-9)


# --- products ------------------------------------------------------------------

def test_quat_mul_identity_and_inverse():
    q = normalize([0.1, 0.2, -0.3, 0.9])
    np.testing.assert_allclose(quat_mul(IDENTITY, q), q, atol=1e-15)
    np.testing.assert_allclose(quat_mul(q, quat_conjugate(q)), IDENTITY, atol=1e-15)


def test_two_quarter_turns_make_half_turn():
    np.testing.assert_allclose(quat_mul(Z90, Z90), [0, 0, 1, 0], atol=1e-15)


def test_quat_mul_rejects_non_unit():
    with pytest.raises(InvalidQuaternionError):
        quat_mul([0, 0, 0, 1.1], IDENTITY)
    with pytest.raises(InvalidQuaternionError):
        quat_mul(IDENTITY, [0, 0, 0, 0.99])


def test_quat_mul_accepts_within_tolerance():
    q = np.array([0.0, 0.0, 0.0, 1.0 + 4e-7])
    np.testing.assert_allclose(quat_mul(q, IDENTITY), IDENTITY, atol=1e-15)


def test_conjugate_examples():
    np.testing.assert_array_equal(quat_conjugate(IDENTITY), IDENTITY)
    np.testing.assert_array_equal(quat_conjugate([0.1, 0.2, 0.3, 0.9]), [-0.1, -0.2, -0.3, 0.9])


@given(unit_quats(), unit_quats(), unit_quats())
def test_quat_mul_associative(a, b, c):
    assert same_rotation(quat_mul(quat_mul(a, b), c), quat_mul(a, quat_mul(b, c)))


@given(unit_quats())
def test_identity_two_sided(q):
    np.testing.assert_allclose(quat_mul(q, IDENTITY), q, atol=1e-12)
    np.testing.assert_allclose(quat_mul(IDENTITY, q), q, atol=1e-12)


@given(unit_quats(), unit_quats())
def test_product_matches_scipy(a, b):
    ref = (Rotation.from_quat(a) * Rotation.from_quat(b)).as_quat()
    assert same_rotation(quat_mul(a, b), ref)


# --- DCM -----------------------------------------------------------------------

def test_dcm_examples():
    np.testing.assert_array_equal(quat_to_dcm(IDENTITY), np.eye(3))
    np.testing.assert_allclose(quat_to_dcm(Z90), [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)


def test_dcm_rejects_non_unit():
    with pytest.raises(InvalidQuaternionError):
        quat_to_dcm([0.0, 0.0, 0.0, 2.0])


@given(unit_quats())
def test_dcm_is_rotation(q):
    R = quat_to_dcm(q)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(R) - 1.0) < 1e-9
    np.testing.assert_allclose(R, Rotation.from_quat(q).as_matrix(), atol=1e-12)


@given(unit_quats(), unit_quats())
def test_dcm_homomorphism(a, b):
    np.testing.assert_allclose(quat_to_dcm(quat_mul(a, b)), quat_to_dcm(a) @ quat_to_dcm(b), atol=1e-9)


@given(rotvecs())
def test_dcm_from_rotvec_matches_quaternion_path(phi):
    np.testing.assert_allclose(dcm_from_rotvec(phi), quat_to_dcm(quat_from_rotvec(phi)), atol=1e-12)


# --- rotation vectors ----------------------------------------------------------

@given(rotvecs())
def test_rotvec_round_trip(phi):
    np.testing.assert_allclose(rotvec_from_quat(quat_from_rotvec(phi)), phi, atol=1e-9)


def test_small_rotvec_uses_series_without_loss():
    phi = np.array([1e-10, -2e-10, 3e-10])
    q = quat_from_rotvec(phi)
    np.testing.assert_allclose(q[:3], phi / 2, rtol=1e-12)
    np.testing.assert_allclose(rotvec_from_quat(q), phi, rtol=1e-12)


def test_rotvec_takes_short_rotation():
    q = quat_from_rotvec([0, 0, 1.0])
    np.testing.assert_allclose(rotvec_from_quat(-q), [0, 0, 1.0], atol=1e-15)


# --- error quaternion ----------------------------------------------------------

def test_error_quat_of_equal_attitudes_is_identity():
    q = normalize([0.3, -0.1, 0.2, 0.9])
    assert same_rotation(error_quat(q, q), IDENTITY, 1e-15)


@given(unit_quats(), unit_quats())
def test_error_quat_reconstructs_truth(q, q_hat):
    assert same_rotation(quat_mul(error_quat(q, q_hat), q_hat), q)


def test_error_quat_small_angle_vector_part():
    q_hat = normalize([0.2, 0.1, -0.4, 0.8])
    da = np.array([1e-3, -2e-3, 0.5e-3])
    q = quat_mul(quat_from_rotvec(da), q_hat)
    dq = error_quat(q, q_hat)
    np.testing.assert_allclose(dq[:3], da / 2, atol=np.dot(da, da))


@given(unit_quats(), rotvecs(1.0))
def test_attitude_error_is_body_frame_perturbation(q_hat, da):
    q = quat_mul(q_hat, quat_from_rotvec(da))
    np.testing.assert_allclose(attitude_error(q, q_hat), da, atol=1e-9)


# --- sigma matrix --------------------------------------------------------------

def test_sigma_identity():
    S = sigma_matrix(IDENTITY)
    np.testing.assert_array_equal(S[:3], np.eye(3))
    np.testing.assert_array_equal(S[3], 0.0)


@given(unit_quats())
def test_sigma_orthonormal_columns(q):
    S = sigma_matrix(q)
    np.testing.assert_allclose(S.T @ S, np.eye(3), atol=1e-9)


@given(unit_quats(), vec3)
def test_sigma_is_product_with_pure_quaternion(q, v):
    pure = np.array([*v, 0.0])
    x, y, z, w = q
    # Hamilton product without renormalization
    ref = np.array([
        w * pure[0] + x * 0 + y * pure[2] - z * pure[1],
        w * pure[1] + y * 0 + z * pure[0] - x * pure[2],
        w * pure[2] + z * 0 + x * pure[1] - y * pure[0],
        -x * pure[0] - y * pure[1] - z * pure[2],
    ])
    np.testing.assert_allclose(sigma_matrix(q) @ v, ref, atol=1e-9)


def test_zero_reset_leaves_quaternion():
    q = normalize([0.3, -0.1, 0.2, 0.9])
    np.testing.assert_array_equal(q + 0.5 * sigma_matrix(q) @ np.zeros(3), q)


# --- integration ---------------------------------------------------------------

def test_integrate_zero_rate():
    q = normalize([0.3, -0.1, 0.2, 0.9])
    np.testing.assert_allclose(quat_integrate(q, np.zeros(3), 0.5), q, atol=1e-15)


def test_integrate_quarter_turn():
    np.testing.assert_allclose(quat_integrate(IDENTITY, [0, 0, math.pi / 2], 1.0), Z90, atol=1e-15)


def test_integrate_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        quat_integrate(IDENTITY, [0, 0, 1.0], 0.0)


@given(unit_quats(), vec3, st.floats(1e-3, 2.0), st.floats(1e-3, 2.0))
def test_integrate_composes(q, w, t1, t2):
    a = quat_integrate(quat_integrate(q, w, t1), w, t2)
    b = quat_integrate(q, w, t1 + t2)
    assert same_rotation(a, b)
    assert abs(np.linalg.norm(a) - 1.0) < 1e-12


# --- heading -------------------------------------------------------------------

@given(st.floats(-3.1, 3.1))
def test_yaw_of_pure_heading(yaw):
    assert abs(wrap_angle(yaw_of(quat_from_axis_angle((0, 0, 1), yaw)) - yaw)) < 1e-12


@settings(max_examples=50)
@given(st.floats(-100, 100))
def test_wrap_angle_range(a):
    w = wrap_angle(a)
    assert -math.pi <= w < math.pi
    assert abs(math.remainder(a - w, 2 * math.pi)) < 1e-9
