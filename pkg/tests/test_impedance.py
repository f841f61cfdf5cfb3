import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pptrl.errors import InvalidRotationError
from pptrl.impedance import (
    ImpedanceGains,
    Pose,
    PoseTarget,
    compute_wrench,
    compute_wrench_batch,
    hat,
    orientation_error,
    rot_z,
    vee,
)


def random_rotation(rng):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def random_spd(rng):
    A = rng.standard_normal((3, 3))
    return A @ A.T + 0.5 * np.eye(3)


def test_hat_matches_cross():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal(3), rng.standard_normal(3)
    np.testing.assert_allclose(hat(a) @ b, np.cross(a, b), atol=1e-15)
    np.testing.assert_array_equal(vee(hat(a)), a)


class TestOrientationError:
    def test_identical(self):
        R = random_rotation(np.random.default_rng(1))
        np.testing.assert_allclose(orientation_error(R, R), 0.0, atol=1e-15)

    def test_rotation_about_z(self):
        R_d = rot_z(0.3)
        e = orientation_error(R_d, np.eye(3))
        # direct evaluation: R_d^T - R_d = [[0, 2s, 0], [-2s, 0, 0], [0, 0, 0]]; entry (1,0) = -2 sin
        S = R_d.T - R_d
        expected = 0.5 * np.array([S[2, 1], S[0, 2], S[1, 0]])
        np.testing.assert_allclose(e, expected, atol=1e-15)
        assert abs(abs(e[2]) - np.sin(0.3)) < 1e-15 and e[2] < 0
        np.testing.assert_allclose(e[:2], 0.0, atol=1e-15)

    @given(st.integers(0, 100_000))
    def test_antisymmetric(self, seed):
        rng = np.random.default_rng(seed)
        A, B = random_rotation(rng), random_rotation(rng)
        np.testing.assert_allclose(orientation_error(A, B), -orientation_error(B, A), atol=1e-14)

    @given(st.integers(0, 100_000))
    def test_zero_iff_relative_rotation_symmetric(self, seed):
        rng = np.random.default_rng(seed)
        A, B = random_rotation(rng), random_rotation(rng)
        M = A.T @ B
        is_sym = np.allclose(M, M.T, atol=1e-9)
        assert is_sym == np.allclose(orientation_error(A, B), 0.0, atol=1e-9)
        # a half-turn relative rotation is symmetric, so its error vanishes
        C = A @ np.diag([1.0, -1.0, -1.0])
        np.testing.assert_allclose(orientation_error(A, C), 0.0, atol=1e-12)

    def test_rejects_non_rotation(self):
        with pytest.raises(InvalidRotationError):
            orientation_error(np.eye(3) * 1.01, np.eye(3))
        with pytest.raises(InvalidRotationError):
            orientation_error(np.diag([1.0, 1.0, -1.0]), np.eye(3))


class TestComputeWrench:
    def test_zero_error(self):
        gains = ImpedanceGains.diagonal(100, 10, 5, 1)
        R = random_rotation(np.random.default_rng(2))
        target = PoseTarget(np.array([0.1, 0.2, 0.3]), R)
        wrench = compute_wrench(gains, target, Pose(np.array([0.1, 0.2, 0.3]), R), np.zeros(6))
        np.testing.assert_allclose(wrench, 0.0, atol=1e-15)

    def test_spring_only(self):
        gains = ImpedanceGains.diagonal(100, 1e-12, 1, 1e-12)
        target = PoseTarget(np.array([0.01, 0.0, 0.0]))
        wrench = compute_wrench(gains, target, Pose(np.zeros(3)), np.zeros(6))
        np.testing.assert_allclose(wrench, [1.0, 0, 0, 0, 0, 0], atol=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_linear_law(self, seed):
        rng = np.random.default_rng(seed)
        gains = ImpedanceGains(random_spd(rng), random_spd(rng), random_spd(rng), random_spd(rng))
        R_d, R = random_rotation(rng), random_rotation(rng)
        target = PoseTarget(rng.standard_normal(3), R_d, rng.standard_normal(3), rng.standard_normal(3))
        pose = Pose(rng.standard_normal(3), R)
        twist = rng.standard_normal(6)
        # re-derive the law from raw matrix algebra
        e_x = target.position - pose.position
        de_x = target.linear_velocity - twist[:3]
        S = R.T @ R_d - R_d.T @ R
        e_R = R @ (0.5 * np.array([S[2, 1], S[0, 2], S[1, 0]]))
        w_e = target.angular_velocity - twist[3:]
        expected = np.concatenate([gains.K_p @ e_x + gains.K_d @ de_x, gains.K_pR @ e_R + gains.K_dR @ w_e])
        np.testing.assert_allclose(compute_wrench(gains, target, pose, twist), expected, atol=1e-12)

    def test_yaw_spring_restores(self):
        gains = ImpedanceGains.diagonal(1, 1, 2.0, 1)
        target = PoseTarget(np.zeros(3), rot_z(0.2))
        wrench = compute_wrench(gains, target, Pose(np.zeros(3), np.eye(3)), np.zeros(6))
        np.testing.assert_allclose(wrench[5], 2.0 * np.sin(0.2), atol=1e-14)

    @given(st.integers(0, 100_000))
    @settings(max_examples=50)
    def test_passive_spring(self, seed):
        rng = np.random.default_rng(seed)
        gains = ImpedanceGains(random_spd(rng), 1e-12 * np.eye(3), random_spd(rng), 1e-12 * np.eye(3))
        e_x = rng.standard_normal(3)
        wrench = compute_wrench(gains, PoseTarget(e_x), Pose(np.zeros(3)), np.zeros(6))
        assert wrench[:3] @ e_x >= 0

    @given(st.integers(0, 100_000), st.floats(-2, 2))
    @settings(max_examples=30)
    def test_linear_in_errors(self, seed, a):
        rng = np.random.default_rng(seed)
        gains = ImpedanceGains(random_spd(rng), random_spd(rng), random_spd(rng), random_spd(rng))
        p1, p2 = rng.standard_normal(3), rng.standard_normal(3)
        t1, t2 = rng.standard_normal(6), rng.standard_normal(6)
        pose = Pose(np.zeros(3))

        def law(p, t):
            return compute_wrench(gains, PoseTarget(p), pose, t)
        np.testing.assert_allclose(law(p1 + a * p2, t1 + a * t2), law(p1, t1) + a * law(p2, t2), atol=1e-11)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(5)
        gains = ImpedanceGains(random_spd(rng), random_spd(rng), random_spd(rng), random_spd(rng))
        n = 4
        x_d, x = rng.standard_normal((n, 3)), rng.standard_normal((n, 3))
        v_d, v = rng.standard_normal((n, 3)), rng.standard_normal((n, 3))
        w_d, w = rng.standard_normal((n, 3)), rng.standard_normal((n, 3))
        R_d = np.array([random_rotation(rng) for _ in range(n)])
        R = np.array([random_rotation(rng) for _ in range(n)])
        batch = compute_wrench_batch(gains, x_d, R_d, v_d, w_d, x, R, v, w)
        for i in range(n):
            single = compute_wrench(gains, PoseTarget(x_d[i], R_d[i], v_d[i], w_d[i]), Pose(x[i], R[i]),
                                    np.concatenate([v[i], w[i]]))
            np.testing.assert_allclose(batch[i], single, atol=1e-12)
