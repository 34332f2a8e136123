import math

import numpy as np
import pytest

from bathsim.geometry import (Pose6, PoseError, Wrench, compose, jacobian_transpose_apply,
                              matrix_to_quat, pose_error, quat_conj, quat_exp,
                              quat_from_axis_angle, quat_log, quat_mul, quat_normalize,
                              quat_rotate, quat_to_matrix)


def random_unit_quat(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


class TestQuaternions:
    def test_log_of_identity_is_zero(self):
        assert np.allclose(quat_log([1, 0, 0, 0]), np.zeros(3))

    def test_exp_log_round_trip_random(self):
        rng = np.random.default_rng(42)
        worst = 0.0
        for _ in range(1000):
            q = random_unit_quat(rng)
            if q[0] < 0:
                q = -q  # stay below pi
            back = quat_exp(quat_log(q))
            worst = max(worst, np.abs(back - q).max())
        assert worst < 1e-10

    def test_rotate_matches_matrix(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            q = random_unit_quat(rng)
            v = rng.normal(size=3)
            assert np.allclose(quat_rotate(q, v), quat_to_matrix(q) @ v, atol=1e-12)

    def test_matrix_quat_round_trip(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            q = random_unit_quat(rng)
            back = matrix_to_quat(quat_to_matrix(q))
            # q and -q encode the same rotation
            assert min(np.abs(back - q).max(), np.abs(back + q).max()) < 1e-9

    def test_normalize_rejects_zero(self):
        with pytest.raises(ValueError):
            quat_normalize([0, 0, 0, 0])


class TestPose6:
    def test_compose_identity(self):
        identity = Pose6.identity()
        out = compose(identity, identity)
        assert np.allclose(out.position, 0)
        assert np.allclose(out.orientation, [1, 0, 0, 0])

    def test_compose_with_inverse_is_identity(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            p = Pose6(position=rng.normal(size=3),
                      orientation=random_unit_quat(rng))
            out = compose(p, p.inverse())
            assert np.abs(out.position).max() < 1e-12
            assert abs(abs(out.orientation[0]) - 1.0) < 1e-12

    def test_translate_then_rotate_applied_to_point(self):
        # compose(translate(1,0,0), rotZ(90deg)) maps (1,0,0) -> (1,1,0)
        trans = Pose6.from_translation(1.0, 0.0, 0.0)
        rot = Pose6.from_axis_angle([0, 0, 1], math.pi / 2)
        combined = compose(trans, rot)
        point = combined.apply([1.0, 0.0, 0.0])
        assert np.allclose(point, [1.0, 1.0, 0.0], atol=1e-12)

    def test_compose_associative(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            a, b, c = (Pose6(position=rng.normal(size=3), orientation=random_unit_quat(rng))
                       for _ in range(3))
            left = compose(compose(a, b), c)
            right = compose(a, compose(b, c))
            assert np.abs(left.position - right.position).max() < 1e-10
            assert min(np.abs(left.orientation - right.orientation).max(),
                       np.abs(left.orientation + right.orientation).max()) < 1e-10

    def test_quaternion_normalized_after_compose(self):
        rng = np.random.default_rng(9)
        p = Pose6(position=[0, 0, 0], orientation=random_unit_quat(rng))
        for _ in range(2000):
            p = compose(p, Pose6(position=[0, 0, 0], orientation=random_unit_quat(rng)))
            assert abs(np.linalg.norm(p.orientation) - 1.0) < 1e-9


class TestPoseError:
    def test_same_pose_zero_error(self):
        rng = np.random.default_rng(13)
        p = Pose6(position=rng.normal(size=3), orientation=random_unit_quat(rng))
        err = pose_error(p, p)
        assert np.all(err.translational == 0.0)
        assert np.abs(err.rotational).max() <= 1e-12

    def test_pure_translation(self):
        a = Pose6.from_translation(0.1, 0.0, 0.0)
        b = Pose6.identity()
        err = pose_error(a, b)
        assert np.allclose(err.translational, [0.1, 0, 0])
        assert np.allclose(err.rotational, 0)

    def test_rotation_about_z(self):
        desired = Pose6.from_axis_angle([0, 0, 1], math.pi / 2)
        err = pose_error(desired, Pose6.identity())
        assert np.abs(err.rotational - np.array([0, 0, math.pi / 2])).max() < 1e-9

    def test_rejects_rotational_error_beyond_pi(self):
        with pytest.raises(ValueError):
            PoseError(translational=np.zeros(3), rotational=[4.0, 0.0, 0.0])


class TestWrenchAndHelpers:
    def test_wrench_requires_finite(self):
        with pytest.raises(ValueError):
            Wrench(force=[np.nan, 0, 0], torque=[0, 0, 0])

    def test_jacobian_transpose_identity_padded(self):
        jac = np.zeros((6, 7))
        jac[:6, :6] = np.eye(6)
        w = np.zeros(6)
        w[0] = 1.0
        out = jacobian_transpose_apply(jac, w)
        expected = np.zeros(7)
        expected[0] = 1.0
        assert np.array_equal(out, expected)

    def test_quat_mul_conj_inverse(self):
        rng = np.random.default_rng(21)
        q = random_unit_quat(rng)
        out = quat_mul(q, quat_conj(q))
        assert np.allclose(out, [1, 0, 0, 0], atol=1e-12)

    def test_from_axis_angle_rotates(self):
        q = quat_from_axis_angle([0, 0, 1], math.pi / 2)
        assert np.allclose(quat_rotate(q, [1, 0, 0]), [0, 1, 0], atol=1e-12)
