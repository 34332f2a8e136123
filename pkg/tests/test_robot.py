import math

import numpy as np
import pytest

from bathsim.geometry import Pose6, quat_conj, quat_log, quat_mul
from bathsim.robot import (DynamicsParams, JointState, KinematicChain, NonFiniteStateError,
                           chain_frames, default_chain, default_dynamics, forward_kinematics,
                           friction_torque, gravity_torque, jacobian, joint_move_cubic,
                           step_dynamics)

# regression fixture: default chain at q = 0, frozen from the transform chain
HOME_POSITION = np.array([0.0, 0.0, 0.9])
HOME_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def dh_matrix(theta, d, a, alpha):
    """Independent 4x4 homogeneous DH transform for the oracle chain."""
    ct, st = math.cos(theta), math.sin(theta)
    ca, sa = math.cos(alpha), math.sin(alpha)
    return np.array([
        [ct, -st * ca, st * sa, a * ct],
        [st, ct * ca, -ct * sa, a * st],
        [0.0, sa, ca, d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def oracle_fk(chain, q):
    t = np.eye(4)
    for i in range(7):
        t = t @ dh_matrix(q[i] + chain.theta_offset[i], chain.d[i],
                          chain.a[i], chain.alpha[i])
    return t


def fd_jacobian(chain, q, h=1e-6):
    jac = np.zeros((6, 7))
    for i in range(7):
        qp = q.copy()
        qm = q.copy()
        qp[i] += h
        qm[i] -= h
        pp = forward_kinematics(chain, qp)
        pm = forward_kinematics(chain, qm)
        jac[:3, i] = (pp.position - pm.position) / (2 * h)
        rel = quat_mul(pp.orientation, quat_conj(pm.orientation))
        jac[3:, i] = quat_log(rel) / (2 * h)
    return jac


class TestForwardKinematics:
    def test_home_pose_regression(self):
        pose = forward_kinematics(default_chain(), np.zeros(7))
        assert np.abs(pose.position - HOME_POSITION).max() < 1e-12
        assert np.abs(pose.orientation - HOME_QUAT).max() < 1e-12

    def test_matches_homogeneous_chain_oracle(self):
        chain = default_chain()
        rng = np.random.default_rng(17)
        for _ in range(20):
            q = rng.uniform(-2.0, 2.0, 7)
            t = oracle_fk(chain, q)
            pose = forward_kinematics(chain, q)
            assert np.abs(pose.position - t[:3, 3]).max() < 1e-12
            assert np.abs(pose.rotation_matrix() - t[:3, :3]).max() < 1e-12

    def test_joint1_half_turn_negates_xy(self):
        chain = default_chain()
        q = np.array([0.0, 0.7, 0.0, 0.9, 0.0, 0.3, 0.0])
        base = forward_kinematics(chain, q)
        q_flip = q.copy()
        q_flip[0] += math.pi
        flipped = forward_kinematics(chain, q_flip)
        assert abs(flipped.position[0] + base.position[0]) < 1e-12
        assert abs(flipped.position[1] + base.position[1]) < 1e-12
        assert abs(flipped.position[2] - base.position[2]) < 1e-12

    def test_base_pose_premultiplies(self):
        chain = default_chain()
        q = np.array([0.3, -0.5, 0.2, 0.8, -0.1, 0.4, 0.0])
        shifted_chain = KinematicChain(d=chain.d, a=chain.a, alpha=chain.alpha,
                                       theta_offset=chain.theta_offset,
                                       base_pose=Pose6.from_translation(0, 0, 1.0))
        plain = forward_kinematics(chain, q)
        shifted = forward_kinematics(shifted_chain, q)
        assert np.abs(shifted.position - (plain.position + [0, 0, 1.0])).max() < 1e-12


class TestJacobian:
    def test_finite_difference_agreement(self):
        chain = default_chain()
        rng = np.random.default_rng(99)
        worst = 0.0
        for _ in range(25):
            q = rng.uniform(-1.8, 1.8, 7)
            worst = max(worst, np.abs(jacobian(chain, q) - fd_jacobian(chain, q)).max())
        assert worst < 1e-5

    def test_revolute_column_geometry(self):
        # single joint about base z with the tool at radius r along x:
        # linear column (0, r, 0), angular column (0, 0, 1)
        chain = KinematicChain(d=np.zeros(7), a=np.array([0.0] * 6 + [0.4]),
                               alpha=np.zeros(7), theta_offset=np.zeros(7))
        jac = jacobian(chain, np.zeros(7))
        assert np.allclose(jac[:3, 0], [0.0, 0.4, 0.0], atol=1e-12)
        assert np.allclose(jac[3:, 0], [0.0, 0.0, 1.0], atol=1e-12)

    def test_stretched_configuration_is_singular(self):
        # all joints at zero: links stacked along one line
        jac = jacobian(default_chain(), np.zeros(7))
        jjt = jac @ jac.T
        # power iteration for the largest eigenvalue, then on the shifted
        # matrix for the weakest direction; sigma_min = |J^T w| avoids the
        # cancellation floor of a Rayleigh quotient at lam_max scale
        rng = np.random.default_rng(0)
        v = rng.normal(size=6)
        for _ in range(200):
            v = jjt @ v
            v /= np.linalg.norm(v)
        lam_max = float(v @ (jjt @ v))
        shifted = lam_max * np.eye(6) - jjt
        w = rng.normal(size=6)
        for _ in range(800):
            w = shifted @ w
            w /= np.linalg.norm(w)
        sigma_min = float(np.linalg.norm(jac.T @ w))
        assert sigma_min < 1e-8


class TestGravity:
    def test_zero_masses_zero_torque(self):
        params = DynamicsParams(inertia=np.ones(7), viscous=np.zeros(7),
                                coulomb=np.zeros(7), stiction=np.zeros(7),
                                stribeck_velocity=0.1, link_masses=np.zeros(7),
                                link_coms=np.zeros((7, 3)))
        g = gravity_torque(default_chain(), params, np.zeros(7))
        assert np.all(g == 0.0)

    def test_axis_parallel_to_gravity_carries_no_torque(self):
        # straight-up arm with on-axis COMs: every moment arm is parallel to
        # gravity or zero
        params = DynamicsParams(inertia=np.ones(7), viscous=np.zeros(7),
                                coulomb=np.zeros(7), stiction=np.zeros(7),
                                stribeck_velocity=0.1,
                                link_masses=np.full(7, 2.0),
                                link_coms=np.zeros((7, 3)))
        g = gravity_torque(default_chain(), params, np.zeros(7))
        assert np.abs(g).max() < 1e-12

    def test_distal_mass_at_horizontal_reach(self):
        # joint 2 axis horizontal after a -90deg twist; 2 kg at 0.5 m reach
        chain = KinematicChain(d=np.zeros(7),
                               a=np.array([0.0, 0.5, 0, 0, 0, 0, 0]),
                               alpha=np.array([-math.pi / 2, 0, 0, 0, 0, 0, 0]),
                               theta_offset=np.zeros(7))
        coms = np.zeros((7, 3))
        masses = np.zeros(7)
        masses[1] = 2.0
        params = DynamicsParams(inertia=np.ones(7), viscous=np.zeros(7),
                                coulomb=np.zeros(7), stiction=np.zeros(7),
                                stribeck_velocity=0.1, link_masses=masses,
                                link_coms=coms)
        g = gravity_torque(chain, params, np.zeros(7))
        assert abs(abs(g[1]) - 2.0 * 9.81 * 0.5) < 1e-9


class TestFriction:
    def make_params(self, coulomb=1.0, viscous=0.5, stiction=2.0, vs=0.1):
        return DynamicsParams(inertia=np.ones(7), viscous=np.full(7, viscous),
                              coulomb=np.full(7, coulomb), stiction=np.full(7, stiction),
                              stribeck_velocity=vs, link_masses=np.zeros(7),
                              link_coms=np.zeros((7, 3)))

    def test_at_rest_no_load(self):
        params = self.make_params()
        out = friction_torque(params, np.zeros(7), np.zeros(7))
        assert np.all(out == 0.0)

    def test_stiction_clamp_cancels_subthreshold_torque(self):
        params = self.make_params()
        tau_ext = np.full(7, 1.0)  # 0.5 * stiction
        out = friction_torque(params, np.zeros(7), tau_ext)
        assert np.allclose(out, tau_ext)

    def test_sliding_value_from_the_model(self):
        params = self.make_params(coulomb=1.0, viscous=0.5, stiction=2.0, vs=0.1)
        dq = np.zeros(7)
        dq[0] = 1.0
        out = friction_torque(params, dq, np.zeros(7))
        expected = 1.0 + 0.5 * 1.0 + (2.0 - 1.0) * math.exp(-100.0)
        assert abs(out[0] - expected) < 1e-12

    def test_friction_opposes_motion(self):
        # the torque applied to the plant is -friction_torque, so dissipation
        # means friction_torque and dq share sign
        params = self.make_params()
        rng = np.random.default_rng(31)
        for _ in range(200):
            dq = rng.normal(scale=1.0, size=7)
            out = friction_torque(params, dq, rng.normal(size=7))
            moving = np.abs(dq) >= 1e-4
            assert np.all(out[moving] * dq[moving] >= 0.0)


class TestStepDynamics:
    def frictionless(self, inertia=1.0):
        return DynamicsParams(inertia=np.full(7, inertia), viscous=np.zeros(7),
                              coulomb=np.zeros(7), stiction=np.zeros(7),
                              stribeck_velocity=0.1, link_masses=np.zeros(7),
                              link_coms=np.zeros((7, 3)))

    def test_equilibrium_under_gravity_command(self):
        chain = default_chain()
        params = default_dynamics()
        q0 = np.array([0.2, 0.8, -0.4, 1.0, 0.3, -0.6, 0.1])
        state = JointState.at_rest(q0)
        g = gravity_torque(chain, params, q0)
        for _ in range(200):
            state = step_dynamics(chain, params, state, g, 1e-3)
            g = gravity_torque(chain, params, state.q)
        assert np.abs(state.q - q0).max() < 1e-9

    def test_constant_torque_integrates_velocity(self):
        chain = default_chain()
        params = self.frictionless(inertia=1.0)
        state = JointState.at_rest(np.zeros(7))
        tau = np.zeros(7)
        tau[0] = 1.0
        for _ in range(1000):
            state = step_dynamics(chain, params, state, tau + gravity_torque(chain, params, state.q), 1e-3)
        assert abs(state.dq[0] - 1.0) < 1e-3

    def test_viscous_steady_state(self):
        chain = default_chain()
        b = 0.8
        params = DynamicsParams(inertia=np.full(7, 0.1), viscous=np.full(7, b),
                                coulomb=np.zeros(7), stiction=np.zeros(7),
                                stribeck_velocity=0.1, link_masses=np.zeros(7),
                                link_coms=np.zeros((7, 3)),
                                torque_limits=np.full(7, 100.0))
        state = JointState.at_rest(np.zeros(7))
        tau = np.zeros(7)
        tau[2] = 2.0
        chain = KinematicChain(d=chain.d, a=chain.a, alpha=chain.alpha,
                               theta_offset=chain.theta_offset,
                               q_lower=np.full(7, -1e6), q_upper=np.full(7, 1e6))
        for _ in range(5000):
            state = step_dynamics(chain, params, state, tau, 1e-3)
        assert abs(state.dq[2] - 2.0 / b) / (2.0 / b) < 0.01

    def test_kinetic_energy_never_increases_unforced(self):
        chain = default_chain()
        params = DynamicsParams(inertia=np.full(7, 0.5), viscous=np.full(7, 0.2),
                                coulomb=np.full(7, 0.1), stiction=np.full(7, 0.3),
                                stribeck_velocity=0.05, link_masses=np.zeros(7),
                                link_coms=np.zeros((7, 3)))
        state = JointState(q=np.zeros(7), dq=np.full(7, 1.5), tau_applied=np.zeros(7))
        energy = 0.5 * float(params.inertia @ (state.dq ** 2))
        for _ in range(2000):
            state = step_dynamics(chain, params, state, np.zeros(7), 1e-3)
            new_energy = 0.5 * float(params.inertia @ (state.dq ** 2))
            assert new_energy <= energy + 1e-12
            energy = new_energy

    def test_joint_limit_clamps_and_zeroes_velocity(self):
        chain = default_chain()
        params = self.frictionless()
        state = JointState(q=np.full(7, 2.89), dq=np.full(7, 2.0), tau_applied=np.zeros(7))
        state = step_dynamics(chain, params, state,
                              gravity_torque(chain, params, state.q), 1e-3)
        assert state.q.max() <= 2.9 + 1e-12
        assert np.all(state.dq[state.q >= 2.9 - 1e-12] == 0.0)

    def test_rejects_bad_dt_and_reports_nonfinite(self):
        chain = default_chain()
        params = self.frictionless()
        state = JointState.at_rest(np.zeros(7))
        with pytest.raises(ValueError):
            step_dynamics(chain, params, state, np.zeros(7), 0.02)
        with pytest.raises(NonFiniteStateError):
            step_dynamics(chain, params, state, np.full(7, np.nan), 1e-3)

    def test_determinism(self):
        chain = default_chain()
        params = default_dynamics()
        runs = []
        for _ in range(2):
            state = JointState.at_rest(np.full(7, 0.1))
            for _ in range(500):
                g = gravity_torque(chain, params, state.q)
                state = step_dynamics(chain, params, state, g * 1.01, 1e-3)
            runs.append(state.q.copy())
        assert np.array_equal(runs[0], runs[1])


class TestCubicMove:
    def test_endpoints_and_midpoint(self):
        q0 = np.zeros(7)
        q1 = np.ones(7)
        assert np.allclose(joint_move_cubic(q0, q1, 2.0, 0.0), q0)
        assert np.allclose(joint_move_cubic(q0, q1, 2.0, 2.0), q1)
        assert np.allclose(joint_move_cubic(q0, q1, 2.0, 1.0), 0.5)

    def test_zero_end_velocities(self):
        q0 = np.zeros(7)
        q1 = np.ones(7)
        h = 1e-6
        v_start = (joint_move_cubic(q0, q1, 1.0, h) - joint_move_cubic(q0, q1, 1.0, 0.0)) / h
        v_end = (joint_move_cubic(q0, q1, 1.0, 1.0) - joint_move_cubic(q0, q1, 1.0, 1.0 - h)) / h
        assert np.abs(v_start).max() < 1e-4
        assert np.abs(v_end).max() < 1e-4
