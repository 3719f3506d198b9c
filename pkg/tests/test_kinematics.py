"""Kinematics against finite-difference and closed-form oracles."""

import json

import numpy as np
import pytest

from bimanip.errors import ValidationError
from bimanip.kinematics import (ChainSpec, CoordinationMode, DualArmSystem,
                                GraspSpec, JointConfig, extended_jacobian,
                                forward_kinematics, grasp_matrix,
                                grasp_pseudoinverse, jacobian, joint_pivots,
                                relative_jacobian, relative_pose, rot2, skew)

H = 1e-6
FD_TOL = 1e-5


def chain(lengths=(1.0, 1.0), base=(0.0, 0.0), angle=0.0) -> ChainSpec:
    return ChainSpec(link_lengths=np.asarray(lengths, dtype=float),
                     base_position=np.asarray(base, dtype=float),
                     base_orientation=angle)


def dual(base_l=(-1.0, 0.0), base_r=(1.0, 0.0), lengths=(1.0, 1.0, 1.0)):
    return DualArmSystem(left=chain(lengths, base_l),
                         right=chain(lengths, base_r))


def fd_jacobian(f, q, out_dim):
    q = np.asarray(q, dtype=float)
    jac = np.empty((out_dim, q.size))
    for i in range(q.size):
        dq = np.zeros_like(q)
        dq[i] = H
        jac[:, i] = (f(q + dq) - f(q - dq)) / (2.0 * H)
    return jac


def pose_vec(chain_, q):
    p, th = forward_kinematics(chain_, q)
    return np.array([p[0], p[1], th])


def three_link_ik(chain_, target_pos, target_angle, elbow=1.0):
    """Analytic position+orientation IK for a 3-link chain."""
    l1, l2, l3 = chain_.link_lengths
    wrist = np.asarray(target_pos, dtype=float) - l3 * np.array(
        [np.cos(target_angle), np.sin(target_angle)])
    rel = rot2(-chain_.base_orientation) @ (wrist - chain_.base_position)
    d2 = float(rel @ rel)
    cos_q2 = (d2 - l1 ** 2 - l2 ** 2) / (2.0 * l1 * l2)
    assert -1.0 <= cos_q2 <= 1.0, "target out of reach for the test setup"
    q2 = elbow * np.arccos(cos_q2)
    q1 = np.arctan2(rel[1], rel[0]) - np.arctan2(l2 * np.sin(q2),
                                                 l1 + l2 * np.cos(q2))
    q3 = target_angle - chain_.base_orientation - q1 - q2
    return np.array([q1, q2, q3])


class TestTypes:
    def test_chain_needs_two_links(self):
        with pytest.raises(ValidationError):
            chain(lengths=(1.0,))

    def test_chain_rejects_nonpositive_length(self):
        with pytest.raises(ValidationError):
            chain(lengths=(1.0, 0.0))

    def test_chain_rejects_bad_base(self):
        with pytest.raises(ValidationError):
            ChainSpec(link_lengths=np.ones(2),
                      base_position=np.zeros(3), base_orientation=0.0)

    def test_dual_rejects_coincident_bases(self):
        with pytest.raises(ValidationError):
            DualArmSystem(left=chain(), right=chain())

    def test_coordination_mode_coerces_from_string(self):
        sys = DualArmSystem(left=chain(base=(-1, 0)), right=chain(base=(1, 0)),
                            coordination_mode="asymmetric")
        assert sys.coordination_mode is CoordinationMode.ASYMMETRIC

    def test_joint_config_validates_lengths(self):
        sys = dual()
        cfg = JointConfig(q_left=np.zeros(2), q_right=np.zeros(3))
        with pytest.raises(ValidationError):
            cfg.validate_against(sys)

    def test_grasp_offsets_must_be_planar(self):
        with pytest.raises(ValidationError):
            GraspSpec(object_position=np.zeros(2),
                      left_contact_offset=np.zeros(3),
                      right_contact_offset=np.zeros(2))

    def test_json_roundtrips(self):
        sys = dual()
        payload = json.loads(json.dumps(sys.to_dict()))
        back = DualArmSystem.from_dict(payload)
        np.testing.assert_array_equal(back.left.link_lengths,
                                      sys.left.link_lengths)
        assert back.coordination_mode is sys.coordination_mode
        grasp = GraspSpec(object_position=np.array([0.5, 0.5]),
                          left_contact_offset=np.array([-0.2, 0.0]),
                          right_contact_offset=np.array([0.2, 0.0]))
        back_g = GraspSpec.from_dict(json.loads(json.dumps(grasp.to_dict())))
        np.testing.assert_array_equal(back_g.right_contact_offset,
                                      grasp.right_contact_offset)


class TestForwardKinematics:
    def test_straight_arm(self):
        p, th = forward_kinematics(chain(), np.zeros(2))
        np.testing.assert_allclose(p, [2.0, 0.0], rtol=0, atol=1e-15)
        assert th == 0.0

    def test_three_link_up(self):
        p, th = forward_kinematics(chain((1.0, 1.0, 1.0)),
                                   np.array([np.pi / 2, 0.0, 0.0]))
        np.testing.assert_allclose(p, [0.0, 3.0], rtol=0, atol=1e-12)
        assert th == pytest.approx(np.pi / 2)

    def test_base_pose_offsets(self):
        c = chain(base=(2.0, -1.0), angle=np.pi / 2)
        p, th = forward_kinematics(c, np.zeros(2))
        np.testing.assert_allclose(p, [2.0, 1.0], rtol=0, atol=1e-12)
        assert th == pytest.approx(np.pi / 2)

    def test_rejects_wrong_length(self):
        with pytest.raises(ValidationError):
            forward_kinematics(chain(), np.zeros(3))

    def test_pivots_match_cumulative_geometry(self):
        c = chain((1.0, 0.5, 0.7))
        q = np.array([0.3, -0.8, 1.1])
        pivots = joint_pivots(c, q)
        np.testing.assert_allclose(pivots[0], c.base_position, atol=1e-15)
        angles = c.base_orientation + np.cumsum(q)
        pos = np.array(c.base_position)
        for k in (1, 2):
            pos = pos + c.link_lengths[k - 1] * np.array(
                [np.cos(angles[k - 1]), np.sin(angles[k - 1])])
            np.testing.assert_allclose(pivots[k], pos, rtol=0, atol=1e-12)


class TestJacobian:
    def test_worked_example(self):
        j = jacobian(chain(), np.array([0.0, np.pi / 2]))
        np.testing.assert_allclose(j[:2], [[-1.0, -1.0], [1.0, 0.0]],
                                   rtol=0, atol=1e-12)
        np.testing.assert_array_equal(j[2], [1.0, 1.0])

    def test_straight_arm_singular(self):
        j = jacobian(chain(), np.zeros(2))
        np.testing.assert_allclose(j[:2], [[0.0, 0.0], [2.0, 1.0]],
                                   rtol=0, atol=1e-15)
        assert np.linalg.matrix_rank(j[:2]) == 1

    def test_matches_finite_differences(self, rng):
        for _ in range(100):
            n = int(rng.integers(2, 5))
            c = chain(lengths=rng.uniform(0.3, 1.5, size=n),
                      base=rng.uniform(-1, 1, size=2),
                      angle=float(rng.uniform(-np.pi, np.pi)))
            q = rng.uniform(-np.pi, np.pi, size=n)
            fd = fd_jacobian(lambda qq: pose_vec(c, qq), q, 3)
            np.testing.assert_allclose(jacobian(c, q), fd, rtol=0, atol=FD_TOL)


class TestSkew:
    def test_three_vector(self):
        np.testing.assert_array_equal(
            skew([1.0, 2.0, 3.0]),
            [[0.0, -3.0, 2.0], [3.0, 0.0, -1.0], [-2.0, 1.0, 0.0]])

    def test_zero_scalar(self):
        np.testing.assert_array_equal(skew(0.0), np.zeros((2, 2)))

    def test_cross_product_oracle(self, rng):
        for _ in range(20):
            p = rng.standard_normal(3)
            v = rng.standard_normal(3)
            np.testing.assert_allclose(skew(p) @ v, np.cross(p, v),
                                       rtol=0, atol=1e-12)
            np.testing.assert_allclose(skew(p) @ p, np.zeros(3),
                                       rtol=0, atol=1e-12)

    def test_antisymmetric(self, rng):
        s = skew(rng.standard_normal(3))
        np.testing.assert_array_equal(s.T, -s)
        s2 = skew(float(rng.standard_normal()))
        np.testing.assert_array_equal(s2.T, -s2)

    def test_rejects_bad_shape(self):
        with pytest.raises(ValidationError):
            skew(np.zeros(2))


class TestExtendedJacobian:
    def test_blocks_and_exact_zeros(self, rng):
        sys = dual(lengths=(1.0, 0.8, 0.6))
        cfg = JointConfig(q_left=rng.uniform(-1, 1, 3),
                          q_right=rng.uniform(-1, 1, 3))
        je = extended_jacobian(sys, cfg)
        assert je.shape == (6, 6)
        np.testing.assert_array_equal(je[:3, :3],
                                      jacobian(sys.left, cfg.q_left))
        np.testing.assert_array_equal(je[3:, 3:],
                                      jacobian(sys.right, cfg.q_right))
        assert np.all(je[:3, 3:] == 0.0)
        assert np.all(je[3:, :3] == 0.0)

    def test_identical_arms_identical_blocks(self):
        sys = dual()
        cfg = JointConfig(q_left=np.array([0.2, 0.4, -0.1]),
                          q_right=np.array([0.2, 0.4, -0.1]))
        je = extended_jacobian(sys, cfg)
        np.testing.assert_allclose(je[:3, :3], je[3:, 3:], rtol=0, atol=1e-12)


class TestGraspMatrix:
    def zero_offset(self):
        return GraspSpec(object_position=np.zeros(2),
                         left_contact_offset=np.zeros(2),
                         right_contact_offset=np.zeros(2))

    def test_zero_offsets_identity_blocks(self):
        g = grasp_matrix(self.zero_offset())
        np.testing.assert_array_equal(g, np.hstack([np.eye(3), np.eye(3)]))

    def test_offset_coupling_column(self):
        grasp = GraspSpec(object_position=np.zeros(2),
                          left_contact_offset=np.array([1.0, 0.0]),
                          right_contact_offset=np.zeros(2))
        g = grasp_matrix(grasp)
        np.testing.assert_array_equal(g[:, 2], [0.0, 1.0, 1.0])

    def test_rigid_consistency(self, rng):
        g = grasp_matrix(self.zero_offset())
        for _ in range(5):
            v = rng.standard_normal(3)
            np.testing.assert_allclose(g @ np.concatenate([v, v]), 2.0 * v,
                                       rtol=0, atol=1e-12)


class TestGraspPseudoinverse:
    def test_identity_blocks(self):
        g = np.hstack([np.eye(3), np.eye(3)])
        np.testing.assert_allclose(grasp_pseudoinverse(g),
                                   np.vstack([np.eye(3), np.eye(3)]) / 2.0,
                                   rtol=0, atol=1e-14)

    def test_moore_penrose_conditions(self, rng):
        for _ in range(20):
            g = rng.standard_normal((3, 6))
            gp = grasp_pseudoinverse(g)
            np.testing.assert_allclose(g @ gp @ g, g, rtol=0, atol=1e-10)
            np.testing.assert_allclose(gp @ g @ gp, gp, rtol=0, atol=1e-10)
            np.testing.assert_allclose((g @ gp).T, g @ gp, rtol=0, atol=1e-10)
            np.testing.assert_allclose((gp @ g).T, gp @ g, rtol=0, atol=1e-10)
            np.testing.assert_allclose(g @ gp, np.eye(3), rtol=0, atol=1e-10)

    def test_involution(self, rng):
        g = rng.standard_normal((3, 6))
        np.testing.assert_allclose(np.linalg.pinv(grasp_pseudoinverse(g)), g,
                                   rtol=0, atol=1e-10)

    def test_rank_deficient_rejected(self):
        g = np.zeros((3, 6))
        g[0, 0] = 1.0
        with pytest.raises(ValidationError):
            grasp_pseudoinverse(g)


class TestRelativeJacobian:
    def test_matches_finite_differences(self, rng):
        for _ in range(100):
            sys = dual(base_l=tuple(rng.uniform(-2, -0.5, 2)),
                       base_r=tuple(rng.uniform(0.5, 2, 2)),
                       lengths=rng.uniform(0.4, 1.2, size=3))
            cfg = JointConfig(q_left=rng.uniform(-np.pi, np.pi, 3),
                              q_right=rng.uniform(-np.pi, np.pi, 3))
            jrel = relative_jacobian(sys, cfg)

            def rel(qq):
                c = JointConfig(q_left=qq[:3], q_right=qq[3:])
                return relative_pose(sys, c)

            fd = fd_jacobian(rel, cfg.stacked, 3)
            np.testing.assert_allclose(jrel, fd, rtol=0, atol=FD_TOL)

    def test_right_block_is_rotated_jacobian(self, rng):
        sys = dual()
        cfg = JointConfig(q_left=rng.uniform(-1, 1, 3),
                          q_right=rng.uniform(-1, 1, 3))
        _, th_l = forward_kinematics(sys.left, cfg.q_left)
        omega = np.eye(3)
        omega[:2, :2] = rot2(th_l).T
        jrel = relative_jacobian(sys, cfg)
        np.testing.assert_allclose(jrel[:, 3:],
                                   omega @ jacobian(sys.right, cfg.q_right),
                                   rtol=0, atol=1e-12)

    def test_coincident_frames_annihilate_comotion(self):
        sys = dual(base_l=(-1.0, 0.0), base_r=(1.0, 0.0))
        target = np.array([0.0, 1.2])
        angle = np.pi / 2
        q_l = three_link_ik(sys.left, target, angle, elbow=-1.0)
        q_r = three_link_ik(sys.right, target, angle, elbow=1.0)
        cfg = JointConfig(q_left=q_l, q_right=q_r)
        # confirm the frames really coincide
        np.testing.assert_allclose(relative_pose(sys, cfg), np.zeros(3),
                                   rtol=0, atol=1e-9)
        j_l = jacobian(sys.left, q_l)
        j_r = jacobian(sys.right, q_r)
        rng = np.random.default_rng(7)
        for _ in range(5):
            twist = rng.standard_normal(3)
            qd = np.concatenate([np.linalg.solve(j_l, twist),
                                 np.linalg.solve(j_r, twist)])
            np.testing.assert_allclose(relative_jacobian(sys, cfg) @ qd,
                                       np.zeros(3), rtol=0, atol=1e-8)

    def test_coincident_positions_give_identity_psi(self):
        # With p = 0 the left block reduces to -Omega J_l.
        sys = dual(base_l=(-1.0, 0.0), base_r=(1.0, 0.0))
        target = np.array([0.0, 1.1])
        cfg = JointConfig(q_left=three_link_ik(sys.left, target, 2.0, -1.0),
                          q_right=three_link_ik(sys.right, target, 1.0, 1.0))
        _, th_l = forward_kinematics(sys.left, cfg.q_left)
        omega = np.eye(3)
        omega[:2, :2] = rot2(th_l).T
        jrel = relative_jacobian(sys, cfg)
        np.testing.assert_allclose(jrel[:, :3],
                                   -omega @ jacobian(sys.left, cfg.q_left),
                                   rtol=0, atol=1e-9)

    def test_translation_invariance(self, rng):
        lengths = (1.0, 0.8, 0.6)
        cfg = JointConfig(q_left=rng.uniform(-1, 1, 3),
                          q_right=rng.uniform(-1, 1, 3))
        a = relative_jacobian(dual(lengths=lengths), cfg)
        shift = rng.uniform(-3, 3, 2)
        b = relative_jacobian(dual(base_l=tuple(shift + [-1, 0]),
                                   base_r=tuple(shift + [1, 0]),
                                   lengths=lengths), cfg)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
