"""Hot-kernel backends against the public reference implementations."""

import importlib

import numpy as np
import pytest

from bimanip import _kernels
from bimanip._kernels import _fallback
from bimanip.kinematics import (GraspSpec, JointConfig, forward_kinematics,
                                jacobian)
from bimanip.manipulability import WeightingMatrix, bam, brm
from bimanip.spd import SpdMatrix, spd_objective
from test_kinematics import chain, dual

W_TRANS = WeightingMatrix.translational()

try:
    from bimanip._kernels import _speedups
except ImportError:
    _speedups = None

BACKENDS = [_fallback] + ([_speedups] if _speedups is not None else [])


def arm_params(spec):
    return (np.asarray(spec.link_lengths, dtype=float),
            (float(spec.base_position[0]), float(spec.base_position[1]),
             float(spec.base_orientation)))


def random_targets(rng, n):
    out = np.empty((n, 2, 2))
    for i in range(n):
        ang = rng.uniform(0, np.pi)
        c, s = np.cos(ang), np.sin(ang)
        r = np.array([[c, -s], [s, c]])
        out[i] = r @ np.diag(rng.uniform(0.3, 3.0, size=2)) @ r.T
    return out


def guidance_problem(rng, mode, n_steps=4):
    """Random window-objective inputs over a 3-link dual-arm system."""
    sys = dual(base_l=(-0.9, 0.1), base_r=(1.0, -0.1),
               lengths=(1.0, 0.8, 0.6))
    l_len, l_base = arm_params(sys.left)
    r_len, r_base = arm_params(sys.right)
    act_dim = 8  # 3 + 3 joints, 2 gripper slots
    mean = np.concatenate([rng.uniform(-0.4, 0.4, size=6), np.zeros(2)])
    scale = np.concatenate([rng.uniform(0.5, 1.5, size=6), np.ones(2)])
    actions = rng.uniform(-0.5, 0.5, size=(n_steps, act_dim))
    targets = random_targets(rng, n_steps)
    return sys, (mode, l_len, l_base, r_len, r_base,
                 actions, mean, scale, 3, 3, targets)


class TestAgainstPublicApi:
    def test_chain_pose(self, rng):
        spec = chain(lengths=(1.0, 0.7, 0.5), base=(0.3, -0.2), angle=0.4)
        lengths, base = arm_params(spec)
        for _ in range(50):
            q = rng.uniform(-np.pi, np.pi, size=3)
            pos, ang = forward_kinematics(spec, q)
            x, y, th = _kernels.chain_pose(lengths, *base, q)
            np.testing.assert_allclose([x, y], pos, atol=1e-12)
            assert th == pytest.approx(float(ang), abs=1e-12)

    def test_chain_jacobian(self, rng):
        spec = chain(lengths=(1.0, 0.7, 0.5), base=(0.3, -0.2), angle=0.4)
        lengths, base = arm_params(spec)
        for _ in range(50):
            q = rng.uniform(-np.pi, np.pi, size=3)
            np.testing.assert_allclose(
                _kernels.chain_jacobian(lengths, *base, q),
                jacobian(spec, q), atol=1e-12)

    def test_vel_bme_absolute(self, rng):
        sys = dual(base_l=(-0.9, 0.1), base_r=(1.0, -0.1),
                   lengths=(1.0, 0.8, 0.6))
        l_len, l_base = arm_params(sys.left)
        r_len, r_base = arm_params(sys.right)
        for _ in range(50):
            ql = rng.uniform(-1.2, 1.2, size=3)
            qr = rng.uniform(-1.2, 1.2, size=3)
            q = JointConfig(q_left=ql, q_right=qr)
            pl, _ = forward_kinematics(sys.left, ql)
            pr, _ = forward_kinematics(sys.right, qr)
            mid = 0.5 * (pl + pr)
            grasp = GraspSpec(object_position=mid,
                              left_contact_offset=pl - mid,
                              right_contact_offset=pr - mid)
            ref = bam(sys, q, grasp, W_TRANS).velocity_bme.entries
            got = _kernels.vel_bme(_kernels.MODE_ABSOLUTE,
                                   l_len, l_base, ql, r_len, r_base, qr)
            np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-12)

    def test_vel_bme_relative(self, rng):
        sys = dual(base_l=(-0.9, 0.1), base_r=(1.0, -0.1),
                   lengths=(1.0, 0.8, 0.6))
        l_len, l_base = arm_params(sys.left)
        r_len, r_base = arm_params(sys.right)
        for _ in range(50):
            ql = rng.uniform(-1.2, 1.2, size=3)
            qr = rng.uniform(-1.2, 1.2, size=3)
            ref = brm(sys, JointConfig(q_left=ql, q_right=qr),
                      W_TRANS).velocity_bme.entries
            got = _kernels.vel_bme(_kernels.MODE_RELATIVE,
                                   l_len, l_base, ql, r_len, r_base, qr)
            np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-12)

    @pytest.mark.parametrize("mode", [0, 1])
    def test_window_objective_matches_composed_path(self, rng, mode):
        sys, args = guidance_problem(rng, mode)
        (_, l_len, l_base, r_len, r_base,
         actions, mean, scale, n_l, n_r, targets) = args
        total = 0.0
        for k in range(actions.shape[0]):
            q = mean[:6] + scale[:6] * actions[k, :6]
            bme = _kernels.vel_bme(mode, l_len, l_base, q[:3],
                                   r_len, r_base, q[3:])
            total += spd_objective(SpdMatrix.from_entries(bme),
                                   SpdMatrix.from_entries(targets[k]))
        assert _kernels.window_objective(*args) == pytest.approx(
            total, rel=1e-9)


class TestWindowGradient:
    def test_matches_naive_stencil(self, rng):
        _, args = guidance_problem(rng, _kernels.MODE_RELATIVE)
        actions = args[5]
        h = 1e-5
        grad = _kernels.window_gradient(*args, h)
        naive = np.zeros_like(actions)
        for k in range(actions.shape[0]):
            for j in range(6):
                bumped = list(args)
                plus = actions.copy()
                plus[k, j] += h
                bumped[5] = plus
                hi = _kernels.window_objective(*bumped)
                minus = actions.copy()
                minus[k, j] -= h
                bumped[5] = minus
                lo = _kernels.window_objective(*bumped)
                naive[k, j] = (hi - lo) / (2.0 * h)
        np.testing.assert_allclose(grad, naive, rtol=1e-6, atol=1e-8)

    def test_gripper_columns_zero(self, rng):
        _, args = guidance_problem(rng, _kernels.MODE_ABSOLUTE)
        grad = _kernels.window_gradient(*args, 1e-4)
        assert np.all(grad[:, 6:] == 0.0)

    def test_descent_direction(self, rng):
        for mode in (0, 1):
            for _ in range(25):
                _, args = guidance_problem(rng, mode)
                grad = _kernels.window_gradient(*args, 1e-4)
                before = _kernels.window_objective(*args)
                stepped = list(args)
                stepped[5] = args[5] - 1e-3 * grad / max(
                    1.0, np.linalg.norm(grad))
                assert _kernels.window_objective(*stepped) < before


@pytest.mark.skipif(_speedups is None, reason="compiled kernels not built")
class TestBackendParity:
    def test_pose_and_jacobian(self, rng):
        lengths = np.array([1.0, 0.7, 0.5])
        base = (0.3, -0.2, 0.4)
        for _ in range(50):
            q = rng.uniform(-np.pi, np.pi, size=3)
            np.testing.assert_allclose(
                _speedups.chain_pose(lengths, *base, q),
                _fallback.chain_pose(lengths, *base, q), rtol=1e-13)
            np.testing.assert_allclose(
                _speedups.chain_jacobian(lengths, *base, q),
                _fallback.chain_jacobian(lengths, *base, q), atol=1e-13)

    @pytest.mark.parametrize("mode", [0, 1])
    def test_vel_bme(self, rng, mode):
        l_len = np.array([1.0, 0.8, 0.6])
        r_len = np.array([0.9, 0.9, 0.5])
        l_base, r_base = (-0.9, 0.1, 0.0), (1.0, -0.1, 0.2)
        for _ in range(50):
            ql = rng.uniform(-1.2, 1.2, size=3)
            qr = rng.uniform(-1.2, 1.2, size=3)
            np.testing.assert_allclose(
                _speedups.vel_bme(mode, l_len, l_base, ql,
                                  r_len, r_base, qr),
                _fallback.vel_bme(mode, l_len, l_base, ql,
                                  r_len, r_base, qr),
                rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("mode", [0, 1])
    def test_window_functions(self, rng, mode):
        _, args = guidance_problem(rng, mode, n_steps=6)
        assert _speedups.window_objective(*args) == pytest.approx(
            _fallback.window_objective(*args), rel=1e-12)
        # last-bit objective differences divided by 2h bound the
        # achievable agreement of the difference quotients
        np.testing.assert_allclose(
            _speedups.window_gradient(*args, 1e-4),
            _fallback.window_gradient(*args, 1e-4),
            rtol=1e-6, atol=1e-8)


class TestBackendSelection:
    def test_reports_a_known_backend(self):
        assert _kernels.backend_name() in ("pure", "compiled")

    def test_env_override_forces_pure(self, monkeypatch):
        monkeypatch.setenv("BIMANIP_PURE", "1")
        import bimanip._kernels as pkg
        fresh = importlib.reload(pkg)
        try:
            assert fresh.backend_name() == "pure"
        finally:
            monkeypatch.delenv("BIMANIP_PURE")
            importlib.reload(pkg)
