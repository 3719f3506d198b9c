"""Pure-NumPy implementations of the sampling-loop hot kernels.

Mirrors ``_speedups.pyx`` function-for-function; the compiled module is
preferred at import when available.  These routines work on raw arrays
and scalars — validation and the dataclass API live in the public
modules, which remain the correctness reference for parity tests.

Conventions shared by both backends:
  - chains are planar revolute with absolute joint angles accumulated
    along the chain, base pose (x, y, theta);
  - the velocity ellipsoid is the translational 2x2 block, eigenvalue
    floor max(1e-6 * lambda_max, 1e-9);
  - mode 0 builds the absolute (midpoint-grasp) ellipsoid, mode 1 the
    relative one;
  - action windows are normalized; entry j of a step denormalizes as
    mean[j] + scale[j] * a[j], with the first n_l + n_r entries the
    joint angles and the remainder (grippers) ignored by the objective.
"""

import numpy as np

MODE_ABSOLUTE = 0
MODE_RELATIVE = 1

_CLAMP_REL = 1e-6
_CLAMP_ABS = 1e-9


def chain_pose(lengths, base_x, base_y, base_th, q):
    """End-effector pose (x, y, theta) of one planar chain."""
    th = base_th
    x, y = base_x, base_y
    for i in range(len(q)):
        th += q[i]
        x += lengths[i] * np.cos(th)
        y += lengths[i] * np.sin(th)
    return x, y, th


def chain_jacobian(lengths, base_x, base_y, base_th, q):
    """Geometric Jacobian, rows (vx, vy, omega), columns per joint."""
    n = len(q)
    # joint pivot positions and the end effector
    px = np.empty(n + 1)
    py = np.empty(n + 1)
    th = base_th
    px[0], py[0] = base_x, base_y
    for i in range(n):
        th += q[i]
        px[i + 1] = px[i] + lengths[i] * np.cos(th)
        py[i + 1] = py[i] + lengths[i] * np.sin(th)
    jac = np.empty((3, n))
    for i in range(n):
        jac[0, i] = -(py[n] - py[i])
        jac[1, i] = px[n] - px[i]
        jac[2, i] = 1.0
    return jac


def _eig_sym_2x2(a, b, c):
    """Eigendecomposition of [[a, b], [b, c]]: (lo, hi, cos, sin).

    (cos, sin) is the unit eigenvector of the high eigenvalue.
    """
    half_tr = 0.5 * (a + c)
    half_gap = 0.5 * (a - c)
    disc = np.hypot(half_gap, b)
    hi = half_tr + disc
    lo = half_tr - disc
    # eigenvector of hi: pick the better-conditioned formula
    vx, vy = (b, hi - a) if abs(hi - a) > abs(hi - c) else (hi - c, b)
    nrm = np.hypot(vx, vy)
    if nrm < 1e-300:
        return lo, hi, 1.0, 0.0
    return lo, hi, vx / nrm, vy / nrm


def _clamp_spd_2x2(m):
    """Eigenvalue floor, returning the clamped symmetric matrix."""
    lo, hi, cx, cy = _eig_sym_2x2(m[0, 0], m[0, 1], m[1, 1])
    floor = max(_CLAMP_REL * max(hi, 0.0), _CLAMP_ABS)
    hi = max(hi, floor)
    lo = max(lo, floor)
    # hi-vector (cx, cy), lo-vector (-cy, cx)
    out = np.empty((2, 2))
    out[0, 0] = hi * cx * cx + lo * cy * cy
    out[0, 1] = (hi - lo) * cx * cy
    out[1, 0] = out[0, 1]
    out[1, 1] = hi * cy * cy + lo * cx * cx
    return out


def vel_bme(mode, l_len, l_base, q_l, r_len, r_base, q_r):
    """Translational velocity ellipsoid of the coupled system, clamped.

    ``l_base``/``r_base`` are (x, y, theta) triples.  Mode 0 grasps a
    rigid object centered midway between the end effectors with the
    contacts at the effectors; mode 1 is the relative-motion ellipsoid
    of the right effector seen from the left frame.
    """
    jl = chain_jacobian(l_len, l_base[0], l_base[1], l_base[2], q_l)
    jr = chain_jacobian(r_len, r_base[0], r_base[1], r_base[2], q_r)
    xl, yl, thl = chain_pose(l_len, l_base[0], l_base[1], l_base[2], q_l)
    xr, yr, thr = chain_pose(r_len, r_base[0], r_base[1], r_base[2], q_r)

    if mode == MODE_ABSOLUTE:
        # contacts at the effectors, object at the midpoint; with
        # G = [G_l | G_r] full row rank, G-dagger = G^T (G G^T)^{-1},
        # so the core collapses to S (sum_i G_i M_i G_i^T) S.
        rx, ry = 0.5 * (xr - xl), 0.5 * (yr - yl)
        acc = np.zeros((3, 3))
        ggt = np.zeros((3, 3))
        for jac, ox, oy in ((jl, -rx, -ry), (jr, rx, ry)):
            g = np.array([[1.0, 0.0, -oy],
                          [0.0, 1.0, ox],
                          [0.0, 0.0, 1.0]])
            ggt += g @ g.T
            acc += g @ (jac @ jac.T) @ g.T
        s = np.linalg.inv(ggt)
        core = s @ acc @ s
    else:
        cl, sl = np.cos(thl), np.sin(thl)
        # p = R_l^T (p_r - p_l)
        dx, dy = xr - xl, yr - yl
        px = cl * dx + sl * dy
        py = -sl * dx + cl * dy
        rot_t = np.array([[cl, sl, 0.0], [-sl, cl, 0.0], [0.0, 0.0, 1.0]])
        psi = np.array([[1.0, 0.0, -py], [0.0, 1.0, px], [0.0, 0.0, 1.0]])
        left = -psi @ rot_t @ jl
        right = rot_t @ jr
        core = left @ left.T + right @ right.T

    return _clamp_spd_2x2(core[:2, :2])


def _log_residual_sq(b, t):
    """Squared ambient norm of the log map of ``t`` taken at base ``b``."""
    lo, hi, cx, cy = _eig_sym_2x2(b[0, 0], b[0, 1], b[1, 1])
    sq_lo, sq_hi = np.sqrt(lo), np.sqrt(hi)
    # rows of R^T scale: B^{-1/2} = R diag(1/sq) R^T
    r = np.array([[cx, -cy], [cy, cx]])
    inv_half = r @ np.diag([1.0 / sq_hi, 1.0 / sq_lo]) @ r.T
    half = r @ np.diag([sq_hi, sq_lo]) @ r.T
    m = inv_half @ t @ inv_half
    m = 0.5 * (m + m.T)
    mlo, mhi, mcx, mcy = _eig_sym_2x2(m[0, 0], m[0, 1], m[1, 1])
    rm = np.array([[mcx, -mcy], [mcy, mcx]])
    logm = rm @ np.diag([np.log(mhi), np.log(mlo)]) @ rm.T
    res = half @ logm @ half
    return res[0, 0] ** 2 + 2.0 * res[0, 1] ** 2 + res[1, 1] ** 2


def _step_objective(mode, l_len, l_base, r_len, r_base,
                    action, act_mean, act_scale, n_l, n_r, target):
    q = act_mean[:n_l + n_r] + act_scale[:n_l + n_r] * action[:n_l + n_r]
    bme = vel_bme(mode, l_len, l_base, q[:n_l], r_len, r_base, q[n_l:])
    return _log_residual_sq(bme, target)


def window_objective(mode, l_len, l_base, r_len, r_base,
                     actions, act_mean, act_scale, n_l, n_r, targets):
    """Sum over window steps of the alignment objective vs targets.

    ``actions`` is (n_steps, act_dim) in normalized units; ``targets``
    is (n_steps, 2, 2) SPD.  The objective per step uses the current
    ellipsoid as the log-map base.
    """
    total = 0.0
    for k in range(actions.shape[0]):
        total += _step_objective(mode, l_len, l_base, r_len, r_base,
                                 actions[k], act_mean, act_scale,
                                 n_l, n_r, targets[k])
    return total


def window_gradient(mode, l_len, l_base, r_len, r_base,
                    actions, act_mean, act_scale, n_l, n_r, targets,
                    fd_step):
    """Central-difference gradient of window_objective w.r.t. actions.

    Only joint coordinates of each step carry gradient; trailing
    (gripper) coordinates are zero.  Each coordinate perturbs only its
    own step's term, so the stencil re-evaluates single steps.
    """
    n_steps, act_dim = actions.shape
    grad = np.zeros((n_steps, act_dim))
    work = actions.copy()
    for k in range(n_steps):
        for j in range(n_l + n_r):
            orig = work[k, j]
            work[k, j] = orig + fd_step
            hi = _step_objective(mode, l_len, l_base, r_len, r_base,
                                 work[k], act_mean, act_scale,
                                 n_l, n_r, targets[k])
            work[k, j] = orig - fd_step
            lo = _step_objective(mode, l_len, l_base, r_len, r_base,
                                 work[k], act_mean, act_scale,
                                 n_l, n_r, targets[k])
            work[k, j] = orig
            grad[k, j] = (hi - lo) / (2.0 * fd_step)
    return grad
