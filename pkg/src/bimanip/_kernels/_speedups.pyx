# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""C implementations of the sampling-loop hot kernels.

Function-for-function twin of ``_fallback.py``; see that module for the
shared conventions.  All matrix work here is fixed-size (2x2 / 3x3), so
everything stays in C stack arrays with closed-form decompositions.
"""

from libc.math cimport cos, sin, sqrt, log, fabs, hypot

import numpy as np

MODE_ABSOLUTE = 0
MODE_RELATIVE = 1

cdef int _MODE_ABS = 0

cdef double _CLAMP_REL = 1e-6
cdef double _CLAMP_ABS = 1e-9

DEF MAX_JOINTS = 16


cdef void _pose(const double* lengths, Py_ssize_t n, double bx, double by,
                double bth, const double* q, double* out) noexcept nogil:
    cdef double th = bth
    cdef double x = bx
    cdef double y = by
    cdef Py_ssize_t i
    for i in range(n):
        th += q[i]
        x += lengths[i] * cos(th)
        y += lengths[i] * sin(th)
    out[0] = x
    out[1] = y
    out[2] = th


cdef void _jac(const double* lengths, Py_ssize_t n, double bx, double by,
               double bth, const double* q, double* jx, double* jy) noexcept nogil:
    # jx[i], jy[i] hold the first two Jacobian rows; the omega row is 1.
    cdef double th = bth
    cdef double px = bx
    cdef double py = by
    cdef double tx, ty
    cdef Py_ssize_t i
    for i in range(n):
        jx[i] = px
        jy[i] = py
        th += q[i]
        px += lengths[i] * cos(th)
        py += lengths[i] * sin(th)
    for i in range(n):
        tx = -(py - jy[i])
        ty = px - jx[i]
        jx[i] = tx
        jy[i] = ty


def chain_pose(lengths, base_x, base_y, base_th, q):
    """End-effector pose (x, y, theta) of one planar chain."""
    cdef const double[::1] lv = np.ascontiguousarray(lengths, dtype=np.float64)
    cdef const double[::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef double out[3]
    _pose(&lv[0], qv.shape[0], base_x, base_y, base_th, &qv[0], out)
    return out[0], out[1], out[2]


def chain_jacobian(lengths, base_x, base_y, base_th, q):
    """Geometric Jacobian, rows (vx, vy, omega), columns per joint."""
    cdef const double[::1] lv = np.ascontiguousarray(lengths, dtype=np.float64)
    cdef const double[::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef Py_ssize_t n = qv.shape[0]
    cdef Py_ssize_t i
    cdef double jx[MAX_JOINTS]
    cdef double jy[MAX_JOINTS]
    if n > MAX_JOINTS:
        raise ValueError("kernel supports at most 16 joints per chain")
    _jac(&lv[0], n, base_x, base_y, base_th, &qv[0], jx, jy)
    out = np.empty((3, n))
    cdef double[:, ::1] ov = out
    for i in range(n):
        ov[0, i] = jx[i]
        ov[1, i] = jy[i]
        ov[2, i] = 1.0
    return out


cdef void _eig_sym_2x2(double a, double b, double c,
                       double* lo, double* hi, double* cx, double* cy) noexcept nogil:
    cdef double half_tr = 0.5 * (a + c)
    cdef double half_gap = 0.5 * (a - c)
    cdef double disc = hypot(half_gap, b)
    cdef double vhi = half_tr + disc
    cdef double vx, vy, nrm
    hi[0] = vhi
    lo[0] = half_tr - disc
    if fabs(vhi - a) > fabs(vhi - c):
        vx = b
        vy = vhi - a
    else:
        vx = vhi - c
        vy = b
    nrm = hypot(vx, vy)
    if nrm < 1e-300:
        cx[0] = 1.0
        cy[0] = 0.0
    else:
        cx[0] = vx / nrm
        cy[0] = vy / nrm


cdef void _clamp_spd_2x2(double* m) noexcept nogil:
    cdef double lo, hi, cx, cy, floor
    _eig_sym_2x2(m[0], m[1], m[3], &lo, &hi, &cx, &cy)
    floor = _CLAMP_REL * hi if hi > 0.0 else 0.0
    if floor < _CLAMP_ABS:
        floor = _CLAMP_ABS
    if hi < floor:
        hi = floor
    if lo < floor:
        lo = floor
    m[0] = hi * cx * cx + lo * cy * cy
    m[1] = (hi - lo) * cx * cy
    m[2] = m[1]
    m[3] = hi * cy * cy + lo * cx * cx


cdef void _inv_3x3(const double* g, double* out) noexcept nogil:
    # adjugate over determinant; inputs are well-conditioned here
    cdef double det
    cdef Py_ssize_t i
    out[0] = g[4] * g[8] - g[5] * g[7]
    out[1] = g[2] * g[7] - g[1] * g[8]
    out[2] = g[1] * g[5] - g[2] * g[4]
    out[3] = g[5] * g[6] - g[3] * g[8]
    out[4] = g[0] * g[8] - g[2] * g[6]
    out[5] = g[2] * g[3] - g[0] * g[5]
    out[6] = g[3] * g[7] - g[4] * g[6]
    out[7] = g[1] * g[6] - g[0] * g[7]
    out[8] = g[0] * g[4] - g[1] * g[3]
    det = g[0] * out[0] + g[1] * out[3] + g[2] * out[6]
    for i in range(9):
        out[i] /= det


cdef void _mm3(const double* a, const double* b, double* out) noexcept nogil:
    cdef Py_ssize_t i, j, k
    for i in range(3):
        for j in range(3):
            out[3 * i + j] = 0.0
            for k in range(3):
                out[3 * i + j] += a[3 * i + k] * b[3 * k + j]


cdef void _vel_bme(int mode,
                   const double* l_len, Py_ssize_t nl,
                   double lbx, double lby, double lbth, const double* q_l,
                   const double* r_len, Py_ssize_t nr,
                   double rbx, double rby, double rbth, const double* q_r,
                   double* bme) noexcept nogil:
    cdef double jlx[MAX_JOINTS]
    cdef double jly[MAX_JOINTS]
    cdef double jrx[MAX_JOINTS]
    cdef double jry[MAX_JOINTS]
    cdef double pl[3]
    cdef double pr[3]
    cdef double ml[9]
    cdef double mr[9]
    cdef double core[9]
    cdef double gl[9]
    cdef double gr[9]
    cdef double ggt[9]
    cdef double s[9]
    cdef double acc[9]
    cdef double tmp[9]
    cdef double tmp2[9]
    cdef double rot_t[9]
    cdef double psi[9]
    cdef double a_[9]
    cdef double rx, ry, cl, sl, dx, dy, px, py
    cdef Py_ssize_t i, j, k

    _jac(l_len, nl, lbx, lby, lbth, q_l, jlx, jly)
    _jac(r_len, nr, rbx, rby, rbth, q_r, jrx, jry)
    _pose(l_len, nl, lbx, lby, lbth, q_l, pl)
    _pose(r_len, nr, rbx, rby, rbth, q_r, pr)

    # M_i = J_i J_i^T as 3x3 (rows vx, vy, omega)
    for i in range(9):
        ml[i] = 0.0
        mr[i] = 0.0
    for k in range(nl):
        ml[0] += jlx[k] * jlx[k]
        ml[1] += jlx[k] * jly[k]
        ml[2] += jlx[k]
        ml[4] += jly[k] * jly[k]
        ml[5] += jly[k]
    ml[3] = ml[1]
    ml[6] = ml[2]
    ml[7] = ml[5]
    ml[8] = nl
    for k in range(nr):
        mr[0] += jrx[k] * jrx[k]
        mr[1] += jrx[k] * jry[k]
        mr[2] += jrx[k]
        mr[4] += jry[k] * jry[k]
        mr[5] += jry[k]
    mr[3] = mr[1]
    mr[6] = mr[2]
    mr[7] = mr[5]
    mr[8] = nr

    if mode == _MODE_ABS:
        rx = 0.5 * (pr[0] - pl[0])
        ry = 0.5 * (pr[1] - pl[1])
        # G_l offset (-rx, -ry); G_r offset (rx, ry)
        gl[0] = 1.0; gl[1] = 0.0; gl[2] = ry
        gl[3] = 0.0; gl[4] = 1.0; gl[5] = -rx
        gl[6] = 0.0; gl[7] = 0.0; gl[8] = 1.0
        gr[0] = 1.0; gr[1] = 0.0; gr[2] = -ry
        gr[3] = 0.0; gr[4] = 1.0; gr[5] = rx
        gr[6] = 0.0; gr[7] = 0.0; gr[8] = 1.0
        for i in range(3):
            for j in range(3):
                ggt[3 * i + j] = 0.0
                for k in range(3):
                    ggt[3 * i + j] += (gl[3 * i + k] * gl[3 * j + k]
                                       + gr[3 * i + k] * gr[3 * j + k])
        _mm3(gl, ml, tmp)
        for i in range(3):
            for j in range(3):
                acc[3 * i + j] = 0.0
                for k in range(3):
                    acc[3 * i + j] += tmp[3 * i + k] * gl[3 * j + k]
        _mm3(gr, mr, tmp)
        for i in range(3):
            for j in range(3):
                for k in range(3):
                    acc[3 * i + j] += tmp[3 * i + k] * gr[3 * j + k]
        _inv_3x3(ggt, s)
        _mm3(s, acc, tmp)
        _mm3(tmp, s, core)
    else:
        cl = cos(pl[2])
        sl = sin(pl[2])
        dx = pr[0] - pl[0]
        dy = pr[1] - pl[1]
        px = cl * dx + sl * dy
        py = -sl * dx + cl * dy
        rot_t[0] = cl;  rot_t[1] = sl;  rot_t[2] = 0.0
        rot_t[3] = -sl; rot_t[4] = cl;  rot_t[5] = 0.0
        rot_t[6] = 0.0; rot_t[7] = 0.0; rot_t[8] = 1.0
        psi[0] = 1.0; psi[1] = 0.0; psi[2] = -py
        psi[3] = 0.0; psi[4] = 1.0; psi[5] = px
        psi[6] = 0.0; psi[7] = 0.0; psi[8] = 1.0
        # core = (psi rot_t) ml (psi rot_t)^T + rot_t mr rot_t^T
        _mm3(psi, rot_t, a_)
        _mm3(a_, ml, tmp)
        for i in range(3):
            for j in range(3):
                tmp2[3 * i + j] = 0.0
                for k in range(3):
                    tmp2[3 * i + j] += tmp[3 * i + k] * a_[3 * j + k]
        _mm3(rot_t, mr, tmp)
        for i in range(3):
            for j in range(3):
                core[3 * i + j] = tmp2[3 * i + j]
                for k in range(3):
                    core[3 * i + j] += tmp[3 * i + k] * rot_t[3 * j + k]

    bme[0] = core[0]
    bme[1] = core[1]
    bme[2] = core[3]
    bme[3] = core[4]
    _clamp_spd_2x2(bme)


def vel_bme(mode, l_len, l_base, q_l, r_len, r_base, q_r):
    """Translational velocity ellipsoid of the coupled system, clamped."""
    cdef const double[::1] ll = np.ascontiguousarray(l_len, dtype=np.float64)
    cdef const double[::1] rl = np.ascontiguousarray(r_len, dtype=np.float64)
    cdef const double[::1] ql = np.ascontiguousarray(q_l, dtype=np.float64)
    cdef const double[::1] qr = np.ascontiguousarray(q_r, dtype=np.float64)
    cdef double b[4]
    if ql.shape[0] > MAX_JOINTS or qr.shape[0] > MAX_JOINTS:
        raise ValueError("kernel supports at most 16 joints per chain")
    _vel_bme(int(mode), &ll[0], ql.shape[0], l_base[0], l_base[1], l_base[2],
             &ql[0], &rl[0], qr.shape[0], r_base[0], r_base[1], r_base[2],
             &qr[0], b)
    out = np.empty((2, 2))
    out[0, 0] = b[0]
    out[0, 1] = b[1]
    out[1, 0] = b[2]
    out[1, 1] = b[3]
    return out


cdef double _log_residual_sq(const double* b, const double* t) noexcept nogil:
    cdef double lo, hi, cx, cy
    cdef double sq_lo, sq_hi
    cdef double ih[4]
    cdef double hf[4]
    cdef double m[4]
    cdef double lg[4]
    cdef double mlo, mhi, mcx, mcy
    cdef double x00, x01, x10, x11
    cdef double r00, r01, r11

    _eig_sym_2x2(b[0], b[1], b[3], &lo, &hi, &cx, &cy)
    sq_lo = sqrt(lo)
    sq_hi = sqrt(hi)
    # frame columns: hi-vector (cx, cy), lo-vector (-cy, cx)
    ih[0] = cx * cx / sq_hi + cy * cy / sq_lo
    ih[1] = cx * cy * (1.0 / sq_hi - 1.0 / sq_lo)
    ih[2] = ih[1]
    ih[3] = cy * cy / sq_hi + cx * cx / sq_lo
    hf[0] = cx * cx * sq_hi + cy * cy * sq_lo
    hf[1] = cx * cy * (sq_hi - sq_lo)
    hf[2] = hf[1]
    hf[3] = cy * cy * sq_hi + cx * cx * sq_lo
    # m = ih t ih, symmetrized
    x00 = ih[0] * t[0] + ih[1] * t[2]
    x01 = ih[0] * t[1] + ih[1] * t[3]
    x10 = ih[2] * t[0] + ih[3] * t[2]
    x11 = ih[2] * t[1] + ih[3] * t[3]
    m[0] = x00 * ih[0] + x01 * ih[2]
    m[1] = x00 * ih[1] + x01 * ih[3]
    m[2] = x10 * ih[0] + x11 * ih[2]
    m[3] = x10 * ih[1] + x11 * ih[3]
    m[1] = 0.5 * (m[1] + m[2])
    m[2] = m[1]
    _eig_sym_2x2(m[0], m[1], m[3], &mlo, &mhi, &mcx, &mcy)
    lg[0] = mcx * mcx * log(mhi) + mcy * mcy * log(mlo)
    lg[1] = mcx * mcy * (log(mhi) - log(mlo))
    lg[2] = lg[1]
    lg[3] = mcy * mcy * log(mhi) + mcx * mcx * log(mlo)
    # res = hf lg hf (symmetric)
    x00 = hf[0] * lg[0] + hf[1] * lg[2]
    x01 = hf[0] * lg[1] + hf[1] * lg[3]
    x10 = hf[2] * lg[0] + hf[3] * lg[2]
    x11 = hf[2] * lg[1] + hf[3] * lg[3]
    r00 = x00 * hf[0] + x01 * hf[2]
    r01 = x00 * hf[1] + x01 * hf[3]
    r11 = x10 * hf[1] + x11 * hf[3]
    return r00 * r00 + 2.0 * r01 * r01 + r11 * r11


cdef double _step_objective(int mode,
                            const double* l_len, Py_ssize_t nl,
                            double lbx, double lby, double lbth,
                            const double* r_len, Py_ssize_t nr,
                            double rbx, double rby, double rbth,
                            const double* action, const double* act_mean,
                            const double* act_scale,
                            const double* target) noexcept nogil:
    cdef double q[2 * MAX_JOINTS]
    cdef double b[4]
    cdef Py_ssize_t j
    for j in range(nl + nr):
        q[j] = act_mean[j] + act_scale[j] * action[j]
    _vel_bme(mode, l_len, nl, lbx, lby, lbth, &q[0],
             r_len, nr, rbx, rby, rbth, &q[nl], b)
    return _log_residual_sq(b, target)


def window_objective(mode, l_len, l_base, r_len, r_base,
                     actions, act_mean, act_scale, n_l, n_r, targets):
    """Sum over window steps of the alignment objective vs targets."""
    cdef const double[::1] ll = np.ascontiguousarray(l_len, dtype=np.float64)
    cdef const double[::1] rl = np.ascontiguousarray(r_len, dtype=np.float64)
    cdef const double[:, ::1] av = np.ascontiguousarray(actions, dtype=np.float64)
    cdef const double[::1] mv = np.ascontiguousarray(act_mean, dtype=np.float64)
    cdef const double[::1] sv = np.ascontiguousarray(act_scale, dtype=np.float64)
    cdef const double[:, :, ::1] tv = np.ascontiguousarray(targets,
                                                     dtype=np.float64)
    cdef int md = int(mode)
    cdef Py_ssize_t nl = int(n_l)
    cdef Py_ssize_t nr = int(n_r)
    cdef Py_ssize_t k
    cdef double lbx = l_base[0], lby = l_base[1], lbth = l_base[2]
    cdef double rbx = r_base[0], rby = r_base[1], rbth = r_base[2]
    cdef double total = 0.0
    if nl > MAX_JOINTS or nr > MAX_JOINTS:
        raise ValueError("kernel supports at most 16 joints per chain")
    for k in range(av.shape[0]):
        total += _step_objective(md, &ll[0], nl, lbx, lby, lbth,
                                 &rl[0], nr, rbx, rby, rbth,
                                 &av[k, 0], &mv[0], &sv[0], &tv[k, 0, 0])
    return total


def window_gradient(mode, l_len, l_base, r_len, r_base,
                    actions, act_mean, act_scale, n_l, n_r, targets,
                    fd_step):
    """Central-difference gradient of window_objective w.r.t. actions.

    Only joint coordinates carry gradient; trailing (gripper)
    coordinates are zero.  Each coordinate perturbs only its own step's
    term, so the stencil re-evaluates single steps.
    """
    cdef const double[::1] ll = np.ascontiguousarray(l_len, dtype=np.float64)
    cdef const double[::1] rl = np.ascontiguousarray(r_len, dtype=np.float64)
    work = np.array(actions, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] av = work
    cdef const double[::1] mv = np.ascontiguousarray(act_mean, dtype=np.float64)
    cdef const double[::1] sv = np.ascontiguousarray(act_scale, dtype=np.float64)
    cdef const double[:, :, ::1] tv = np.ascontiguousarray(targets,
                                                     dtype=np.float64)
    cdef int md = int(mode)
    cdef Py_ssize_t nl = int(n_l)
    cdef Py_ssize_t nr = int(n_r)
    cdef Py_ssize_t k, j
    cdef double lbx = l_base[0], lby = l_base[1], lbth = l_base[2]
    cdef double rbx = r_base[0], rby = r_base[1], rbth = r_base[2]
    cdef double h = float(fd_step)
    cdef double orig, east, west
    grad = np.zeros((av.shape[0], av.shape[1]))
    cdef double[:, ::1] gv = grad
    if nl > MAX_JOINTS or nr > MAX_JOINTS:
        raise ValueError("kernel supports at most 16 joints per chain")
    with nogil:
        for k in range(av.shape[0]):
            for j in range(nl + nr):
                orig = av[k, j]
                av[k, j] = orig + h
                east = _step_objective(md, &ll[0], nl, lbx, lby, lbth,
                                       &rl[0], nr, rbx, rby, rbth,
                                       &av[k, 0], &mv[0], &sv[0],
                                       &tv[k, 0, 0])
                av[k, j] = orig - h
                west = _step_objective(md, &ll[0], nl, lbx, lby, lbth,
                                       &rl[0], nr, rbx, rby, rbth,
                                       &av[k, 0], &mv[0], &sv[0],
                                       &tv[k, 0, 0])
                av[k, j] = orig
                gv[k, j] = (east - west) / (2.0 * h)
    return grad
