# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kinematics kernels; same contract as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, acos, sqrt, M_PI

cnp.import_array()


cdef inline void _eye(double* t) noexcept nogil:
    cdef int i
    for i in range(16):
        t[i] = 0.0
    t[0] = 1.0
    t[5] = 1.0
    t[10] = 1.0
    t[15] = 1.0


cdef inline void _matmul(const double* a, const double* b, double* out) noexcept nogil:
    # 4x4 row-major homogeneous product; bottom row assumed (0, 0, 0, 1)
    cdef int i, j
    for i in range(3):
        for j in range(4):
            out[4 * i + j] = (a[4 * i] * b[j] + a[4 * i + 1] * b[4 + j]
                              + a[4 * i + 2] * b[8 + j])
        out[4 * i + 3] += a[4 * i + 3]
    out[12] = 0.0
    out[13] = 0.0
    out[14] = 0.0
    out[15] = 1.0


cdef inline void _dh(double a, double alpha, double d, double theta, double* t) noexcept nogil:
    cdef double ct = cos(theta), st = sin(theta)
    cdef double ca = cos(alpha), sa = sin(alpha)
    t[0] = ct
    t[1] = -st * ca
    t[2] = st * sa
    t[3] = a * ct
    t[4] = st
    t[5] = ct * ca
    t[6] = -ct * sa
    t[7] = a * st
    t[8] = 0.0
    t[9] = sa
    t[10] = ca
    t[11] = d
    t[12] = 0.0
    t[13] = 0.0
    t[14] = 0.0
    t[15] = 1.0


cdef void _pose(const double[:, ::1] dh, const double[:, :, ::1] pre,
                const double[:, ::1] tool, const double* q, int n, double* out) noexcept nogil:
    cdef double t[16]
    cdef double tmp[16]
    cdef double j[16]
    cdef int k
    _eye(t)
    for k in range(n):
        _matmul(t, &pre[k, 0, 0], tmp)
        if dh[k, 4] != 0.0:
            _dh(dh[k, 0], dh[k, 1], dh[k, 2] + q[k], dh[k, 3], j)
        else:
            _dh(dh[k, 0], dh[k, 1], dh[k, 2], dh[k, 3] + q[k], j)
        _matmul(tmp, j, t)
    _matmul(t, &tool[0, 0], out)


cdef void _jacobian(const double[:, ::1] dh, const double[:, :, ::1] pre,
                    const double[:, ::1] tool, const double* q, int n, double* jac) noexcept nogil:
    # jac is 6x9 row-major
    cdef double t[16]
    cdef double tmp[16]
    cdef double j[16]
    cdef double z[27]
    cdef double o[27]
    cdef double p[3]
    cdef double rx, ry, rz
    cdef int k
    for k in range(54):
        jac[k] = 0.0
    _eye(t)
    for k in range(n):
        _matmul(t, &pre[k, 0, 0], tmp)
        z[3 * k] = tmp[2]
        z[3 * k + 1] = tmp[6]
        z[3 * k + 2] = tmp[10]
        o[3 * k] = tmp[3]
        o[3 * k + 1] = tmp[7]
        o[3 * k + 2] = tmp[11]
        if dh[k, 4] != 0.0:
            _dh(dh[k, 0], dh[k, 1], dh[k, 2] + q[k], dh[k, 3], j)
        else:
            _dh(dh[k, 0], dh[k, 1], dh[k, 2], dh[k, 3] + q[k], j)
        _matmul(tmp, j, t)
    _matmul(t, &tool[0, 0], tmp)
    p[0] = tmp[3]
    p[1] = tmp[7]
    p[2] = tmp[11]
    for k in range(n):
        if dh[k, 4] != 0.0:
            jac[k] = z[3 * k]
            jac[9 + k] = z[3 * k + 1]
            jac[18 + k] = z[3 * k + 2]
        else:
            rx = p[0] - o[3 * k]
            ry = p[1] - o[3 * k + 1]
            rz = p[2] - o[3 * k + 2]
            jac[k] = z[3 * k + 1] * rz - z[3 * k + 2] * ry
            jac[9 + k] = z[3 * k + 2] * rx - z[3 * k] * rz
            jac[18 + k] = z[3 * k] * ry - z[3 * k + 1] * rx
            jac[27 + k] = z[3 * k]
            jac[36 + k] = z[3 * k + 1]
            jac[45 + k] = z[3 * k + 2]


cdef void _rotlog(const double* r, double* w) noexcept nogil:
    # r is a 3x3 row-major rotation
    cdef double c = (r[0] + r[4] + r[8] - 1.0) * 0.5
    cdef double th, f, d
    cdef int k
    if c > 1.0:
        c = 1.0
    if c < -1.0:
        c = -1.0
    th = acos(c)
    w[0] = (r[7] - r[5]) * 0.5
    w[1] = (r[2] - r[6]) * 0.5
    w[2] = (r[3] - r[1]) * 0.5
    if th < 1e-6:
        return
    if M_PI - th > 1e-6:
        f = th / sin(th)
        w[0] *= f
        w[1] *= f
        w[2] *= f
        return
    k = 0
    if r[4] > r[0]:
        k = 1
    if r[8] > r[4 * k]:
        k = 2
    d = sqrt(2.0 * (1.0 + r[4 * k]))
    w[0] = r[k] / d
    w[1] = r[3 + k] / d
    w[2] = r[6 + k] / d
    w[k] += 1.0 / d
    w[0] *= th
    w[1] *= th
    w[2] *= th


cdef double _error(const double* target, const double* cur, double rot_scale,
                   double* e) noexcept nogil:
    cdef double rel[9]
    cdef double s = 0.0
    cdef int i, j
    for i in range(3):
        e[i] = target[4 * i + 3] - cur[4 * i + 3]
        for j in range(3):
            # target_R @ cur_R^T
            rel[3 * i + j] = (target[4 * i] * cur[4 * j] + target[4 * i + 1] * cur[4 * j + 1]
                              + target[4 * i + 2] * cur[4 * j + 2])
    _rotlog(rel, &e[3])
    e[3] *= rot_scale
    e[4] *= rot_scale
    e[5] *= rot_scale
    for i in range(6):
        s += e[i] * e[i]
    return s


cdef int _chol_solve6(double* a, double* b) noexcept nogil:
    # in-place Cholesky of a 6x6 SPD matrix, then solve a x = b into b
    cdef int i, j, k
    cdef double s
    for j in range(6):
        s = a[6 * j + j]
        for k in range(j):
            s -= a[6 * j + k] * a[6 * j + k]
        if s <= 0.0:
            return -1
        a[6 * j + j] = sqrt(s)
        for i in range(j + 1, 6):
            s = a[6 * i + j]
            for k in range(j):
                s -= a[6 * i + k] * a[6 * j + k]
            a[6 * i + j] = s / a[6 * j + j]
    for i in range(6):
        s = b[i]
        for k in range(i):
            s -= a[6 * i + k] * b[k]
        b[i] = s / a[6 * i + i]
    for i in range(5, -1, -1):
        s = b[i]
        for k in range(i + 1, 6):
            s -= a[6 * k + i] * b[k]
        b[i] = s / a[6 * i + i]
    return 0


def pose(const double[:, ::1] dh, const double[:, :, ::1] pre, const double[:, ::1] tool,
         const double[::1] q, int n):
    out = np.empty((4, 4))
    cdef double[:, ::1] ov = out
    _pose(dh, pre, tool, &q[0], n, &ov[0, 0])
    return out


def jacobian(const double[:, ::1] dh, const double[:, :, ::1] pre, const double[:, ::1] tool,
             const double[::1] q, int n):
    out = np.empty((6, 9))
    cdef double[:, ::1] ov = out
    _jacobian(dh, pre, tool, &q[0], n, &ov[0, 0])
    return out


def rotation_log(r):
    cdef double rr[9]
    cdef double w[3]
    cdef int i, j
    for i in range(3):
        for j in range(3):
            rr[3 * i + j] = r[i, j]
    _rotlog(rr, w)
    return np.array([w[0], w[1], w[2]])


cdef int _solve(const double[:, ::1] dh, const double[:, :, ::1] pre, const double[:, ::1] tool,
                const double* target, double* q, int n,
                const double[::1] scale, const double[::1] lo, const double[::1] hi, bint clamp,
                double lam, int max_iter, double tol_p, double tol_r, double rot_scale,
                double* errs) noexcept nogil:
    # damped least squares in place on q; returns the iteration count
    cdef double qt[9]
    cdef double cur[16]
    cdef double e[6]
    cdef double et[6]
    cdef double jac[54]
    cdef double jw[54]
    cdef double a[36]
    cdef double b[6]
    cdef double cost, cost_t, damp = lam, s, err_p, err_r
    cdef int i, j, k, it = 0
    _pose(dh, pre, tool, q, n, cur)
    cost = _error(target, cur, rot_scale, e)
    while it < max_iter:
        err_p = sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2])
        err_r = sqrt(e[3] * e[3] + e[4] * e[4] + e[5] * e[5]) / rot_scale
        if err_p <= tol_p and err_r <= tol_r:
            break
        it += 1
        _jacobian(dh, pre, tool, q, n, jac)
        for i in range(6):
            for j in range(9):
                s = jac[9 * i + j] * scale[j]
                if i >= 3:
                    s *= rot_scale
                jw[9 * i + j] = s
        for i in range(6):
            for j in range(i + 1):
                s = 0.0
                for k in range(9):
                    s += jw[9 * i + k] * jw[9 * j + k]
                a[6 * i + j] = s
                a[6 * j + i] = s
            a[6 * i + i] += damp * damp
            b[i] = e[i]
        if _chol_solve6(a, b) != 0:
            damp *= 10.0
            if damp > 1e8:
                break
            continue
        for k in range(9):
            s = 0.0
            for i in range(6):
                s += jw[9 * i + k] * b[i]
            qt[k] = q[k] + scale[k] * s
            if clamp:
                if qt[k] < lo[k]:
                    qt[k] = lo[k]
                elif qt[k] > hi[k]:
                    qt[k] = hi[k]
        _pose(dh, pre, tool, qt, n, cur)
        cost_t = _error(target, cur, rot_scale, et)
        if cost_t < cost:
            for k in range(9):
                q[k] = qt[k]
            for i in range(6):
                e[i] = et[i]
            cost = cost_t
            damp = damp * 0.1
            if damp < lam:
                damp = lam
        else:
            damp *= 10.0
            if damp > 1e8:
                break
    errs[0] = sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2])
    errs[1] = sqrt(e[3] * e[3] + e[4] * e[4] + e[5] * e[5]) / rot_scale
    return it


def solve_ik(const double[:, ::1] dh, const double[:, :, ::1] pre, const double[:, ::1] tool,
             const double[:, ::1] target, const double[::1] q0, int n,
             const double[::1] scale, const double[::1] lo, const double[::1] hi, bint clamp,
             double lam, int max_iter, double tol_p, double tol_r, double rot_scale):
    cdef double q[9]
    cdef double errs[2]
    cdef int i, it
    for i in range(9):
        q[i] = q0[i]
    with nogil:
        it = _solve(dh, pre, tool, &target[0, 0], q, n, scale, lo, hi, clamp,
                    lam, max_iter, tol_p, tol_r, rot_scale, errs)
    out = np.empty(9)
    for i in range(9):
        out[i] = q[i]
    return out, bool(errs[0] <= tol_p and errs[1] <= tol_r), it, errs[0], errs[1]


def track_path(const double[:, ::1] dh, const double[:, :, ::1] pre, const double[:, ::1] tool,
               const double[:, ::1] rotation, const double[:, ::1] points, const double[::1] q0, int n,
               const double[::1] scale, const double[::1] lo, const double[::1] hi,
               double lam, int max_iter, double tol_p, double tol_r, double rot_scale):
    cdef Py_ssize_t m = points.shape[0], k
    cdef double q[9]
    cdef double target[16]
    cdef double errs[2]
    cdef int i, j
    cdef Py_ssize_t done = 0
    out = np.empty((m, 9))
    cdef double[:, ::1] ov = out
    for i in range(9):
        q[i] = q0[i]
    for i in range(3):
        for j in range(3):
            target[4 * i + j] = rotation[i, j]
    target[12] = 0.0
    target[13] = 0.0
    target[14] = 0.0
    target[15] = 1.0
    with nogil:
        for k in range(m):
            target[3] = points[k, 0]
            target[7] = points[k, 1]
            target[11] = points[k, 2]
            _solve(dh, pre, tool, target, q, n, scale, lo, hi, True,
                   lam, max_iter, tol_p, tol_r, rot_scale, errs)
            if not (errs[0] <= tol_p and errs[1] <= tol_r):
                break
            for i in range(9):
                ov[k, i] = q[i]
            done += 1
    return out[:done], done


def positions(const double[:, ::1] dh, const double[:, :, ::1] pre, const double[:, ::1] tool,
              const double[:, ::1] qs, int n):
    cdef Py_ssize_t m = qs.shape[0], k
    cdef double cur[16]
    out = np.empty((m, 3))
    cdef double[:, ::1] ov = out
    with nogil:
        for k in range(m):
            _pose(dh, pre, tool, &qs[k, 0], n, cur)
            ov[k, 0] = cur[3]
            ov[k, 1] = cur[7]
            ov[k, 2] = cur[11]
    return out
