"""Pure-Python kinematics kernels.

Reference implementation and fallback for ``_kernels.pyx``. Both modules
expose the same functions with identical signatures:

    pose(dh, pre, tool, q, n) -> (4, 4)
    jacobian(dh, pre, tool, q, n) -> (6, 9)
    rotation_log(r) -> (3,)
    solve_ik(dh, pre, tool, target, q0, n, scale, lo, hi, clamp,
             lam, max_iter, tol_p, tol_r, rot_scale) -> (q, converged, iters, err_p, err_r)
    track_path(dh, pre, tool, rotation, points, q0, n, scale, lo, hi,
               lam, max_iter, tol_p, tol_r, rot_scale) -> (qs, n_converged)
    positions(dh, pre, tool, qs, n) -> (m, 3)

``dh`` is a (9, 5) array of rows ``(a, alpha, d, theta_offset, prismatic)``,
``pre`` a (9, 4, 4) stack of fixed transforms applied before each joint and
``n`` the number of leading joints that take part (the rest are ignored).
"""

import math

import numpy as np


def dh_matrix(a, alpha, d, theta):
    ct, st = math.cos(theta), math.sin(theta)
    ca, sa = math.cos(alpha), math.sin(alpha)
    return np.array(
        [
            [ct, -st * ca, st * sa, a * ct],
            [st, ct * ca, -ct * sa, a * st],
            [0.0, sa, ca, d],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def _joint_matrix(row, qi):
    a, alpha, d, theta, prismatic = row
    if prismatic:
        return dh_matrix(a, alpha, d + qi, theta)
    return dh_matrix(a, alpha, d, theta + qi)


def pose(dh, pre, tool, q, n):
    t = np.eye(4)
    for k in range(n):
        t = t @ pre[k] @ _joint_matrix(dh[k], q[k])
    return t @ tool


def jacobian(dh, pre, tool, q, n):
    t = np.eye(4)
    axes = []
    for k in range(n):
        t = t @ pre[k]
        axes.append((t[:3, 2].copy(), t[:3, 3].copy(), bool(dh[k][4])))
        t = t @ _joint_matrix(dh[k], q[k])
    p = (t @ tool)[:3, 3]
    jac = np.zeros((6, 9))
    for k, (z, o, prismatic) in enumerate(axes):
        if prismatic:
            jac[:3, k] = z
        else:
            jac[:3, k] = np.cross(z, p - o)
            jac[3:, k] = z
    return jac


def rotation_log(r):
    """Axis-angle vector of a rotation matrix."""
    cos_th = (r[0, 0] + r[1, 1] + r[2, 2] - 1.0) * 0.5
    cos_th = min(1.0, max(-1.0, cos_th))
    th = math.acos(cos_th)
    w = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]) * 0.5
    if th < 1e-6:
        return w
    if math.pi - th > 1e-6:
        return w * (th / math.sin(th))
    # near pi: axis from the dominant diagonal entry
    k = int(np.argmax(np.diag(r)))
    axis = (r[:, k] + np.eye(3)[k]) / math.sqrt(2.0 * (1.0 + r[k, k]))
    return axis * th


def _error(target, cur, rot_scale):
    e = np.empty(6)
    e[:3] = target[:3, 3] - cur[:3, 3]
    e[3:] = rotation_log(target[:3, :3] @ cur[:3, :3].T) * rot_scale
    return e


def solve_ik(dh, pre, tool, target, q0, n, scale, lo, hi, clamp,
             lam, max_iter, tol_p, tol_r, rot_scale):
    q = np.array(q0, dtype=float)
    cur = pose(dh, pre, tool, q, n)
    e = _error(target, cur, rot_scale)
    cost = float(e @ e)
    damp = lam
    it = 0
    while it < max_iter:
        err_p = math.sqrt(float(e[:3] @ e[:3]))
        err_r = math.sqrt(float(e[3:] @ e[3:])) / rot_scale
        if err_p <= tol_p and err_r <= tol_r:
            return q, True, it, err_p, err_r
        it += 1
        jac = jacobian(dh, pre, tool, q, n)
        jac[3:] *= rot_scale
        jw = jac * scale
        a = jw @ jw.T + (damp * damp) * np.eye(6)
        dq = scale * (jw.T @ np.linalg.solve(a, e))
        trial = q + dq
        if clamp:
            trial = np.minimum(np.maximum(trial, lo), hi)
        cur_t = pose(dh, pre, tool, trial, n)
        e_t = _error(target, cur_t, rot_scale)
        cost_t = float(e_t @ e_t)
        if cost_t < cost:
            q, e, cost = trial, e_t, cost_t
            damp = max(damp * 0.1, lam)
        else:
            damp *= 10.0
            if damp > 1e8:
                break
    err_p = math.sqrt(float(e[:3] @ e[:3]))
    err_r = math.sqrt(float(e[3:] @ e[3:])) / rot_scale
    return q, err_p <= tol_p and err_r <= tol_r, it, err_p, err_r


def track_path(dh, pre, tool, rotation, points, q0, n, scale, lo, hi,
               lam, max_iter, tol_p, tol_r, rot_scale):
    """Clamped IK along a point sequence, each solve seeded by the last.

    Stops at the first point that does not converge.
    """
    q = np.array(q0, dtype=float)
    target = np.eye(4)
    target[:3, :3] = rotation
    out = []
    for p in points:
        target[:3, 3] = p
        q, ok, _, _, _ = solve_ik(dh, pre, tool, target, q, n, scale, lo, hi, True,
                                  lam, max_iter, tol_p, tol_r, rot_scale)
        if not ok:
            break
        out.append(q)
    return np.array(out, dtype=float).reshape(len(out), 9), len(out)


def positions(dh, pre, tool, qs, n):
    return np.array([pose(dh, pre, tool, q, n)[:3, 3] for q in qs], dtype=float).reshape(len(qs), 3)
