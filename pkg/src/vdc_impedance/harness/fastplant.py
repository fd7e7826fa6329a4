"""Compiled version of :class:`ChainPlant` stepping for batched simulation.

Same equations as the numpy plant (recursive bias forces, Jacobian-based
mass matrix, RK4 with held torques) written as scalar loops for numba.  The
wall contact is evaluated inside every RK4 stage.  Equivalence with the
numpy plant is covered by the test suite.
"""

import numba
import numpy as np

from ..body import mass_matrix
from ..chain import ChainModel

_jit = numba.njit(cache=True, fastmath=False)


@_jit
def _cross(a, b, out):
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


@_jit
def _mm3(A, B):
    out = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            out[i, j] = A[i, 0] * B[0, j] + A[i, 1] * B[1, j] + A[i, 2] * B[2, j]
    return out


@_jit
def _mv(A, x):
    r, c = A.shape
    out = np.empty(r)
    for i in range(r):
        s = 0.0
        for j in range(c):
            s += A[i, j] * x[j]
        out[i] = s
    return out


@_jit
def _vel_to_child(R, r, V, out):
    # out = [R^T (v + w x r), R^T w]
    v0 = V[0] + V[4] * r[2] - V[5] * r[1]
    v1 = V[1] + V[5] * r[0] - V[3] * r[2]
    v2 = V[2] + V[3] * r[1] - V[4] * r[0]
    for i in range(3):
        out[i] = R[0, i] * v0 + R[1, i] * v1 + R[2, i] * v2
        out[3 + i] = R[0, i] * V[3] + R[1, i] * V[4] + R[2, i] * V[5]


@_jit
def _force_to_parent(R, r, F, out):
    f = np.empty(3)
    m = np.empty(3)
    for i in range(3):
        f[i] = R[i, 0] * F[0] + R[i, 1] * F[1] + R[i, 2] * F[2]
        m[i] = R[i, 0] * F[3] + R[i, 1] * F[4] + R[i, 2] * F[5]
    out[0] = f[0]
    out[1] = f[1]
    out[2] = f[2]
    out[3] = m[0] + r[1] * f[2] - r[2] * f[1]
    out[4] = m[1] + r[2] * f[0] - r[0] * f[2]
    out[5] = m[2] + r[0] * f[1] - r[1] * f[0]


@_jit
def _crm_apply(V, W, out):
    # [w x a + v x b, w x b]
    w = V[3:]
    v = V[:3]
    a = W[:3]
    b = W[3:]
    out[0] = w[1] * a[2] - w[2] * a[1] + v[1] * b[2] - v[2] * b[1]
    out[1] = w[2] * a[0] - w[0] * a[2] + v[2] * b[0] - v[0] * b[2]
    out[2] = w[0] * a[1] - w[1] * a[0] + v[0] * b[1] - v[1] * b[0]
    out[3] = w[1] * b[2] - w[2] * b[1]
    out[4] = w[2] * b[0] - w[0] * b[2]
    out[5] = w[0] * b[1] - w[1] * b[0]


@_jit
def _body_wrench(phi, a6, V, g, out):
    # true-parameter dynamics with V_r = V: M dV + C V + G
    m = phi[0]
    h = phi[1:4]
    I = np.empty((3, 3))
    I[0, 0] = phi[4]
    I[1, 1] = phi[5]
    I[2, 2] = phi[6]
    I[0, 1] = I[1, 0] = phi[7]
    I[0, 2] = I[2, 0] = phi[8]
    I[1, 2] = I[2, 1] = phi[9]
    v = V[:3]
    w = V[3:]
    dw = a6[3:]
    wxv = np.empty(3)
    _cross(w, v, wxv)
    b = np.empty(3)
    for i in range(3):
        b[i] = a6[i] - g[i] + wxv[i]
    t1 = np.empty(3)
    t2 = np.empty(3)
    t3 = np.empty(3)
    _cross(dw, h, t1)
    _cross(w, h, t2)
    _cross(w, t2, t3)
    for i in range(3):
        out[i] = m * b[i] + t1[i] + t3[i]
    Iw = _mv(I, w)
    Idw = _mv(I, dw)
    _cross(h, b, t1)
    _cross(w, Iw, t2)
    for i in range(3):
        out[3 + i] = t1[i] + Idw[i] + t2[i]


@_jit
def _rot_axis(axis, q, R0, out):
    # out = R0 @ (I + sin q K + (1 - cos q) K^2)
    s = np.sin(q)
    c = 1.0 - np.cos(q)
    x, y, z = axis[0], axis[1], axis[2]
    K = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    Rj = np.eye(3) + s * K + c * _mm3(K, K)
    out[:, :] = _mm3(R0, Rj)


@_jit
def _rates(q, qd, tau, screws, axes, R0, p0, revolute, phi, friction, gravity, tool_R, tool_p,
           body_M, K_e, z_e, axis, side, bilateral, pulse, qdd, power):
    n = q.shape[0]
    R_rel = np.empty((n, 3, 3))
    p_rel = np.empty((n, 3))
    Rw = np.empty((n + 1, 3, 3))
    pw = np.empty((n + 1, 3))
    R = np.eye(3)
    p = np.zeros(3)
    for i in range(n):
        if revolute[i]:
            _rot_axis(axes[i], q[i], R0[i], R_rel[i])
            p_rel[i] = p0[i]
        else:
            R_rel[i] = R0[i]
            p_rel[i] = p0[i] + _mv(R0[i], axes[i] * q[i])
        p = p + _mv(R, p_rel[i])
        R = _mm3(R, R_rel[i])
        Rw[i] = R
        pw[i] = p
    Rw[n] = _mm3(R, tool_R)
    pw[n] = p + _mv(R, tool_p)

    # tool wrench (tool frame) from the wall and any held external push
    task = pulse.copy()
    z = pw[n, axis]
    if bilateral or side * (z - z_e) > 0.0:
        task[axis] += K_e * (z - z_e)
    tipw = np.empty(6)
    for i in range(3):
        tipw[i] = Rw[n, 0, i] * task[0] + Rw[n, 1, i] * task[1] + Rw[n, 2, i] * task[2]
        tipw[3 + i] = Rw[n, 0, i] * task[3] + Rw[n, 1, i] * task[4] + Rw[n, 2, i] * task[5]

    # velocities and zero-acceleration bias accelerations
    V = np.zeros((n, 6))
    A = np.zeros((n, 6))
    prevV = np.zeros(6)
    prevA = np.zeros(6)
    carried = np.empty(6)
    tmp = np.empty(6)
    sq = np.empty(6)
    for i in range(n):
        _vel_to_child(R_rel[i], p_rel[i], prevV, carried)
        for k in range(6):
            sq[k] = screws[i, k] * qd[i]
        _vel_to_child(R_rel[i], p_rel[i], prevA, tmp)
        _crm_apply(carried, sq, A[i])
        for k in range(6):
            V[i, k] = carried[k] + sq[k]
            A[i, k] += tmp[k]
        prevV = V[i]
        prevA = A[i]

    # bias forces, tip to base
    F = np.empty((n, 6))
    nxt = np.empty(6)
    _force_to_parent(tool_R, tool_p, tipw, nxt)
    g = np.empty(3)
    for i in range(n - 1, -1, -1):
        for k in range(3):
            g[k] = Rw[i, 0, k] * gravity[0] + Rw[i, 1, k] * gravity[1] + Rw[i, 2, k] * gravity[2]
        _body_wrench(phi[i], A[i], V[i], g, F[i])
        for k in range(6):
            F[i, k] += nxt[k]
        if i > 0:
            _force_to_parent(R_rel[i], p_rel[i], F[i], nxt)
    rhs = np.empty(n)
    for i in range(n):
        s = 0.0
        for k in range(6):
            s += screws[i, k] * F[i, k]
        rhs[i] = tau[i] - s - friction[i] * qd[i]

    # mass matrix from body Jacobians
    Jb = np.zeros((n, n, 6))  # [joint, body, :]
    for j in range(n):
        for k in range(6):
            Jb[j, j, k] = screws[j, k]
        for i in range(j + 1, n):
            _vel_to_child(R_rel[i], p_rel[i], Jb[j, i - 1], Jb[j, i])
    M = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            MJ = _mv(body_M[i], Jb[j, i])
            for k in range(j, n):
                s = 0.0
                for c in range(6):
                    s += Jb[k, i, c] * MJ[c]
                M[j, k] += s
    for j in range(n):
        for k in range(j):
            M[j, k] = M[k, j]

    # Cholesky solve
    L = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            s = M[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    y = np.empty(n)
    for i in range(n):
        s = rhs[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= L[k, i] * qdd[k]
        qdd[i] = s / L[i, i]

    # powers: actuators, friction, tool
    pa = 0.0
    pf = 0.0
    for i in range(n):
        pa += tau[i] * qd[i]
        pf += friction[i] * qd[i] * qd[i]
    _vel_to_child(tool_R, tool_p, V[n - 1], tmp)
    pt = 0.0
    for k in range(6):
        pt += tmp[k] * tipw[k]
    power[0] = pa
    power[1] = pf
    power[2] = pt


@_jit
def _rk4_batch(q, qd, tau, dt, screws, axes, R0, p0, revolute, phi, friction, gravity, tool_R, tool_p,
               body_M, K_e, z_e, axis, side, bilateral, contact_on, pulse, alive,
               q_out, qd_out, work, qdd0):
    B, n = q.shape
    k_q = np.empty((4, n))
    k_qd = np.empty((4, n))
    k_p = np.empty((4, 3))
    for b in range(B):
        if not alive[b]:
            q_out[b] = q[b]
            qd_out[b] = qd[b]
            work[b] = 0.0
            qdd0[b] = 0.0
            continue
        Ke = K_e[b] if contact_on else 0.0
        qs = q[b].copy()
        qds = qd[b].copy()
        for st in range(4):
            if st > 0:
                h = dt if st == 3 else 0.5 * dt
                for i in range(n):
                    qs[i] = q[b, i] + h * k_q[st - 1, i]
                    qds[i] = qd[b, i] + h * k_qd[st - 1, i]
            k_q[st] = qds
            _rates(qs, qds, tau[b], screws, axes, R0, p0, revolute, phi, friction, gravity, tool_R,
                   tool_p, body_M, Ke, z_e, axis, side, bilateral, pulse[b], k_qd[st], k_p[st])
        for i in range(n):
            q_out[b, i] = q[b, i] + dt / 6.0 * (k_q[0, i] + 2 * k_q[1, i] + 2 * k_q[2, i] + k_q[3, i])
            qd_out[b, i] = qd[b, i] + dt / 6.0 * (k_qd[0, i] + 2 * k_qd[1, i] + 2 * k_qd[2, i] + k_qd[3, i])
            qdd0[b, i] = k_qd[0, i]
        for c in range(3):
            work[b, c] = dt / 6.0 * (k_p[0, c] + 2 * k_p[1, c] + 2 * k_p[2, c] + k_p[3, c])


class FastChainPlant:
    """Batched RK4 plant step with an optional spring wall on one task channel."""

    def __init__(self, model: ChainModel):
        self.model = model
        m = model
        self._args = (m.screws, m.axes, m.R0, m.p0, m.revolute.astype(np.bool_), m.phi, m.friction,
                      m.gravity, m.tool_rotation, m.tool_offset, mass_matrix(m.phi))

    def step(self, q, qdot, tau, dt: float, wall=None, pulse=None, alive=None):
        B = q.shape[0]
        if wall is not None:
            K = np.broadcast_to(np.asarray(wall.K_e, dtype=float), (B,)).copy()
            wall_args = (K, float(wall.z_e), int(wall.axis), float(wall.side), bool(wall.bilateral), True)
        else:
            wall_args = (np.zeros(B), 0.0, 2, 1.0, False, False)
        pulse = np.zeros((B, 6)) if pulse is None else np.broadcast_to(pulse, (B, 6)).astype(float)
        alive = np.ones(B, np.bool_) if alive is None else np.asarray(alive, np.bool_)
        q_out = np.empty_like(q)
        qd_out = np.empty_like(qdot)
        work = np.empty((B, 3))
        qdd0 = np.empty_like(q)
        _rk4_batch(np.ascontiguousarray(q, dtype=float), np.ascontiguousarray(qdot, dtype=float),
                   np.ascontiguousarray(tau, dtype=float), float(dt), *self._args, *wall_args,
                   np.ascontiguousarray(pulse), alive, q_out, qd_out, work, qdd0)
        return q_out, qd_out, work, qdd0
