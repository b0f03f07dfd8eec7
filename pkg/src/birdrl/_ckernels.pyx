# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the loop-bound operations.

Each function has the same contract as its twin in ``_kernels_py``. Kernels
dominated by tanh/exp/log are not compiled: numpy evaluates those with
vectorized routines that beat scalar libm calls in a C loop.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos

cnp.import_array()

def gru_backward(const double[:, ::1] g, const double[:, ::1] h, const double[:, ::1] r,
                 const double[:, ::1] z, const double[:, ::1] c, const double[:, ::1] ph):
    cdef Py_ssize_t n = h.shape[0], d = h.shape[1], i, j
    dpx_a = np.empty((n, 3 * d))
    dph_a = np.empty((n, 3 * d))
    dh_a = np.empty((n, d))
    cdef double[:, ::1] dpx = dpx_a, dph = dph_a, dh = dh_a
    cdef double gg, zz, cc, rr, dn, dz, dr
    with nogil:
        for i in range(n):
            for j in range(d):
                gg = g[i, j]
                zz = z[i, j]
                cc = c[i, j]
                rr = r[i, j]
                dn = gg * (1.0 - zz) * (1.0 - cc * cc)
                dz = gg * (h[i, j] - cc) * zz * (1.0 - zz)
                dr = dn * ph[i, 2 * d + j] * rr * (1.0 - rr)
                dpx[i, j] = dr
                dpx[i, d + j] = dz
                dpx[i, 2 * d + j] = dn
                dph[i, j] = dr
                dph[i, d + j] = dz
                dph[i, 2 * d + j] = dn * rr
                dh[i, j] = gg * zz
    return dpx_a, dph_a, dh_a


def gauss_logpdf_backward(const double[::1] g, const double[:, ::1] x,
                          const double[:, ::1] m, const double[:, ::1] s):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    dx_a = np.empty((n, d))
    dm_a = np.empty((n, d))
    ds_a = np.empty((n, d))
    cdef double[:, ::1] dx = dx_a, dm = dm_a, ds = ds_a
    cdef double inv, u, gi
    with nogil:
        for i in range(n):
            gi = g[i]
            for j in range(d):
                inv = 1.0 / s[i, j]
                u = (x[i, j] - m[i, j]) * inv
                dx[i, j] = -gi * u * inv
                dm[i, j] = gi * u * inv
                ds[i, j] = gi * (u * u - 1.0) * inv
    return dx_a, dm_a, ds_a


def gauss_kl_backward(const double[::1] g, const double[:, ::1] mq, const double[:, ::1] sq,
                      const double[:, ::1] mp, const double[:, ::1] sp):
    cdef Py_ssize_t n = mq.shape[0], d = mq.shape[1], i, j
    dmq_a = np.empty((n, d))
    dsq_a = np.empty((n, d))
    dmp_a = np.empty((n, d))
    dsp_a = np.empty((n, d))
    cdef double[:, ::1] dmq = dmq_a, dsq = dsq_a, dmp = dmp_a, dsp = dsp_a
    cdef double gi, inv2, diff, a
    with nogil:
        for i in range(n):
            gi = g[i]
            for j in range(d):
                inv2 = 1.0 / (sp[i, j] * sp[i, j])
                diff = mq[i, j] - mp[i, j]
                a = gi * diff * inv2
                dmq[i, j] = a
                dmp[i, j] = -a
                dsq[i, j] = gi * (sq[i, j] * inv2 - 1.0 / sq[i, j])
                dsp[i, j] = gi * (1.0 / sp[i, j] - (sq[i, j] * sq[i, j] + diff * diff) * inv2 / sp[i, j])
    return dmq_a, dsq_a, dmp_a, dsp_a


def lambda_return(const double[:, ::1] rewards, const double[:, ::1] values, double gamma, double lam):
    cdef Py_ssize_t n = rewards.shape[0], horizon = rewards.shape[1], i, x
    out_a = np.empty((n, horizon))
    cdef double[:, ::1] out = out_a
    cdef double nxt
    with nogil:
        for i in range(n):
            nxt = rewards[i, horizon - 1] + gamma * values[i, horizon]
            out[i, horizon - 1] = nxt
            for x in range(horizon - 2, -1, -1):
                nxt = rewards[i, x] + gamma * ((1.0 - lam) * values[i, x + 1] + lam * nxt)
                out[i, x] = nxt
    return out_a


def lambda_return_backward(const double[:, ::1] g, double gamma, double lam):
    cdef Py_ssize_t n = g.shape[0], horizon = g.shape[1], i, x
    dr_a = np.empty((n, horizon))
    dv_a = np.zeros((n, horizon + 1))
    cdef double[:, ::1] dr = dr_a, dv = dv_a
    cdef double acc
    with nogil:
        for i in range(n):
            acc = 0.0
            for x in range(horizon):
                acc = g[i, x] + gamma * lam * acc
                dr[i, x] = acc
                if x < horizon - 1:
                    dv[i, x + 1] = gamma * (1.0 - lam) * acc
                else:
                    dv[i, horizon] = gamma * acc
    return dr_a, dv_a


def pendulum_integrate(double theta, double omega, double torque, int steps,
                       double dt, double gravity, double damping):
    cdef int k
    cdef double reward = 0.0
    cdef double k1t, k1w, k2t, k2w, k3t, k3w, k4t, k4w, t2, w2, t3, w3, t4, w4
    for k in range(steps):
        k1t = omega
        k1w = gravity * sin(theta) + torque - damping * omega
        t2 = theta + 0.5 * dt * k1t
        w2 = omega + 0.5 * dt * k1w
        k2t = w2
        k2w = gravity * sin(t2) + torque - damping * w2
        t3 = theta + 0.5 * dt * k2t
        w3 = omega + 0.5 * dt * k2w
        k3t = w3
        k3w = gravity * sin(t3) + torque - damping * w3
        t4 = theta + dt * k3t
        w4 = omega + dt * k3w
        k4t = w4
        k4w = gravity * sin(t4) + torque - damping * w4
        theta = theta + dt / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t)
        omega = omega + dt / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
        reward += 0.5 * (1.0 + cos(theta))
    return theta, omega, reward
