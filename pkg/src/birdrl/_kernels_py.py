"""Pure numpy versions of the fused kernels.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
Inputs are C-contiguous float64 arrays; outputs are freshly allocated.
"""

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def gru_forward(px, ph, h):
    """Gate nonlinearities of a GRU cell with gate order [reset, update, candidate].

    ``px`` and ``ph`` are the input and hidden pre-activations, shape (N, 3H).
    Returns (h_new, r, z, n).
    """
    d = h.shape[1]
    r = _sigmoid(px[:, :d] + ph[:, :d])
    z = _sigmoid(px[:, d:2 * d] + ph[:, d:2 * d])
    n = np.tanh(px[:, 2 * d:] + r * ph[:, 2 * d:])
    h_new = (1.0 - z) * n + z * h
    return h_new, r, z, n


def gru_backward(g, h, r, z, n, ph):
    d = h.shape[1]
    dn = g * (1.0 - z) * (1.0 - n * n)
    dz = g * (h - n) * z * (1.0 - z)
    dr = dn * ph[:, 2 * d:] * r * (1.0 - r)
    dpx = np.concatenate([dr, dz, dn], axis=1)
    dph = np.concatenate([dr, dz, dn * r], axis=1)
    dh = g * z
    return dpx, dph, dh


def gauss_logpdf(x, m, s):
    """Row-summed log-density of a diagonal Gaussian, shape (N,)."""
    u = (x - m) / s
    return -0.5 * np.sum(u * u + 2.0 * np.log(s) + LOG_2PI, axis=1)


def gauss_logpdf_backward(g, x, m, s):
    inv = 1.0 / s
    u = (x - m) * inv
    gc = g[:, None]
    dx = -gc * u * inv
    ds = gc * (u * u - 1.0) * inv
    return dx, -dx, ds


def gauss_kl(mq, sq, mp, sp):
    """Row-summed KL(N(mq, sq) || N(mp, sp)), shape (N,)."""
    diff = mq - mp
    ratio = (sq * sq + diff * diff) / (2.0 * sp * sp)
    return np.sum(np.log(sp) - np.log(sq) + ratio - 0.5, axis=1)


def gauss_kl_backward(g, mq, sq, mp, sp):
    gc = g[:, None]
    inv2 = 1.0 / (sp * sp)
    diff = mq - mp
    dmq = gc * diff * inv2
    dsq = gc * (sq * inv2 - 1.0 / sq)
    dsp = gc * (1.0 / sp - (sq * sq + diff * diff) * inv2 / sp)
    return dmq, dsq, -dmq, dsp


def lambda_return(rewards, values, gamma, lam):
    """Backward TD(lambda) recursion over the last axis.

    rewards (N, H), values (N, H+1) -> targets (N, H).
    """
    n, horizon = rewards.shape
    out = np.empty((n, horizon))
    nxt = values[:, horizon]
    for x in range(horizon - 1, -1, -1):
        if x == horizon - 1:
            nxt = rewards[:, x] + gamma * values[:, horizon]
        else:
            nxt = rewards[:, x] + gamma * ((1.0 - lam) * values[:, x + 1] + lam * nxt)
        out[:, x] = nxt
    return out


def lambda_return_backward(g, gamma, lam):
    n, horizon = g.shape
    dr = np.empty((n, horizon))
    dv = np.zeros((n, horizon + 1))
    acc = np.zeros(n)
    for x in range(horizon):
        acc = g[:, x] + gamma * lam * acc
        dr[:, x] = acc
        if x < horizon - 1:
            dv[:, x + 1] = gamma * (1.0 - lam) * acc
        else:
            dv[:, horizon] = gamma * acc
    return dr, dv


def pendulum_integrate(theta, omega, torque, steps, dt, gravity, damping):
    """RK4 for theta'' = gravity*sin(theta) + torque - damping*theta'.

    Returns (theta, omega, summed per-substep reward (1 + cos theta)/2).
    """
    reward = 0.0
    for _ in range(steps):
        k1t = omega
        k1w = gravity * math.sin(theta) + torque - damping * omega
        t2 = theta + 0.5 * dt * k1t
        w2 = omega + 0.5 * dt * k1w
        k2t = w2
        k2w = gravity * math.sin(t2) + torque - damping * w2
        t3 = theta + 0.5 * dt * k2t
        w3 = omega + 0.5 * dt * k2w
        k3t = w3
        k3w = gravity * math.sin(t3) + torque - damping * w3
        t4 = theta + dt * k3t
        w4 = omega + dt * k3w
        k4t = w4
        k4w = gravity * math.sin(t4) + torque - damping * w4
        theta = theta + dt / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t)
        omega = omega + dt / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
        reward += 0.5 * (1.0 + math.cos(theta))
    return theta, omega, reward


def elu(x):
    """ELU and its slope: (out, d out / d x)."""
    e = np.exp(np.minimum(x, 0.0))  # exactly 1 where x >= 0
    return np.maximum(x, 0.0) + (e - 1.0), e


def softplus(x):
    """Softplus and its slope (the logistic sigmoid)."""
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x))), _sigmoid(x)
