"""Compiled inner loops for long training runs.

``fp_*`` kernels exploit that while every neuron's sign pattern on the data is
fixed, a GD step only needs the per-side moment statistics of the data, so a
step costs O(m) instead of O(m n). They stop as soon as a kink reaches the
target or the pattern assumption would fail; ``full_*`` kernels are the plain
O(m n) fallback. All kernels update a, b, w and ``st = [c, kappa]`` in place.
"""
from __future__ import annotations

import numpy as np
from numba import njit

RUNNING, CROSSED, PATTERN_BROKEN, NONFINITE = 0, 1, 2, 3


@njit(cache=True, inline="always")
def _fp_apply(a, b, w, tau, st, M, u0, alpha, h, x_target, x_pattern):
    """One fixed-pattern step; M is (2, 2, 2) indexed [side, row, col], side 0 is x > 0.

    Returns (status, flips).
    """
    m = a.shape[0]
    swa_p = 0.0
    swa_n = 0.0
    swb_p = 0.0
    swb_n = 0.0
    for i in range(m):
        if tau[i] > 0:
            swa_p += w[i] * a[i]
            swb_p += w[i] * b[i]
        else:
            swa_n += w[i] * a[i]
            swb_n += w[i] * b[i]
    c = st[0]
    p1 = swa_p + alpha * swa_n
    pm1 = swa_n + alpha * swa_p
    q1 = c + swb_p + alpha * swb_n
    qm1 = c + swb_n + alpha * swb_p
    rh1 = u0[0, 0] - (M[0, 0, 0] * p1 + M[0, 0, 1] * q1)
    sh1 = u0[0, 1] - (M[0, 1, 0] * p1 + M[0, 1, 1] * q1)
    rhm = u0[1, 0] - (M[1, 0, 0] * pm1 + M[1, 0, 1] * qm1)
    shm = u0[1, 1] - (M[1, 1, 0] * pm1 + M[1, 1, 1] * qm1)
    r1 = rh1 + alpha * rhm
    s1 = sh1 + alpha * shm
    rm = rhm + alpha * rh1
    sm = shm + alpha * sh1
    st[1] += h * max(max(abs(r1), abs(rm)), max(abs(s1), abs(sm)))
    st[0] = c + h * (sh1 + shm)
    status = RUNNING
    flips = 0
    for i in range(m):
        if tau[i] > 0:
            r = r1
            s = s1
        else:
            r = rm
            s = sm
        ai = a[i]
        bi = b[i]
        wi = w[i]
        a[i] = ai + h * r * wi
        b[i] = bi + h * s * wi
        w[i] = wi + h * (r * ai + s * bi)
        na = abs(a[i])
        nb = abs(b[i])
        if not (na < np.inf and nb < np.inf and abs(w[i]) < np.inf):
            return NONFINITE, flips
        if na > 0.0 and nb >= na * x_target:
            status = CROSSED
        elif a[i] == 0.0 or nb >= na * x_pattern:
            if status == RUNNING:
                status = PATTERN_BROKEN
        elif tau[i] * a[i] < 0.0:
            # the kink is still inside the data gap, only the neuron's orientation flipped
            tau[i] = -tau[i]
            flips += 1
    if not (abs(st[0]) < np.inf):
        return NONFINITE, flips
    return status, flips


@njit(cache=True)
def fp_gd_run(a, b, w, tau, st, M, u0, alpha, h, x_target, x_pattern, n_steps):
    """Up to n_steps fixed-pattern GD steps. Returns (status, steps_done, flips)."""
    flips = 0
    for k in range(n_steps):
        status, f = _fp_apply(a, b, w, tau, st, M, u0, alpha, h, x_target, x_pattern)
        flips += f
        if status != RUNNING:
            return status, k + 1, flips
    return RUNNING, n_steps, flips


@njit(cache=True)
def batch_stats(x, y, idx, M, u0):
    nb = idx.shape[0]
    M[:] = 0.0
    u0[:] = 0.0
    for j in range(nb):
        xj = x[idx[j]]
        yj = y[idx[j]]
        side = 0 if xj > 0 else 1
        M[side, 0, 0] += xj * xj
        M[side, 0, 1] += xj
        M[side, 1, 1] += 1.0
        u0[side, 0] += xj * yj
        u0[side, 1] += yj
    for side in range(2):
        M[side, 1, 0] = M[side, 0, 1]
        for r in range(2):
            u0[side, r] /= nb
            for cc in range(2):
                M[side, r, cc] /= nb


@njit(cache=True)
def fp_sgd_run(a, b, w, tau, st, x, y, perm, starts, stops, alpha, h, x_target, x_pattern):
    """Fixed-pattern SGD over batches perm[starts[k]:stops[k]]. Returns (status, batches_done, flips)."""
    M = np.zeros((2, 2, 2))
    u0 = np.zeros((2, 2))
    flips = 0
    for k in range(starts.shape[0]):
        batch_stats(x, y, perm[starts[k]:stops[k]], M, u0)
        status, f = _fp_apply(a, b, w, tau, st, M, u0, alpha, h, x_target, x_pattern)
        flips += f
        if status != RUNNING:
            return status, k + 1, flips
    return RUNNING, starts.shape[0], flips


@njit(cache=True, inline="always")
def _full_apply(a, b, w, st, x, y, idx, alpha, h, x_target):
    m = a.shape[0]
    nb = idx.shape[0]
    ga = np.zeros(m)
    gb = np.zeros(m)
    gw = np.zeros(m)
    gc = 0.0
    c = st[0]
    for jj in range(nb):
        xj = x[idx[jj]]
        f = c
        for i in range(m):
            t = a[i] * xj + b[i]
            f += w[i] * (t if t >= 0.0 else alpha * t)
        res = f - y[idx[jj]]
        gc += res
        for i in range(m):
            t = a[i] * xj + b[i]
            if t >= 0.0:
                g = res * w[i]
                gw[i] += res * t
            else:
                g = res * w[i] * alpha
                gw[i] += res * alpha * t
            ga[i] += g * xj
            gb[i] += g
    hn = h / nb
    st[0] = c - hn * gc
    status = RUNNING
    for i in range(m):
        a[i] -= hn * ga[i]
        b[i] -= hn * gb[i]
        w[i] -= hn * gw[i]
        if not (abs(a[i]) < np.inf and abs(b[i]) < np.inf and abs(w[i]) < np.inf):
            return NONFINITE
        if a[i] != 0.0 and abs(b[i]) >= abs(a[i]) * x_target:
            status = CROSSED
    return status


@njit(cache=True)
def full_gd_run(a, b, w, st, x, y, alpha, h, x_target, n_steps):
    idx = np.arange(x.shape[0])
    for k in range(n_steps):
        status = _full_apply(a, b, w, st, x, y, idx, alpha, h, x_target)
        if status != RUNNING:
            return status, k + 1
    return RUNNING, n_steps


@njit(cache=True)
def full_sgd_run(a, b, w, st, x, y, perm, starts, stops, alpha, h, x_target):
    for k in range(starts.shape[0]):
        status = _full_apply(a, b, w, st, x, y, perm[starts[k]:stops[k]], alpha, h, x_target)
        if status != RUNNING:
            return status, k + 1
    return RUNNING, starts.shape[0]


def summary_arrays(summary):
    """Pack per-side moments into the (side, row, col) layout used by the kernels."""
    M = np.stack([summary.M[1], summary.M[-1]]).astype(float)
    u0 = np.stack([summary.u0[1], summary.u0[-1]]).astype(float)
    return np.ascontiguousarray(M), np.ascontiguousarray(u0)
