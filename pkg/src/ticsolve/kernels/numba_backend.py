"""numba-compiled twins of the numpy kernels.

Compiled single-threaded with cache=True and without fastmath so that both
backends produce bit-identical results (same expression association, no FMA
contraction, first-occurrence argmin).
"""
from __future__ import annotations

import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True)
def hjb_step(theta, d2, a2d, b2d, g2d, psel, dt):
    nx, nu = a2d.shape
    new_theta = np.empty(nx)
    jmin = np.empty(nx, dtype=np.int64)
    for i in range(nx):
        best = a2d[i, 0] * d2[i] + b2d[i, 0] * psel[i, 0] + g2d[i, 0]
        jb = 0
        for j in range(1, nu):
            val = a2d[i, j] * d2[i] + b2d[i, j] * psel[i, j] + g2d[i, j]
            if val < best:
                best = val
                jb = j
        new_theta[i] = theta[i] + dt * best
        jmin[i] = jb
    return new_theta, jmin


@njit(cache=True)
def frozen_step(theta, d2, a, b, g, psel, dt):
    m, nx = theta.shape
    out = np.empty((m, nx))
    for k in range(m):
        for i in range(nx):
            out[k, i] = theta[k, i] + dt * (
                a[k, i] * d2[k, i] + b[k, i] * psel[k, i] + g[k, i]
            )
    return out


@njit(cache=True)
def _thomas_single(lower, diag, upper, rhs):
    n = diag.shape[0]
    cp = np.empty(n)
    dp = np.empty(n)
    cp[0] = upper[0] / diag[0]
    dp[0] = rhs[0] / diag[0]
    for i in range(1, n):
        denom = diag[i] - lower[i] * cp[i - 1]
        cp[i] = upper[i] / denom
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / denom
    x = np.empty(n)
    x[n - 1] = dp[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x


@njit(cache=True)
def _thomas_batch(lower, diag, upper, rhs):
    m, n = rhs.shape
    out = np.empty((m, n))
    for k in range(m):
        out[k] = _thomas_single(lower, diag, upper, rhs[k])
    return out


def thomas(lower, diag, upper, rhs):
    rhs = np.asarray(rhs)
    if rhs.ndim == 1:
        return _thomas_single(lower, diag, upper, rhs)
    return _thomas_batch(lower, diag, upper, rhs)
