"""Numba-compiled selective-scan recurrence (default backend).

Same contract as :mod:`mcit.kernels.scan_numpy`; explicit loops so numba
emits tight machine code. No fastmath: summation order must stay fixed so
results are reproducible run to run.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def scan_forward(u, delta, A, B, C, h0):
    bsz, T, ch = u.shape
    n = A.shape[1]
    h_hist = np.empty((bsz, T + 1, ch, n), dtype=np.float64)
    y = np.empty((bsz, T, ch), dtype=np.float64)
    for b in range(bsz):
        for c in range(ch):
            for k in range(n):
                h_hist[b, 0, c, k] = h0[b, c, k]
    for b in range(bsz):
        for t in range(T):
            for c in range(ch):
                dt = delta[b, t, c]
                uc = u[b, t, c]
                acc = 0.0
                for k in range(n):
                    abar = np.exp(dt * A[c, k])
                    h = abar * h_hist[b, t, c, k] + (dt * uc) * B[b, t, k]
                    h_hist[b, t + 1, c, k] = h
                    acc += h * C[b, t, k]
                y[b, t, c] = acc
    return y, h_hist


@njit(cache=True)
def scan_backward(gy, gh_final, u, delta, A, B, C, h_hist):
    bsz, T, ch = u.shape
    n = A.shape[1]
    gu = np.zeros((bsz, T, ch), dtype=np.float64)
    gdelta = np.zeros((bsz, T, ch), dtype=np.float64)
    gA = np.zeros((ch, n), dtype=np.float64)
    gB = np.zeros((bsz, T, n), dtype=np.float64)
    gC = np.zeros((bsz, T, n), dtype=np.float64)
    gh0 = np.empty((bsz, ch, n), dtype=np.float64)
    gh = np.empty((ch, n), dtype=np.float64)
    for b in range(bsz):
        for c in range(ch):
            for k in range(n):
                gh[c, k] = gh_final[b, c, k]
        for t in range(T - 1, -1, -1):
            for c in range(ch):
                gyv = gy[b, t, c]
                dt = delta[b, t, c]
                uc = u[b, t, c]
                gd = 0.0
                s = 0.0
                for k in range(n):
                    ghn = gh[c, k] + gyv * C[b, t, k]
                    gC[b, t, k] += gyv * h_hist[b, t + 1, c, k]
                    abar = np.exp(dt * A[c, k])
                    gabar = ghn * h_hist[b, t, c, k]
                    gd += gabar * A[c, k] * abar
                    s += ghn * B[b, t, k]
                    gA[c, k] += gabar * dt * abar
                    gB[b, t, k] += ghn * dt * uc
                    gh[c, k] = ghn * abar
                gdelta[b, t, c] = gd + uc * s
                gu[b, t, c] = dt * s
        for c in range(ch):
            for k in range(n):
                gh0[b, c, k] = gh[c, k]
    return gu, gdelta, gA, gB, gC, gh0
