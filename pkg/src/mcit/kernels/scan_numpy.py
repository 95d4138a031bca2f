"""Pure numpy selective-scan recurrence (reference / fallback backend).

Shapes:
    u, delta : (batch, tokens, channels)
    A        : (channels, state)
    B, C     : (batch, tokens, state)
    h        : (batch, channels, state)

The recurrence per token t:
    h_t = exp(delta_t * A) * h_{t-1} + delta_t * B_t * u_t
    y_t = sum_n h_t * C_t

The skip term (D * u) is applied by the caller, not here.
"""

from __future__ import annotations

import numpy as np


def scan_forward(u, delta, A, B, C, h0):
    """Run the recurrence; returns (y, h_hist) with h_hist[:, 0] == h0.

    h_hist has shape (batch, tokens + 1, channels, state); the final state
    is h_hist[:, -1]. Keeping the full history makes the backward pass a
    single reverse sweep with no recomputation.
    """
    bsz, T, ch = u.shape
    n = A.shape[1]
    h_hist = np.empty((bsz, T + 1, ch, n), dtype=np.float64)
    h_hist[:, 0] = h0
    y = np.empty((bsz, T, ch), dtype=np.float64)
    h = h0.astype(np.float64, copy=True)
    for t in range(T):
        dt = delta[:, t, :, None]                  # (bsz, ch, 1)
        abar = np.exp(dt * A[None])                # (bsz, ch, n)
        h = abar * h + (dt * u[:, t, :, None]) * B[:, t, None, :]
        h_hist[:, t + 1] = h
        y[:, t] = (h * C[:, t, None, :]).sum(-1)
    return y, h_hist


def scan_backward(gy, gh_final, u, delta, A, B, C, h_hist):
    """Reverse sweep. Returns (gu, gdelta, gA, gB, gC, gh0)."""
    bsz, T, ch = u.shape
    n = A.shape[1]
    gu = np.zeros_like(u)
    gdelta = np.zeros_like(delta)
    gA = np.zeros_like(A)
    gB = np.zeros_like(B)
    gC = np.zeros_like(C)
    gh = gh_final.astype(np.float64, copy=True)    # (bsz, ch, n)
    for t in range(T - 1, -1, -1):
        h_t = h_hist[:, t + 1]
        h_prev = h_hist[:, t]
        gh = gh + gy[:, t, :, None] * C[:, t, None, :]
        gC[:, t] = (gy[:, t, :, None] * h_t).sum(axis=1)
        dt = delta[:, t, :, None]
        abar = np.exp(dt * A[None])
        gabar = gh * h_prev
        s = (gh * B[:, t, None, :]).sum(-1)        # (bsz, ch)
        gdelta[:, t] = (gabar * A[None] * abar).sum(-1) + u[:, t] * s
        gu[:, t] = delta[:, t] * s
        gA += (gabar * dt * abar).sum(axis=0)
        gB[:, t] = (gh * dt * u[:, t, :, None]).sum(axis=1)
        gh = gh * abar
    return gu, gdelta, gA, gB, gC, gh
