"""Discretized selective state-space recurrence.

The storage-and-update machinery for contextual information: a diagonal
per-channel state matrix is discretized per token with a zero-order hold,
then scanned left-to-right. Two call surfaces:

* single-sequence numpy functions (:func:`discretize`, :func:`ssm_step`,
  :func:`selective_scan`) — the reference semantics, used directly as the
  oracle in tests;
* :func:`scan` — batched, autograd-aware, dispatching to the compiled
  kernel backend. This is what the model's layers call.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from . import kernels
from .errors import ContractError, NumericError


def _require_finite(name: str, *arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError(f"{name}: non-finite values in input")


@dataclass
class SsmParams:
    """Input-dependent recurrence parameters for one token sequence.

    A: (channels, state_size), interpreted diagonally per channel.
    D: (channels,) skip coefficient.
    delta: (tokens, channels), strictly positive time-scales.
    B_in, C_out: (tokens, state_size) input/output projections.
    """

    A: np.ndarray
    D: np.ndarray
    delta: np.ndarray
    B_in: np.ndarray
    C_out: np.ndarray
    state_size: int = 0

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        self.D = np.asarray(self.D, dtype=np.float64)
        self.delta = np.asarray(self.delta, dtype=np.float64)
        self.B_in = np.asarray(self.B_in, dtype=np.float64)
        self.C_out = np.asarray(self.C_out, dtype=np.float64)
        if self.state_size == 0:
            self.state_size = self.A.shape[1]
        _require_finite("SsmParams",
                        self.A, self.D, self.delta, self.B_in, self.C_out)
        if self.state_size < 1:
            raise ContractError("state_size must be >= 1")
        channels, state = self.A.shape
        tokens = self.delta.shape[0]
        if state != self.state_size:
            raise ContractError("A second dim must equal state_size")
        if self.D.shape != (channels,):
            raise ContractError("D must have one entry per channel")
        if self.delta.shape != (tokens, channels):
            raise ContractError("delta must be (tokens, channels)")
        if self.B_in.shape != (tokens, state):
            raise ContractError("B_in must be (tokens, state_size)")
        if self.C_out.shape != (tokens, state):
            raise ContractError("C_out must be (tokens, state_size)")
        if self.delta.size and not np.all(self.delta > 0):
            raise ContractError("delta must be strictly positive")

    @property
    def tokens(self) -> int:
        return self.delta.shape[0]

    @property
    def channels(self) -> int:
        return self.A.shape[0]


@dataclass
class DiscreteParams:
    """Zero-order-hold discretization of the recurrence for each token.

    a_bar, b_bar: (tokens, channels, state_size). For all-negative A and
    positive delta every a_bar entry lies in (0, 1).
    """

    a_bar: np.ndarray
    b_bar: np.ndarray

    def token(self, t: int) -> "DiscreteParams":
        """Single-token view, shapes (1, channels, state_size)."""
        return DiscreteParams(self.a_bar[t:t + 1], self.b_bar[t:t + 1])


@dataclass
class HiddenState:
    """Per-layer recurrent state carried across frames.

    h: (channels, state_size). frame_index records the frame of the last
    commit; scans themselves leave it untouched (the tracker bumps it).
    """

    h: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=np.float64)
        if not np.all(np.isfinite(self.h)):
            raise NumericError("HiddenState: non-finite entries")
        if self.frame_index < 0:
            raise ContractError("frame_index must be nonnegative")

    @classmethod
    def zeros(cls, channels: int, state_size: int) -> "HiddenState":
        return cls(np.zeros((channels, state_size)))

    def copy(self) -> "HiddenState":
        return HiddenState(self.h.copy(), self.frame_index)


def discretize(delta: np.ndarray, A: np.ndarray,
               B_in: np.ndarray) -> DiscreteParams:
    """a_bar = exp(delta * A) elementwise; b_bar = delta * B_in."""
    delta = np.asarray(delta, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    B_in = np.asarray(B_in, dtype=np.float64)
    _require_finite("discretize", delta, A, B_in)
    if delta.size and not np.all(delta > 0):
        raise ContractError("delta must be strictly positive")
    if delta.ndim != 2 or A.ndim != 2 or B_in.ndim != 2:
        raise ContractError("delta/A/B_in must be 2-D")
    if B_in.shape[0] != delta.shape[0] or B_in.shape[1] != A.shape[1]:
        raise ContractError("inconsistent shapes for discretize")
    # (tokens, channels, state)
    a_bar = np.exp(delta[:, :, None] * A[None, :, :])
    b_bar = delta[:, :, None] * B_in[:, None, :]
    return DiscreteParams(a_bar, b_bar)


def ssm_step(h_prev: HiddenState, x_t: np.ndarray, dp: DiscreteParams,
             c_out_t: np.ndarray, D: np.ndarray) -> tuple[HiddenState, np.ndarray]:
    """One token update: h_t = a_bar*h_prev + b_bar*x_t; y = C.h_t + D*x_t.

    dp must be a single-token view (leading dim 1).
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    c_out_t = np.asarray(c_out_t, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    if dp.a_bar.shape[0] != 1:
        raise ContractError("ssm_step needs a single-token DiscreteParams")
    a_bar = dp.a_bar[0]
    b_bar = dp.b_bar[0]
    if h_prev.h.shape != a_bar.shape:
        raise ContractError("hidden state shape mismatch")
    if x_t.shape != (a_bar.shape[0],):
        raise ContractError("x_t must be a channel vector")
    if c_out_t.shape != (a_bar.shape[1],):
        raise ContractError("c_out_t must be a state vector")
    h_t = a_bar * h_prev.h + b_bar * x_t[:, None]
    y_t = h_t @ c_out_t + D * x_t
    return HiddenState(h_t, h_prev.frame_index), y_t


def selective_scan(x_seq: np.ndarray, params: SsmParams,
                   h_init: HiddenState) -> tuple[np.ndarray, HiddenState]:
    """Causal left-to-right scan of x_seq (tokens, channels).

    Returns (y_seq, h_final). Empty input returns (empty, h_init).
    """
    x_seq = np.asarray(x_seq, dtype=np.float64)
    _require_finite("selective_scan", x_seq)
    if x_seq.ndim != 2:
        raise ContractError("x_seq must be (tokens, channels)")
    tokens, channels = x_seq.shape
    if tokens != params.tokens or channels != params.channels:
        raise ContractError("x_seq shape inconsistent with params")
    if h_init.h.shape != (channels, params.state_size):
        raise ContractError("h_init shape mismatch")
    if tokens == 0:
        return np.empty((0, channels)), h_init
    y, h_hist = kernels.scan_forward(
        x_seq[None], params.delta[None], params.A,
        params.B_in[None], params.C_out[None], h_init.h[None])
    y = y[0] + params.D[None, :] * x_seq
    return y, HiddenState(h_hist[0, -1], h_init.frame_index)


def scan(u: ag.Tensor, delta: ag.Tensor, A: ag.Tensor, B: ag.Tensor,
         C: ag.Tensor, h0: ag.Tensor) -> tuple[ag.Tensor, ag.Tensor]:
    """Batched autograd scan. Shapes: u/delta (b, t, c); A (c, n);
    B/C (b, t, n); h0 (b, c, n). Returns (y (b, t, c), h_final (b, c, n)).

    The skip path (D * u) is the caller's responsibility. Both outputs
    come from one packed node so the backward runs the kernel once.
    """
    bsz, T, ch = u.data.shape
    n = A.data.shape[1]
    y, h_hist = kernels.scan_forward(u.data, delta.data, A.data, B.data,
                                     C.data, h0.data)
    packed = np.concatenate(
        [y.reshape(bsz, T * ch), h_hist[:, -1].reshape(bsz, ch * n)], axis=1)

    def vjp(g):
        gy = g[:, :T * ch].reshape(bsz, T, ch)
        gh_final = g[:, T * ch:].reshape(bsz, ch, n)
        gy = np.ascontiguousarray(gy)
        gh_final = np.ascontiguousarray(gh_final)
        return kernels.scan_backward(gy, gh_final, u.data, delta.data,
                                     A.data, B.data, C.data, h_hist)

    out = ag.custom_op(packed, [u, delta, A, B, C, h0], vjp)
    y_t = out[:, :T * ch].reshape(bsz, T, ch)
    h_t = out[:, T * ch:].reshape(bsz, ch, n)
    return y_t, h_t
