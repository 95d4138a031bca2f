"""Gated two-branch state-space layer: the context-storage unit.

RMS-normalized input feeds two projections. The x branch goes through a
causal depthwise conv, SiLU, and the selective scan (which carries the
recurrent state across calls); the z branch gates the scan output. A
down-projection plus residual closes the block.

Input-dependent recurrence parameters (delta, B, C) are read off the
post-conv activation by a low-rank projection; delta passes through
softplus so it stays positive.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from . import ssm
from .autograd import Parameter, Tensor
from .errors import ContractError
from .nn import CausalDepthwiseConv1d, Linear, Module, RMSNorm


def rms_norm(x: np.ndarray, scale: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """out[t] = x[t] / sqrt(mean(x[t]^2) + eps) * scale."""
    x = np.asarray(x, dtype=np.float64)
    return x / np.sqrt((x ** 2).mean(axis=-1, keepdims=True) + eps) * scale


def inverse_softplus(y: np.ndarray) -> np.ndarray:
    """x such that softplus(x) = y, for y > 0."""
    return y + np.log(-np.expm1(-y))


class MambaLayer(Module):
    """See module docstring. Hidden state shape: (batch, inner, state_size)
    where inner = expand * dim.

    residual_from_norm switches the skip source from the raw input to the
    normalized input. use_skip toggles the per-channel D term.
    """

    def __init__(self, rng, dim: int, state_size: int = 16, expand: int = 2,
                 conv_kernel: int = 4, residual_from_norm: bool = False,
                 use_skip: bool = True, dt_min: float = 1e-3,
                 dt_max: float = 0.1):
        self.dim = dim
        self.inner = expand * dim
        self.state_size = state_size
        self.dt_rank = max(1, dim // 16)
        self.residual_from_norm = residual_from_norm
        self.use_skip = use_skip

        self.norm = RMSNorm(dim)
        self.in_proj = Linear(rng, dim, 2 * self.inner, bias=False)
        self.conv = CausalDepthwiseConv1d(rng, self.inner, conv_kernel)
        self.x_proj = Linear(rng, self.inner,
                             self.dt_rank + 2 * state_size, bias=False)
        self.dt_proj = Linear(rng, self.dt_rank, self.inner, bias=True)
        dt_std = self.dt_rank ** -0.5
        self.dt_proj.weight.data = rng.uniform(
            -dt_std, dt_std, size=(self.dt_rank, self.inner))
        # bias chosen so initial delta = softplus(bias) is log-uniform
        # in [dt_min, dt_max]
        dt = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max),
                                size=self.inner))
        self.dt_proj.bias.data = inverse_softplus(np.maximum(dt, 1e-4))
        # state matrix A[c, j] = -(j + 1), stored as log magnitude
        self.A_log = Parameter(np.tile(
            np.log(np.arange(1, state_size + 1, dtype=np.float64)),
            (self.inner, 1)))
        self.D = Parameter(np.ones(self.inner))
        self.out_proj = Linear(rng, self.inner, dim, bias=False)

    def zero_state(self, batch: int) -> np.ndarray:
        return np.zeros((batch, self.inner, self.state_size))

    def forward(self, x: Tensor, h_prev, conv_tail: Tensor | None = None):
        """x: (batch, tokens, dim). Returns (out, h_new, conv_tail_new).

        conv_tail streams the causal conv across calls; by default each
        call starts the conv window from zeros (only the scan state h is
        carried between frames).
        """
        if not isinstance(h_prev, Tensor):
            h_prev = Tensor(h_prev)
        b, t, d = x.shape
        if d != self.dim:
            raise ContractError(f"expected width {self.dim}, got {d}")
        if h_prev.shape != (b, self.inner, self.state_size):
            raise ContractError(
                f"hidden state must be {(b, self.inner, self.state_size)}, "
                f"got {h_prev.shape}")
        xn = self.norm(x)
        resid = xn if self.residual_from_norm else x
        xz = self.in_proj(xn)
        xc, tail = self.conv(xz[:, :, :self.inner], tail=conv_tail)
        xa = ag.silu(xc)
        dbc = self.x_proj(xa)
        delta = ag.softplus(self.dt_proj(dbc[:, :, :self.dt_rank]))
        b_in = dbc[:, :, self.dt_rank:self.dt_rank + self.state_size]
        c_out = dbc[:, :, self.dt_rank + self.state_size:]
        A = -ag.exp(self.A_log)
        y, h_new = ssm.scan(xa, delta, A, b_in, c_out, h_prev)
        if self.use_skip:
            y = y + xa * self.D
        gated = y * ag.silu(xz[:, :, self.inner:])
        return self.out_proj(gated) + resid, h_new, tail


def mamba_forward(layer: MambaLayer, F_i: np.ndarray,
                  h_prev: ssm.HiddenState):
    """Single-sequence surface: (tokens, dim) in, (tokens, dim) out."""
    F_i = np.asarray(F_i, dtype=np.float64)
    if F_i.ndim != 2:
        raise ContractError("F_i must be (tokens, dim)")
    if h_prev.h.shape != (layer.inner, layer.state_size):
        raise ContractError(
            f"hidden state must be {(layer.inner, layer.state_size)}, "
            f"got {h_prev.h.shape}")
    with ag.no_grad():
        out, h_new, _ = layer(Tensor(F_i[None]), Tensor(h_prev.h[None]))
    return out.data[0], ssm.HiddenState(h_new.data[0], h_prev.frame_index)
