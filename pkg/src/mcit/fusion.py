"""Context fusion block: moves information between the context stream and
the backbone token stream.

Per backbone group i, with context F_c and backbone tokens F_vx:

    F_h, H_t   = mamba(F_c_prev, H_{t-1})           (pre)
    F_vx'      = F_vx + Att_in(Q=F_vx, K=F_h, V=F_h)    (fuse_in)
    F_c'       = Att_out(Q=F_h, K=F_vx_post, V=F_vx_post) + F_h
    F_c_next   = F_c' + FFN(F_c')                       (fuse_out)

Either attention can be swapped for plain addition (ablation); when token
counts differ the source stream's mean token is broadcast onto the target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import ssm
from .autograd import Tensor
from .errors import ConfigError, ContractError
from .mamba import MambaLayer
from .nn import Mlp, Module, MultiHeadAttention

FUSE_MODES = ("attention", "add")


@dataclass
class CifBlockState:
    """Recurrent state owned by one fusion block (single sequence)."""

    hidden: ssm.HiddenState

    @classmethod
    def zeros(cls, inner: int, state_size: int) -> "CifBlockState":
        return cls(ssm.HiddenState.zeros(inner, state_size))

    def copy(self) -> "CifBlockState":
        return CifBlockState(self.hidden.copy())


class ContextFusionBlock(Module):
    def __init__(self, rng, dim: int, state_size: int = 16, heads: int = 4,
                 in_mode: str = "attention", out_mode: str = "attention",
                 mlp_ratio: float = 4.0, **mamba_kw):
        if in_mode not in FUSE_MODES or out_mode not in FUSE_MODES:
            raise ConfigError(f"fuse modes must be in {FUSE_MODES}")
        self.in_mode = in_mode
        self.out_mode = out_mode
        self.mamba = MambaLayer(rng, dim, state_size=state_size, **mamba_kw)
        self.att_in = (MultiHeadAttention(rng, dim, heads)
                       if in_mode == "attention" else None)
        self.att_out = (MultiHeadAttention(rng, dim, heads)
                        if out_mode == "attention" else None)
        self.ffn = Mlp(rng, dim, int(dim * mlp_ratio))

    # batched Tensor paths -----------------------------------------------

    def pre(self, f_c_prev: Tensor, hidden):
        """(context, new hidden): run the storage layer over the context."""
        out, h_new, _ = self.mamba(f_c_prev, hidden)
        return out, h_new

    def fuse_in(self, f_vx: Tensor, f_h: Tensor) -> Tensor:
        if f_vx.shape[-1] != f_h.shape[-1]:
            raise ContractError("width mismatch between streams")
        if self.in_mode == "attention":
            return f_vx + self.att_in(f_vx, f_h)
        return f_vx + _match_tokens(f_h, f_vx.shape[1])

    def fuse_out(self, f_h: Tensor, f_vx_post: Tensor) -> Tensor:
        if f_h.shape[-1] != f_vx_post.shape[-1]:
            raise ContractError("width mismatch between streams")
        if self.out_mode == "attention":
            f_c = self.att_out(f_h, f_vx_post) + f_h
        else:
            f_c = f_h + _match_tokens(f_vx_post, f_h.shape[1])
        return f_c + self.ffn(f_c)


def _match_tokens(src: Tensor, n_target: int) -> Tensor:
    """Elementwise partner for addition: identity if lengths already match,
    otherwise the mean token broadcast to the target length."""
    if src.shape[1] == n_target:
        return src
    return src.mean(axis=1, keepdims=True)


# single-sequence surfaces ------------------------------------------------


def _check_state(block: ContextFusionBlock, state: CifBlockState):
    expect = (block.mamba.inner, block.mamba.state_size)
    if state.hidden.h.shape != expect:
        raise ContractError(
            f"state shape {state.hidden.h.shape} does not match block "
            f"{expect}")


def cif_pre(block: ContextFusionBlock, f_c_prev: np.ndarray,
            state: CifBlockState):
    _check_state(block, state)
    f_c_prev = np.asarray(f_c_prev, dtype=np.float64)
    with ag.no_grad():
        out, h_new = block.pre(Tensor(f_c_prev[None]),
                               Tensor(state.hidden.h[None]))
    return out.data[0], CifBlockState(
        ssm.HiddenState(h_new.data[0], state.hidden.frame_index))


def fuse_in(block: ContextFusionBlock, f_vx: np.ndarray,
            f_h: np.ndarray) -> np.ndarray:
    with ag.no_grad():
        return block.fuse_in(Tensor(np.asarray(f_vx, dtype=np.float64)[None]),
                             Tensor(np.asarray(f_h, dtype=np.float64)[None])
                             ).data[0]


def fuse_out(block: ContextFusionBlock, f_h: np.ndarray,
             f_vx_post: np.ndarray) -> np.ndarray:
    with ag.no_grad():
        return block.fuse_out(
            Tensor(np.asarray(f_h, dtype=np.float64)[None]),
            Tensor(np.asarray(f_vx_post, dtype=np.float64)[None])).data[0]
