"""Layer library: parameter containers and the building blocks the model
composes (linear, norms, attention, MLP, patchify/3x3/causal convs).

Every layer takes an explicit ``numpy.random.Generator`` for weight init so
a model build is a pure function of one seed. Convolutions are expressed as
shifted slices + matmul, which keeps the whole network inside the autograd
engine's small op set.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .errors import ContractError


class Module:
    """Base class; discovers parameters/submodules through instance attrs."""

    def named_parameters(self, prefix: str = ""):
        for name, val in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(val, Parameter):
                yield full, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{full}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{full}.{i}", item

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ContractError(
                f"state dict mismatch; missing={missing[:4]} extra={extra[:4]}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ContractError(
                    f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
            p.data = arr.copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int,
           shape=None) -> np.ndarray:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=shape or (fan_in, fan_out))


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True):
        self.weight = Parameter(glorot(rng, d_in, d_out))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.weight = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        return xc / ag.sqrt(var + self.eps) * self.weight + self.bias


class RMSNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        self.weight = Parameter(np.ones(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        ms = (x * x).mean(axis=-1, keepdims=True)
        return x / ag.sqrt(ms + self.eps) * self.weight


class Mlp(Module):
    def __init__(self, rng, dim: int, hidden: int):
        self.fc1 = Linear(rng, dim, hidden)
        self.fc2 = Linear(rng, hidden, dim)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(ag.gelu(self.fc1(x)))


class MultiHeadAttention(Module):
    """Scaled dot-product attention; query and key/value sources may differ."""

    def __init__(self, rng, dim: int, heads: int):
        if dim % heads != 0:
            raise ContractError("dim must be divisible by heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.q = Linear(rng, dim, dim)
        self.k = Linear(rng, dim, dim)
        self.v = Linear(rng, dim, dim)
        self.proj = Linear(rng, dim, dim)

    def _split(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return x.reshape(b, t, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def forward(self, x_q: Tensor, x_kv: Tensor | None = None) -> Tensor:
        if x_kv is None:
            x_kv = x_q
        b, tq, d = x_q.shape
        q = self._split(self.q(x_q))
        k = self._split(self.k(x_kv))
        v = self._split(self.v(x_kv))
        att = ag.softmax((q @ k.transpose(0, 1, 3, 2))
                         * (1.0 / np.sqrt(self.head_dim)), axis=-1)
        out = (att @ v).transpose(0, 2, 1, 3).reshape(b, tq, d)
        return self.proj(out)


class TransformerBlock(Module):
    """Pre-norm residual block: attention then MLP."""

    def __init__(self, rng, dim: int, heads: int, mlp_ratio: float = 4.0):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(rng, dim, heads)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(rng, dim, int(dim * mlp_ratio))

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class PatchifyConv(Module):
    """Conv with stride == kernel: space-to-depth then a linear map.

    Input (b, h, w, c); output (b, h/k, w/k, d_out).
    """

    def __init__(self, rng, c_in: int, c_out: int, kernel: int):
        self.kernel = kernel
        fan = c_in * kernel * kernel
        self.weight = Parameter(glorot(rng, fan, c_out))
        self.bias = Parameter(np.zeros(c_out))

    def forward(self, x: Tensor) -> Tensor:
        b, h, w, c = x.shape
        k = self.kernel
        if h % k or w % k:
            raise ContractError(f"spatial size {h}x{w} not divisible by {k}")
        x = x.reshape(b, h // k, k, w // k, k, c)
        x = x.transpose(0, 1, 3, 2, 4, 5).reshape(b, h // k, w // k, k * k * c)
        return x @ self.weight + self.bias


class Conv2d3x3(Module):
    """3x3 same-padding conv over (b, h, w, c) via nine shifted slices."""

    def __init__(self, rng, c_in: int, c_out: int):
        self.weight = Parameter(
            glorot(rng, 9 * c_in, c_out, shape=(3, 3, c_in, c_out)))
        self.bias = Parameter(np.zeros(c_out))

    def forward(self, x: Tensor) -> Tensor:
        b, h, w, c = x.shape
        padded = _pad_hw(x, 1)
        out = None
        for di in range(3):
            for dj in range(3):
                patch = padded[:, di:di + h, dj:dj + w, :]
                term = patch @ self.weight[di, dj]
                out = term if out is None else out + term
        return out + self.bias


def _pad_hw(x: Tensor, p: int) -> Tensor:
    """Zero-pad the two spatial dims of (b, h, w, c) by p on each side."""
    b, h, w, c = x.shape
    zrow = Tensor(np.zeros((b, p, w, c)))
    x = ag.concat([zrow, x, zrow], axis=1)
    zcol = Tensor(np.zeros((b, h + 2 * p, p, c)))
    return ag.concat([zcol, x, zcol], axis=2)


class CausalDepthwiseConv1d(Module):
    """Depthwise conv over the token axis, padded so output t sees <= t.

    ``tail`` (b, kernel-1, c) optionally supplies the tokens preceding the
    call; by default the window starts from zeros. Returns (y, new_tail)
    where new_tail is the last kernel-1 inputs, for callers that stream.
    """

    def __init__(self, rng, channels: int, kernel: int = 4):
        self.kernel = kernel
        self.channels = channels
        self.weight = Parameter(
            rng.normal(0.0, 1.0 / np.sqrt(kernel), size=(kernel, channels)))
        self.bias = Parameter(np.zeros(channels))

    def forward(self, x: Tensor, tail: Tensor | None = None):
        b, t, c = x.shape
        k = self.kernel
        if tail is None:
            tail = Tensor(np.zeros((b, k - 1, c)))
        elif tail.shape != (b, k - 1, c):
            raise ContractError(
                f"tail must be {(b, k - 1, c)}, got {tail.shape}")
        xp = ag.concat([tail, x], axis=1)        # (b, t + k - 1, c)
        out = None
        for i in range(k):
            term = xp[:, i:i + t, :] * self.weight[i]
            out = term if out is None else out + term
        new_tail = xp[:, t:, :].detach()     # last kernel-1 inputs
        return out + self.bias, new_tail
