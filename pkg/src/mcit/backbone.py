"""Patch embedding, token assembly, and the transformer trunk.

Images enter as (3, H, W); a stride-4 conv, a pointwise MLP, and two
stride-2 merges bring the total stride to 16 and the width to the model
dim. Template-frame tokens (one set per clip slot, slot-tagged by a
learned clip embedding) are concatenated ahead of the search tokens; the
trunk is ``depth`` pre-norm transformer layers split into ``n_groups``
equal groups, each fused with the context stream by its own fusion block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .errors import ConfigError, ContractError
from .nn import LayerNorm, Linear, Module, PatchifyConv, TransformerBlock

STRIDE = 16


@dataclass
class BackboneConfig:
    dim: int = 128
    depth: int = 8
    n_groups: int = 4
    heads: int = 4
    template_size: int = 64
    search_size: int = 128
    clip_len: int = 5

    def __post_init__(self):
        if self.depth % self.n_groups:
            raise ConfigError("depth must be divisible by n_groups")
        if self.template_size % STRIDE or self.search_size % STRIDE:
            raise ConfigError(f"image sides must be divisible by {STRIDE}")
        if min(self.dim, self.depth, self.n_groups, self.heads,
               self.clip_len) < 1:
            raise ConfigError("all backbone sizes must be positive")

    @property
    def template_tokens(self) -> int:
        return (self.template_size // STRIDE) ** 2

    @property
    def search_tokens(self) -> int:
        return (self.search_size // STRIDE) ** 2

    @property
    def total_tokens(self) -> int:
        return self.clip_len * self.template_tokens + self.search_tokens

    @property
    def feat_side(self) -> int:
        return self.search_size // STRIDE


@dataclass
class TokenSeq:
    """Assembled token matrix plus the spans of its two segments."""

    tokens: np.ndarray                    # (L, dim)
    clip_span: tuple = (0, 0)             # [start, end)
    search_span: tuple = (0, 0)


class PatchEmbed(Module):
    """(b, H, W, 3) image to (b, H/16 * W/16, dim) tokens."""

    def __init__(self, rng, dim: int):
        d4 = max(dim // 4, 4)
        d2 = max(dim // 2, 4)
        self.conv = PatchifyConv(rng, 3, d4, kernel=4)
        self.mlp = Linear(rng, d4, d4)
        self.merge1 = PatchifyConv(rng, d4, d2, kernel=2)
        self.merge2 = PatchifyConv(rng, d2, dim, kernel=2)
        self.norm = LayerNorm(dim)

    def forward(self, x: Tensor) -> Tensor:
        b, h, w, _ = x.shape
        if h % STRIDE or w % STRIDE:
            raise ConfigError(f"image sides must be divisible by {STRIDE}")
        x = ag.gelu(self.conv(x))
        x = ag.gelu(self.mlp(x))
        x = ag.gelu(self.merge1(x))
        x = self.merge2(x)
        x = x.reshape(b, (h // STRIDE) * (w // STRIDE), -1)
        return self.norm(x)


class Backbone(Module):
    """Patch embed + positional/clip embeddings + grouped trunk."""

    def __init__(self, rng, config: BackboneConfig):
        self.config = config
        c = config
        self.patch = PatchEmbed(rng, c.dim)
        self.pos_template = Parameter(
            rng.normal(0.0, 0.02, size=(c.template_tokens, c.dim)))
        self.pos_clip = Parameter(
            rng.normal(0.0, 0.02, size=(c.clip_len, 1, c.dim)))
        self.pos_search = Parameter(
            rng.normal(0.0, 0.02, size=(c.search_tokens, c.dim)))
        self.blocks = [TransformerBlock(rng, c.dim, c.heads)
                       for _ in range(c.depth)]
        self.final_norm = LayerNorm(c.dim)

    @property
    def group_size(self) -> int:
        return self.config.depth // self.config.n_groups

    def embed(self, clip_imgs: np.ndarray, search_img: np.ndarray) -> Tensor:
        """clip_imgs (b, n_clip, 3, hz, wz), search (b, 3, hx, wx) float
        arrays; returns assembled (b, L, dim) tokens with positions added."""
        c = self.config
        b, n_clip = clip_imgs.shape[:2]
        if n_clip != c.clip_len:
            raise ContractError(
                f"expected {c.clip_len} clip frames, got {n_clip}")
        flat = clip_imgs.reshape(b * n_clip, *clip_imgs.shape[2:])
        z = self.patch(Tensor(flat.transpose(0, 2, 3, 1)))
        z = z + self.pos_template
        z = z.reshape(b, n_clip, c.template_tokens, c.dim) + self.pos_clip
        z = z.reshape(b, n_clip * c.template_tokens, c.dim)
        x = self.patch(Tensor(search_img.transpose(0, 2, 3, 1)))
        x = x + self.pos_search
        return ag.concat([z, x], axis=1)

    def run_group(self, tokens: Tensor, group_index: int) -> Tensor:
        g = self.group_size
        for blk in self.blocks[group_index * g:(group_index + 1) * g]:
            tokens = blk(tokens)
        return tokens


def patch_embed(backbone: Backbone, image: np.ndarray) -> np.ndarray:
    """Single-image surface: (3, H, W) to (H/16 * W/16, dim)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ContractError("image must be (3, H, W)")
    with ag.no_grad():
        out = backbone.patch(Tensor(image.transpose(1, 2, 0)[None]))
    return out.data[0]


def assemble_tokens(backbone: Backbone, clip_tokens: list,
                    search_tokens: np.ndarray) -> TokenSeq:
    """Single-sequence surface over pre-embedded tokens: adds positional
    and clip-slot embeddings and records the segment spans."""
    c = backbone.config
    clip_tokens = [np.asarray(t, dtype=np.float64) for t in clip_tokens]
    search_tokens = np.asarray(search_tokens, dtype=np.float64)
    for t in clip_tokens:
        if t.shape[1] != c.dim or search_tokens.shape[1] != c.dim:
            raise ContractError("token width mismatch")
    if len(clip_tokens) != c.clip_len:
        raise ContractError(
            f"expected {c.clip_len} clip frames, got {len(clip_tokens)}")
    parts = []
    for s, t in enumerate(clip_tokens):
        parts.append(t + backbone.pos_template.data
                     + backbone.pos_clip.data[s])
    parts.append(search_tokens + backbone.pos_search.data)
    tokens = np.concatenate(parts, axis=0)
    n_clip_tok = sum(t.shape[0] for t in clip_tokens)
    return TokenSeq(tokens, clip_span=(0, n_clip_tok),
                    search_span=(n_clip_tok, tokens.shape[0]))
