"""Full tracking model: backbone trunk wrapped with context-fusion blocks
plus the center head, and the versioned checkpoint format.

Per frame, each of the N trunk groups i executes:

    F_h, H_i'  = fusion_i.pre(F_c, H_i)      # read stored context
    F_vx       = group_i(fuse_in(F_vx, F_h)) # inject into the trunk
    F_c        = fuse_out(F_h, F_vx)         # harvest new context

The context seed F_c (input to the first block) is a learned matrix,
re-seeded every frame; only the per-block hidden states H_i persist.
``context_mode="none"`` removes the fusion machinery entirely (the
no-context ablation).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .backbone import Backbone, BackboneConfig
from .errors import ConfigError, ContractError
from .fusion import CifBlockState, ContextFusionBlock
from .heads import CenterHead, HeadMaps
from .nn import Module
from .ssm import HiddenState

CHECKPOINT_VERSION = 1
CONTEXT_MODES = ("cif", "none")


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    state_size: int = 16
    context_tokens: int = 0        # 0 = match search token count
    cif_heads: int = 4
    in_mode: str = "attention"
    out_mode: str = "attention"
    context_mode: str = "cif"
    residual_from_norm: bool = False
    use_skip: bool = True
    head_score_bias: float = -2.0

    def __post_init__(self):
        if isinstance(self.backbone, dict):
            self.backbone = BackboneConfig(**self.backbone)
        if self.context_mode not in CONTEXT_MODES:
            raise ConfigError(f"context_mode must be in {CONTEXT_MODES}")
        if self.state_size < 1:
            raise ConfigError("state_size must be >= 1")
        if self.context_tokens == 0:
            self.context_tokens = self.backbone.search_tokens

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class TrackModel(Module):
    def __init__(self, rng, config: ModelConfig):
        self.config = config
        self.backbone = Backbone(rng, config.backbone)
        if config.context_mode == "cif":
            self.context_seed = Parameter(rng.normal(
                0.0, 0.02, size=(config.context_tokens,
                                 config.backbone.dim)))
            self.cif_blocks = [
                ContextFusionBlock(
                    rng, config.backbone.dim, state_size=config.state_size,
                    heads=config.cif_heads, in_mode=config.in_mode,
                    out_mode=config.out_mode,
                    residual_from_norm=config.residual_from_norm,
                    use_skip=config.use_skip)
                for _ in range(config.backbone.n_groups)]
        else:
            self.context_seed = None
            self.cif_blocks = []
        self.head = CenterHead(rng, config.backbone.dim,
                               score_bias=config.head_score_bias)

    # -- state management ------------------------------------------------

    @property
    def n_states(self) -> int:
        return len(self.cif_blocks)

    def state_shape(self) -> tuple:
        inner = 2 * self.config.backbone.dim
        return (inner, self.config.state_size)

    def zero_states(self, batch: int) -> list:
        return [Tensor(np.zeros((batch,) + self.state_shape()))
                for _ in self.cif_blocks]

    # -- forward ---------------------------------------------------------

    def forward(self, clip_imgs: np.ndarray, search_img: np.ndarray,
                states: list):
        """Returns (head_out dict, new_states, search_feats).

        search_feats: (b, Hm, Wm, dim) Tensor after the final norm —
        only the search span reaches the head.
        """
        c = self.config.backbone
        if len(states) != self.n_states:
            raise ContractError(
                f"expected {self.n_states} states, got {len(states)}")
        b = search_img.shape[0]
        tokens = self.backbone.embed(clip_imgs, search_img)
        new_states = []
        if self.cif_blocks:
            f_c = ag.broadcast_to(
                self.context_seed.reshape(1, self.config.context_tokens,
                                          c.dim),
                (b, self.config.context_tokens, c.dim))
            for i, blk in enumerate(self.cif_blocks):
                st = states[i] if isinstance(states[i], Tensor) \
                    else Tensor(states[i])
                f_h, h_new = blk.pre(f_c, st)
                tokens = self.backbone.run_group(blk.fuse_in(tokens, f_h), i)
                f_c = blk.fuse_out(f_h, tokens)
                new_states.append(h_new)
        else:
            for i in range(c.n_groups):
                tokens = self.backbone.run_group(tokens, i)
        tokens = self.backbone.final_norm(tokens)
        n_clip_tok = c.clip_len * c.template_tokens
        search_tok = tokens[:, n_clip_tok:, :]
        feats = search_tok.reshape(b, c.feat_side, c.feat_side, c.dim)
        return self.head(feats), new_states, feats


def forward_with_context(model: TrackModel, clip_imgs: np.ndarray,
                         search_img: np.ndarray, cif_states: list):
    """Single-sequence surface: images without batch dims, states as
    CifBlockState. Returns (search_features (dim, Hm, Wm), context head
    maps, updated CifBlockState list)."""
    if len(cif_states) != model.n_states:
        raise ContractError(
            f"expected {model.n_states} states, got {len(cif_states)}")
    arrays = [st.hidden.h[None] for st in cif_states]
    with ag.no_grad():
        head_out, new_states, feats = model(
            np.asarray(clip_imgs, dtype=np.float64)[None],
            np.asarray(search_img, dtype=np.float64)[None], arrays)
    maps = HeadMaps(S=head_out["score"].data[0].transpose(2, 0, 1),
                    Bm=head_out["size"].data[0].transpose(2, 0, 1),
                    O=head_out["offset"].data[0].transpose(2, 0, 1))
    out_states = [
        CifBlockState(HiddenState(s.data[0], st.hidden.frame_index))
        for s, st in zip(new_states, cif_states)]
    return feats.data[0].transpose(2, 0, 1), maps, out_states


def zero_cif_states(model: TrackModel) -> list:
    inner, state = model.state_shape()
    return [CifBlockState.zeros(inner, state) for _ in model.cif_blocks]


# -- checkpoints ---------------------------------------------------------


def save_checkpoint(model: TrackModel, path, extra: dict | None = None):
    """Single .npz blob: parameter arrays plus a JSON manifest recording
    version, model config, array inventory, and any extra metadata."""
    state = model.state_dict()
    manifest = {
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "arrays": [{"name": k, "shape": list(v.shape), "dtype": str(v.dtype)}
                   for k, v in state.items()],
        "extra": extra or {},
    }
    arrays = {f"param/{k}": v for k, v in state.items()}
    arrays["__manifest__"] = np.frombuffer(
        json.dumps(manifest).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path) -> tuple:
    """Returns (ModelConfig, state_dict, extra). Rejects unknown versions
    and manifests that disagree with the stored arrays."""
    with np.load(path) as z:
        if "__manifest__" not in z:
            raise ContractError("checkpoint has no manifest")
        manifest = json.loads(bytes(z["__manifest__"]).decode("utf-8"))
        if manifest.get("version") != CHECKPOINT_VERSION:
            raise ContractError(
                f"unsupported checkpoint version {manifest.get('version')}")
        state = {}
        for entry in manifest["arrays"]:
            key = f"param/{entry['name']}"
            if key not in z:
                raise ContractError(f"manifest array missing: {entry['name']}")
            arr = z[key]
            if list(arr.shape) != entry["shape"]:
                raise ContractError(
                    f"shape mismatch for {entry['name']} in checkpoint")
            state[entry["name"]] = arr.astype(np.float64)
    config = ModelConfig.from_dict(manifest["config"])
    return config, state, manifest.get("extra", {})


def build_model(config: ModelConfig, seed: int = 0) -> TrackModel:
    return TrackModel(np.random.default_rng(seed), config)


def model_from_checkpoint(path) -> TrackModel:
    config, state, _ = load_checkpoint(path)
    model = build_model(config)
    model.load_state_dict(state)
    return model
