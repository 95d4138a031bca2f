"""Video-level training: two-pass context carry, AdamW, step-decay
schedule with optional linear warmup and gradient-norm clipping.

Each training step runs the model twice on the same clip: once against the
earlier search frame with zeroed context states, then against the later
search frame with the states produced by the first pass.  Both losses are
summed before the single backward/update, so the model is optimized for
carrying useful context across frames, not just per-frame detection.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, TrainingDiverged
from .heads import LOSS_WEIGHTS, detection_losses
from .model import ModelConfig, TrackModel, build_model, save_checkpoint
from .synth import SynthConfig, generate_sequence, make_training_sample


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: SynthConfig = field(default_factory=SynthConfig)
    num_sequences: int = 200
    lr_backbone: float = 4e-5
    lr_rest: float = 4e-4
    weight_decay: float = 1e-4
    epochs: int = 40
    samples_per_epoch: int = 2000
    batch_size: int = 8
    lr_drop_epoch: int = 32
    warmup_epochs: int = 0         # linear per-step lr ramp; 0 = no warmup
    clip_norm: float = 0.0         # global gradient-norm ceiling; 0 = off
    carry_gradients: bool = True
    checkpoint_every: int = 0      # epochs between checkpoints; 0 = final only
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if isinstance(self.data, dict):
            self.data = SynthConfig(**self.data)
        if self.lr_backbone <= 0 or self.lr_rest <= 0:
            raise ConfigError("learning rates must be positive")
        if not (0 < self.lr_drop_epoch < self.epochs):
            raise ConfigError(
                f"lr_drop_epoch must lie in (0, epochs), got "
                f"{self.lr_drop_epoch} of {self.epochs}")
        if self.batch_size < 1 or self.samples_per_epoch < self.batch_size:
            raise ConfigError("need samples_per_epoch >= batch_size >= 1")
        if self.num_sequences < 1:
            raise ConfigError("num_sequences must be >= 1")
        if not (0 <= self.warmup_epochs < self.epochs):
            raise ConfigError(
                f"warmup_epochs must lie in [0, epochs), got "
                f"{self.warmup_epochs} of {self.epochs}")
        if self.clip_norm < 0:
            raise ConfigError("clip_norm must be >= 0 (0 disables)")

    def to_dict(self) -> dict:
        return asdict(self)


class AdamW:
    """Adaptive-moment optimizer with decoupled weight decay.

    Parameters are grouped; each group carries its own base learning rate.
    Weight decay applies only to parameters with >= 2 dimensions, so norm
    scales, biases, and other vector parameters are never decayed.
    """

    def __init__(self, groups, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.0):
        # groups: list of dicts {"params": [(name, Parameter)], "lr": float}
        self.groups = []
        for g in groups:
            self.groups.append({
                "params": list(g["params"]),
                "lr": float(g["lr"]),
                "base_lr": float(g["lr"]),
            })
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {}
        self._v = {}

    def set_lr_scale(self, scale: float) -> None:
        for g in self.groups:
            g["lr"] = g["base_lr"] * scale

    @property
    def lrs(self):
        return tuple(g["lr"] for g in self.groups)

    def zero_grad(self):
        for g in self.groups:
            for _, p in g["params"]:
                p.grad = None

    def step(self):
        b1, b2 = self.betas
        self.t += 1
        for g in self.groups:
            lr = g["lr"]
            for name, p in g["params"]:
                if p.grad is None:
                    continue
                grad = p.grad
                m = self._m.get(name)
                if m is None:
                    m = np.zeros_like(p.data)
                    self._v[name] = np.zeros_like(p.data)
                v = self._v[name]
                m = b1 * m + (1 - b1) * grad
                v = b2 * v + (1 - b2) * grad * grad
                self._m[name] = m
                self._v[name] = v
                m_hat = m / (1 - b1 ** self.t)
                v_hat = v / (1 - b2 ** self.t)
                p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
                if self.weight_decay and p.data.ndim >= 2:
                    p.data -= lr * self.weight_decay * p.data


def build_optimizer(model: TrackModel, config: TrainConfig) -> AdamW:
    """Two groups: the shared feature backbone at the low rate, the
    context-fusion blocks / head / context seed at 10x that rate."""
    backbone, rest = [], []
    for name, p in model.named_parameters():
        (backbone if name.startswith("backbone.") else rest).append(
            (name, p))
    return AdamW(
        [{"params": backbone, "lr": config.lr_backbone},
         {"params": rest, "lr": config.lr_rest}],
        weight_decay=config.weight_decay)


def make_batch(samples):
    """Stack per-sequence training samples into batched arrays."""
    clip = np.stack([s.clip for s in samples])
    search1 = np.stack([s.search1 for s in samples])
    search2 = np.stack([s.search2 for s in samples])
    gt1 = np.stack([s.gt1.as_array() for s in samples])
    gt2 = np.stack([s.gt2.as_array() for s in samples])
    return {"clip": clip, "search1": search1, "search2": search2,
            "gt1": gt1, "gt2": gt2}


def _pass_loss(model, clip, search, gt, states):
    out, new_states, _ = model(clip, search, states)
    cls, l1, giou = detection_losses(out, gt)
    wc, wl, wg = LOSS_WEIGHTS
    total = wc * cls + wl * l1 + wg * giou
    return total, (cls, l1, giou), new_states


def clip_gradients(model: TrackModel, max_norm: float) -> float:
    """Scale all gradients in place so their global L2 norm is at most
    max_norm.  Returns the pre-clip norm."""
    grads = [p.grad for _, p in model.named_parameters()
             if p.grad is not None]
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


def train_step(model: TrackModel, batch, optimizer: AdamW,
               carry_gradients: bool = True, clip_norm: float = 0.0) -> dict:
    """One optimizer update over the two-pass video-level objective.

    Returns the loss breakdown (plus the pre-clip gradient norm); raises
    TrainingDiverged (with a diagnostic dump) if any term is non-finite.
    """
    b = batch["clip"].shape[0]
    optimizer.zero_grad()
    loss1, terms1, states = _pass_loss(
        model, batch["clip"], batch["search1"], batch["gt1"],
        model.zero_states(b))
    if not carry_gradients:
        states = [s.detach() for s in states]
    loss2, terms2, _ = _pass_loss(
        model, batch["clip"], batch["search2"], batch["gt2"], states)
    total = loss1 + loss2

    breakdown = {
        "loss_total": float(total.item()),
        "loss1": float(loss1.item()),
        "loss2": float(loss2.item()),
        "loss_cls": float(terms1[0].item() + terms2[0].item()),
        "loss_l1": float(terms1[1].item() + terms2[1].item()),
        "loss_giou": float(terms1[2].item() + terms2[2].item()),
    }
    if not all(np.isfinite(v) for v in breakdown.values()):
        raise TrainingDiverged(
            "non-finite loss", diagnostics={
                "step": optimizer.t, "lrs": optimizer.lrs, **breakdown})
    total.backward()
    breakdown["grad_norm"] = clip_gradients(
        model, clip_norm if clip_norm > 0 else np.inf)
    optimizer.step()
    return breakdown


_DATASET_SALT = 0xDA7A


def build_dataset(config: TrainConfig) -> list:
    """Render the training set once: samples_per_epoch crops drawn from
    the sequence pool.  Epochs reshuffle this fixed set (rendering every
    epoch afresh would dominate step time at desk scale)."""
    rng = np.random.default_rng([_DATASET_SALT, config.seed])
    c = config.model.backbone
    seq_seeds = rng.integers(config.num_sequences,
                             size=config.samples_per_epoch)
    cache, samples = {}, []
    for seq_seed in seq_seeds:
        seq_seed = int(seq_seed)
        if seq_seed not in cache:
            cache[seq_seed] = generate_sequence(config.data, seq_seed)
        samples.append(make_training_sample(
            cache[seq_seed], clip_len=c.clip_len,
            template_size=c.template_size, search_size=c.search_size,
            rng=rng))
    return samples


def _epoch_batches(config: TrainConfig, epoch: int, dataset: list):
    """Deterministic stream of shuffled batches for one epoch."""
    steps = config.samples_per_epoch // config.batch_size
    order = np.random.default_rng(
        [config.seed, epoch]).permutation(len(dataset))
    for step in range(steps):
        idx = order[step * config.batch_size:
                    (step + 1) * config.batch_size]
        yield step, make_batch([dataset[i] for i in idx])


def fit(config: TrainConfig, out_dir=None, model: TrackModel = None,
        log_fn=None):
    """Full training run.  Returns (model, history); history holds one
    dict of mean losses per epoch.  If out_dir is given, appends metrics
    lines `epoch, step, loss_total, loss_cls, loss_l1, loss_giou, lr` to
    metrics.log and writes checkpoints there."""
    if model is None:
        model = build_model(config.model, seed=config.seed)
    optimizer = build_optimizer(model, config)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "metrics.log" if out_dir is not None else None

    dataset = build_dataset(config)
    steps_per_epoch = config.samples_per_epoch // config.batch_size
    warmup_steps = config.warmup_epochs * steps_per_epoch
    history = []
    t0 = time.time()
    for epoch in range(config.epochs):
        drop = 0.1 if epoch >= config.lr_drop_epoch else 1.0
        optimizer.set_lr_scale(drop)
        sums, count = {}, 0
        for step, batch in _epoch_batches(config, epoch, dataset):
            gstep = epoch * steps_per_epoch + step
            if gstep < warmup_steps:
                optimizer.set_lr_scale(drop * (gstep + 1) / warmup_steps)
            elif gstep == warmup_steps:
                optimizer.set_lr_scale(drop)
            try:
                breakdown = train_step(model, batch, optimizer,
                                       config.carry_gradients,
                                       config.clip_norm)
            except TrainingDiverged as err:
                err.diagnostics.update(epoch=epoch, step=step)
                if out_dir is not None:
                    (out_dir / "diverged.json").write_text(
                        json.dumps(err.diagnostics, indent=2, default=str),
                        encoding="utf-8")
                raise
            for k, v in breakdown.items():
                sums[k] = sums.get(k, 0.0) + v
            count += 1
            if log_path is not None:
                with open(log_path, "a", encoding="utf-8") as f:
                    f.write(f"{epoch}, {step}, "
                            f"{breakdown['loss_total']:.6f}, "
                            f"{breakdown['loss_cls']:.6f}, "
                            f"{breakdown['loss_l1']:.6f}, "
                            f"{breakdown['loss_giou']:.6f}, "
                            f"{optimizer.lrs[1]:.2e}\n")
        epoch_mean = {k: v / max(count, 1) for k, v in sums.items()}
        epoch_mean["epoch"] = epoch
        epoch_mean["lr_rest"] = optimizer.lrs[1]
        epoch_mean["elapsed_s"] = time.time() - t0
        history.append(epoch_mean)
        if log_fn is not None:
            log_fn(epoch_mean)
        if out_dir is not None and config.checkpoint_every > 0 \
                and (epoch + 1) % config.checkpoint_every == 0:
            save_checkpoint(model, out_dir / f"model_epoch{epoch:03d}.npz",
                            extra={"epoch": epoch})
    if out_dir is not None:
        save_checkpoint(model, out_dir / "model_final.npz",
                        extra={"epoch": config.epochs - 1,
                               "train_config": config.to_dict()})
    return model, history
