"""Deterministic synthetic video sequences for training and evaluation.

Each sequence shows one target shape drifting with a smooth random-walk
velocity over a textured background, optionally accompanied by
identical-looking distractor clones and moving occluder bars.  Generation
is a pure function of (config, seed), so the whole data pipeline is
bitwise reproducible.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, SamplingError
from .geometry import BBox, box_to_crop, crop_region, crop_resize

_SHAPE_KINDS = ("disk", "square", "diamond")
_SEED_SALT = 0x5EED

TEMPLATE_FACTOR = 2.0
SEARCH_FACTOR = 4.0
CENTER_JITTER = 0.1    # fraction of crop side
SCALE_JITTER = 0.2     # relative crop-side perturbation


@dataclass(frozen=True)
class SynthConfig:
    length: int = 40
    image_size: int = 128
    distractors: int = 0
    occluders: int = 0
    max_step: float = 4.0        # max centre displacement per frame (px)
    accel: float = 1.2           # velocity perturbation scale (px/frame^2)
    size_range: tuple = (0.10, 0.22)   # target extent as fraction of image
    noise: float = 0.02          # per-frame background noise amplitude
    occluder_width: tuple = (0.06, 0.12)  # bar width as fraction of image

    def __post_init__(self):
        if self.length < 2:
            raise ConfigError(f"length must be >= 2, got {self.length}")
        if self.image_size % 16 != 0 or self.image_size <= 0:
            raise ConfigError(
                f"image_size must be a positive multiple of 16, got "
                f"{self.image_size}")
        if self.distractors < 0 or self.occluders < 0:
            raise ConfigError("counts must be non-negative")
        if self.max_step <= 0:
            raise ConfigError("max_step must be positive")
        lo, hi = self.size_range
        if not (0 < lo <= hi < 0.5):
            raise ConfigError(f"bad size_range {self.size_range}")
        lo, hi = self.occluder_width
        if not (0 < lo <= hi < 1.0):
            raise ConfigError(f"bad occluder_width {self.occluder_width}")


@dataclass(frozen=True)
class SequenceMeta:
    seed: int
    distractors: int
    occluded: tuple   # per-frame flags: any bar overlaps the target box


@dataclass
class SyntheticSequence:
    frames: list         # list of (3, H, W) float arrays in [0, 1]
    gt: list             # list of BBox in pixel coordinates
    meta: SequenceMeta

    def __post_init__(self):
        if len(self.frames) != len(self.gt):
            raise ContractError("frames and gt must have equal length")

    def __len__(self):
        return len(self.frames)


def _bounce_walk(rng, n, size, half, max_step, accel, start=None):
    """Smooth random-walk centre path that keeps the shape fully inside
    the frame by reflecting at the borders.  Step length is capped so the
    per-frame displacement stays strictly below max_step."""
    lo, hi = half + 1.0, size - half - 1.0
    if start is None:
        pos = rng.uniform(lo, hi, size=2)
    else:
        pos = np.asarray(start, dtype=float)
    vel = rng.uniform(-0.5, 0.5, size=2) * max_step
    path = np.empty((n, 2))
    for t in range(n):
        path[t] = pos
        vel = vel + rng.normal(scale=accel, size=2)
        speed = np.hypot(*vel)
        cap = 0.98 * max_step
        if speed > cap:
            vel *= cap / speed
        pos = pos + vel
        for ax in range(2):
            if pos[ax] < lo:
                pos[ax] = 2 * lo - pos[ax]
                vel[ax] = -vel[ax]
            elif pos[ax] > hi:
                pos[ax] = 2 * hi - pos[ax]
                vel[ax] = -vel[ax]
            pos[ax] = np.clip(pos[ax], lo, hi)
    return path


def _shape_mask(kind, xx, yy, cx, cy, half):
    if kind == "disk":
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= half ** 2
    if kind == "square":
        return (np.abs(xx - cx) <= half) & (np.abs(yy - cy) <= half)
    if kind == "diamond":
        return np.abs(xx - cx) + np.abs(yy - cy) <= half
    raise ContractError(f"unknown shape kind {kind!r}")


def _paint(frame, mask, color):
    for c in range(3):
        frame[c][mask] = color[c]


def generate_sequence(config: SynthConfig, seed: int) -> SyntheticSequence:
    """Render a full sequence; pure in (config, seed)."""
    if not isinstance(config, SynthConfig):
        config = SynthConfig(**config)
    rng = np.random.default_rng([_SEED_SALT, seed])
    n, size = config.length, config.image_size

    # static background: smooth two-tone gradient
    base = rng.uniform(0.25, 0.75, size=(3, 1, 1))
    tilt = rng.uniform(-0.15, 0.15, size=(3, 2))
    ys, xs = np.mgrid[0:size, 0:size] / size
    background = np.clip(
        base + tilt[:, 0, None, None] * xs + tilt[:, 1, None, None] * ys,
        0.0, 1.0)

    kind = _SHAPE_KINDS[rng.integers(len(_SHAPE_KINDS))]
    half = 0.5 * size * rng.uniform(*config.size_range)
    color = rng.uniform(0.0, 1.0, size=3)
    # keep the shape visibly distinct from the mean background tone
    color = np.where(np.abs(color - base[:, 0, 0]) < 0.2,
                     1.0 - color, color)

    paths = [_bounce_walk(rng, n, size, half, config.max_step,
                          config.accel)]
    for _ in range(config.distractors):
        paths.append(_bounce_walk(rng, n, size, half, config.max_step,
                                  config.accel))

    bars = []
    for _ in range(config.occluders):
        horizontal = bool(rng.integers(2))
        width = rng.uniform(*config.occluder_width) * size
        offset = rng.uniform(0, size)
        speed = rng.uniform(0.5, 1.5) * config.max_step * rng.choice([-1, 1])
        bar_color = rng.uniform(0.0, 1.0, size=3)
        bars.append((horizontal, width, offset, speed, bar_color))

    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    frames, gt, occluded = [], [], []
    for t in range(n):
        frame = background.copy()
        if config.noise > 0:
            frame = np.clip(
                frame + rng.normal(scale=config.noise, size=frame.shape),
                0.0, 1.0)
        # distractors first so the true target stays on top at crossings
        for path in paths[1:]:
            cx, cy = path[t]
            _paint(frame, _shape_mask(kind, xx, yy, cx, cy, half), color)
        cx, cy = paths[0][t]
        _paint(frame, _shape_mask(kind, xx, yy, cx, cy, half), color)
        box = BBox(cx - half, cy - half, cx + half, cy + half)

        hit = False
        for horizontal, width, offset, speed, bar_color in bars:
            pos = (offset + speed * t) % size
            lo, hi = pos - width / 2, pos + width / 2
            coord = yy if horizontal else xx
            mask = (coord >= lo) & (coord <= hi)
            if hi > size:                       # wrap around the border
                mask |= coord <= hi - size
                span = (0.0, hi - size), (lo, size)
            else:
                span = ((lo, hi),)
            _paint(frame, mask, bar_color)
            b0 = box.y1 if horizontal else box.x1
            b1 = box.y2 if horizontal else box.x2
            hit = hit or any(s0 < b1 and s1 > b0 for s0, s1 in span)

        frames.append(frame)
        gt.append(box)
        occluded.append(hit)

    meta = SequenceMeta(seed=seed, distractors=config.distractors,
                        occluded=tuple(occluded))
    return SyntheticSequence(frames=frames, gt=gt, meta=meta)


def crop_template(frame, box: BBox, out_size: int) -> np.ndarray:
    """Square crop at TEMPLATE_FACTOR around the box, resized."""
    cx, cy, side = crop_region(box, TEMPLATE_FACTOR)
    return crop_resize(frame, cx, cy, side, out_size)


def crop_search(frame, box: BBox, out_size: int, rng=None):
    """Square crop at SEARCH_FACTOR around the box with optional centre /
    scale jitter.  Returns (crop, gt mapped into the crop, (cx, cy, side))
    with the box in normalized crop coordinates."""
    cx, cy, side = crop_region(box, SEARCH_FACTOR)
    if rng is not None:
        side = side * (1.0 + rng.uniform(-SCALE_JITTER, SCALE_JITTER))
        cx = cx + rng.uniform(-CENTER_JITTER, CENTER_JITTER) * side
        cy = cy + rng.uniform(-CENTER_JITTER, CENTER_JITTER) * side
    crop = crop_resize(frame, cx, cy, side, out_size)
    return crop, box_to_crop(box, cx, cy, side), (cx, cy, side)


@dataclass
class TrainingSample:
    clip: np.ndarray       # (clip_len, 3, tz, tz) template crops
    search1: np.ndarray    # (3, sx, sx)
    search2: np.ndarray    # (3, sx, sx)
    gt1: BBox              # in search1's normalized coordinates
    gt2: BBox              # in search2's normalized coordinates


def make_training_sample(seq: SyntheticSequence, clip_len: int = 5,
                         template_size: int = 64, search_size: int = 128,
                         rng=None, jitter: bool = True) -> TrainingSample:
    """Pick an ordered past clip (frame 0 always first) plus two later
    search frames, crop everything, and map ground truth into the search
    crops' normalized coordinates."""
    if clip_len < 1:
        raise ContractError(f"clip_len must be >= 1, got {clip_len}")
    if len(seq) < clip_len + 2:
        raise SamplingError(
            f"sequence of {len(seq)} frames too short for clip_len "
            f"{clip_len} plus two search frames")
    if rng is None:
        rng = np.random.default_rng([_SEED_SALT + 1, seq.meta.seed])

    j1 = int(rng.integers(clip_len, len(seq) - 1))
    j2 = int(rng.integers(j1 + 1, len(seq)))
    past = [0]
    if clip_len > 1:
        extra = rng.choice(np.arange(1, j1), size=clip_len - 1,
                           replace=False)
        past += sorted(int(i) for i in extra)

    clip = np.stack([crop_template(seq.frames[i], seq.gt[i], template_size)
                     for i in past])
    jr = rng if jitter else None
    search1, gt1, _ = crop_search(seq.frames[j1], seq.gt[j1], search_size,
                                  jr)
    search2, gt2, _ = crop_search(seq.frames[j2], seq.gt[j2], search_size,
                                  jr)
    return TrainingSample(clip=clip, search1=search1, search2=search2,
                          gt1=gt1.clip(0.0, 1.0), gt2=gt2.clip(0.0, 1.0))


# -- on-disk layout ------------------------------------------------------


def dump_sequence(seq: SyntheticSequence, directory) -> None:
    """Write one directory per sequence: zero-padded frame images plus
    groundtruth.txt with one `x,y,w,h` pixel line per frame."""
    from PIL import Image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    digits = max(4, len(str(len(seq) - 1)))
    for i, frame in enumerate(seq.frames):
        arr = np.clip(frame * 255.0 + 0.5, 0, 255).astype(np.uint8)
        img = Image.fromarray(arr.transpose(1, 2, 0))
        img.save(directory / f"{i:0{digits}d}.png")
    lines = []
    for box in seq.gt:
        x, y, w, h = box.to_xywh()
        lines.append(f"{x:.3f},{y:.3f},{w:.3f},{h:.3f}")
    (directory / "groundtruth.txt").write_text("\n".join(lines) + "\n",
                                               encoding="utf-8")


def load_sequence(directory) -> SyntheticSequence:
    """Read a dumped sequence directory back into memory."""
    from PIL import Image

    directory = Path(directory)
    gt_path = directory / "groundtruth.txt"
    if not gt_path.exists():
        raise ContractError(f"missing groundtruth.txt in {directory}")
    gt = []
    for line in gt_path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        x, y, w, h = (float(v) for v in line.split(","))
        gt.append(BBox.from_xywh(x, y, w, h))
    frame_files = sorted(p for p in directory.iterdir()
                         if re.fullmatch(r"\d+\.png", p.name))
    if len(frame_files) != len(gt):
        raise ContractError(
            f"{directory}: {len(frame_files)} frames vs {len(gt)} gt lines")
    frames = []
    for p in frame_files:
        arr = np.asarray(Image.open(p), dtype=np.float64) / 255.0
        frames.append(arr.transpose(2, 0, 1))
    meta = SequenceMeta(seed=-1, distractors=-1,
                        occluded=(False,) * len(gt))
    return SyntheticSequence(frames=frames, gt=gt, meta=meta)
