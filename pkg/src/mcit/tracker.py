"""Streaming single-object inference with gated context propagation.

The tracker crops a search region around the previous box, runs the model
with the carried per-block hidden states, and commits the updated states
only when the classification score clears a confidence threshold.
High-confidence frames feed a bounded memory bank that periodically
refreshes the template clip (slot 0, the initial frame, is permanent).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError
from .geometry import BBox, box_to_image, crop_region, crop_resize
from .model import TrackModel, forward_with_context, zero_cif_states
from .heads import decode_box
from .synth import SEARCH_FACTOR, crop_template


@dataclass(frozen=True)
class TrackerConfig:
    update_interval: int = 25     # clip refresh period T (frames)
    score_threshold: float = 0.7  # commit gate a; +inf freezes context
    bank_capacity: int = 5

    def __post_init__(self):
        if self.update_interval < 1:
            raise ConfigError("update_interval must be >= 1")
        if self.bank_capacity < 1:
            raise ConfigError("bank_capacity must be >= 1")


@dataclass
class BankEntry:
    template: np.ndarray     # (3, tz, tz) crop
    score: float
    frame_index: int


@dataclass
class TrackerState:
    clip_slots: list          # n_clip templates; slot 0 permanent
    cif_states: list          # one CifBlockState per fusion block
    memory_bank: list         # BankEntry, size <= bank_capacity
    prev_box: BBox            # image coordinates
    frame_counter: int
    config: TrackerConfig


def _clip_to_frame(box: BBox, height: int, width: int) -> BBox:
    x1 = float(np.clip(box.x1, 0.0, width))
    x2 = float(np.clip(box.x2, 0.0, width))
    y1 = float(np.clip(box.y1, 0.0, height))
    y2 = float(np.clip(box.y2, 0.0, height))
    return BBox(x1, y1, max(x1, x2), max(y1, y2))


class Tracker:
    """Binds a model to the streaming protocol."""

    def __init__(self, model: TrackModel,
                 config: TrackerConfig = TrackerConfig()):
        self.model = model
        self.config = config

    def init(self, frame: np.ndarray, init_box: BBox) -> TrackerState:
        """Start a new track: every clip slot holds the initial template,
        hidden states are zeroed, the bank is empty."""
        if frame.ndim != 3 or frame.shape[0] != 3:
            raise ContractError("frame must be (3, H, W)")
        _, H, W = frame.shape
        if (init_box.x1 < 0 or init_box.y1 < 0 or init_box.x2 > W
                or init_box.y2 > H or init_box.area() <= 0):
            raise ContractError(
                f"init box {init_box} outside {W}x{H} frame")
        c = self.model.config.backbone
        template = crop_template(frame, init_box, c.template_size)
        return TrackerState(
            clip_slots=[template.copy() for _ in range(c.clip_len)],
            cif_states=zero_cif_states(self.model),
            memory_bank=[],
            prev_box=init_box,
            frame_counter=0,
            config=self.config)

    def track_frame(self, state: TrackerState, frame: np.ndarray):
        """Process one frame; returns (box in image coords, score, state).

        The state is updated in place: hidden states commit all-or-nothing
        behind the score gate, the bank takes confident templates, and the
        clip refreshes every `update_interval` frames from the bank.
        """
        _, H, W = frame.shape
        cfg = state.config
        cx, cy, side = crop_region(state.prev_box, SEARCH_FACTOR)
        c = self.model.config.backbone
        search = crop_resize(frame, cx, cy, side, c.search_size)
        clip = np.stack(state.clip_slots)
        _, maps, candidate_states = forward_with_context(
            self.model, clip, search, state.cif_states)
        box_crop, score = decode_box(maps)
        box = _clip_to_frame(box_to_image(box_crop, cx, cy, side), H, W)

        state.frame_counter += 1
        if score > cfg.score_threshold:
            state.cif_states = candidate_states
            entry = BankEntry(
                template=crop_template(frame, box, c.template_size),
                score=score, frame_index=state.frame_counter)
            state.memory_bank.append(entry)
            if len(state.memory_bank) > cfg.bank_capacity:
                lowest = min(range(len(state.memory_bank)),
                             key=lambda i: state.memory_bank[i].score)
                state.memory_bank.pop(lowest)
        if (state.frame_counter % cfg.update_interval == 0
                and state.memory_bank):
            best = sorted(state.memory_bank, key=lambda e: -e.score)
            best = sorted(best[:len(state.clip_slots) - 1],
                          key=lambda e: e.frame_index)
            for slot, entry in enumerate(best, start=1):
                state.clip_slots[slot] = entry.template.copy()
        state.prev_box = box
        return box, score, state


def track_sequence(model: TrackModel, frames, init_box: BBox,
                   config: TrackerConfig = TrackerConfig()):
    """Run a full video; returns (boxes, scores) for every frame,
    beginning with the given init box (score 1.0) for frame 0."""
    tracker = Tracker(model, config)
    state = tracker.init(frames[0], init_box)
    boxes, scores = [init_box], [1.0]
    for frame in frames[1:]:
        box, score, state = tracker.track_frame(state, frame)
        boxes.append(box)
        scores.append(score)
    return boxes, scores


def write_results(directory, boxes, scores) -> None:
    """Per-video result layout: one `x,y,w,h` pixel line per frame, plus
    a sidecar scores.txt."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for box in boxes:
        x, y, w, h = box.to_xywh()
        lines.append(f"{x:.3f},{y:.3f},{w:.3f},{h:.3f}")
    (directory / "results.txt").write_text("\n".join(lines) + "\n",
                                           encoding="utf-8")
    (directory / "scores.txt").write_text(
        "\n".join(f"{s:.6f}" for s in scores) + "\n", encoding="utf-8")


def read_results(directory):
    """Inverse of write_results."""
    directory = Path(directory)
    boxes = []
    for line in (directory / "results.txt").read_text(
            encoding="utf-8").splitlines():
        if not line.strip():
            continue
        x, y, w, h = (float(v) for v in line.split(","))
        boxes.append(BBox.from_xywh(x, y, w, h))
    scores = [float(s) for s in (directory / "scores.txt").read_text(
        encoding="utf-8").split()]
    return boxes, scores
