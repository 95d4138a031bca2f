"""One-pass evaluation and the overlap/precision metric suite.

Conventions: success and overlap thresholds use strict ">"; pixel
precision and normalized precision use "<=".  Aggregation is always
per-sequence first, then a mean over sequences.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError
from .geometry import iou
from .model import TrackModel
from .tracker import TrackerConfig, track_sequence

SUCCESS_THRESHOLDS = np.linspace(0.0, 1.0, 21)
NORM_PRECISION_THRESHOLDS = np.linspace(0.0, 0.5, 51)
PIXEL_THRESHOLD = 20.0


def success_auc(ious) -> float:
    """Mean over 21 overlap thresholds of fraction(IoU > threshold)."""
    ious = np.asarray(ious, dtype=float)
    if ious.size == 0:
        raise ContractError("success_auc needs at least one IoU")
    return float(np.mean([np.mean(ious > t) for t in SUCCESS_THRESHOLDS]))


def ao_sr(ious):
    """Average overlap and success rates at 0.5 / 0.75 (strict >)."""
    ious = np.asarray(ious, dtype=float)
    if ious.size == 0:
        raise ContractError("ao_sr needs at least one IoU")
    return (float(ious.mean()), float(np.mean(ious > 0.5)),
            float(np.mean(ious > 0.75)))


def precision_metrics(pred_centers, gt_boxes,
                      pixel_threshold=PIXEL_THRESHOLD):
    """(precision, norm_precision) for one sequence.

    precision: fraction of frames whose center error is <= the pixel
    threshold.  norm_precision: mean over 51 thresholds in [0, 0.5] of
    the fraction of frames whose per-axis gt-size-normalized center error
    is <= the threshold.
    """
    pred_centers = np.asarray(pred_centers, dtype=float)
    if len(pred_centers) != len(gt_boxes):
        raise ContractError("centers and boxes must align")
    if len(gt_boxes) == 0:
        raise ContractError("precision needs at least one frame")
    gx = np.array([b.cx for b in gt_boxes])
    gy = np.array([b.cy for b in gt_boxes])
    gw = np.array([max(b.w, 1e-9) for b in gt_boxes])
    gh = np.array([max(b.h, 1e-9) for b in gt_boxes])
    dx = pred_centers[:, 0] - gx
    dy = pred_centers[:, 1] - gy
    dist = np.hypot(dx, dy)
    precision = float(np.mean(dist <= pixel_threshold))
    norm_dist = np.hypot(dx / gw, dy / gh)
    norm_precision = float(np.mean(
        [np.mean(norm_dist <= t) for t in NORM_PRECISION_THRESHOLDS]))
    return precision, norm_precision


@dataclass
class EvalReport:
    per_sequence_ious: list     # one float array per sequence
    auc: float
    precision: float
    norm_precision: float
    ao: float
    sr_050: float
    sr_075: float
    n_sequences: int

    def summary_table(self) -> str:
        rows = [("sequences", f"{self.n_sequences}"),
                ("success AUC", f"{self.auc:.4f}"),
                ("precision", f"{self.precision:.4f}"),
                ("norm precision", f"{self.norm_precision:.4f}"),
                ("AO", f"{self.ao:.4f}"),
                ("SR@0.50", f"{self.sr_050:.4f}"),
                ("SR@0.75", f"{self.sr_075:.4f}")]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def evaluate_trace(pred_boxes, gt_boxes):
    """Per-sequence metric bundle from aligned box lists (init frame
    already excluded by the caller)."""
    if len(pred_boxes) != len(gt_boxes) or not gt_boxes:
        raise ContractError("prediction/gt length mismatch or empty")
    ious = np.array([iou(p, g) for p, g in zip(pred_boxes, gt_boxes)])
    centers = np.array([[p.cx, p.cy] for p in pred_boxes])
    precision, norm_precision = precision_metrics(centers, gt_boxes)
    ao, sr50, sr75 = ao_sr(ious)
    return {"ious": ious, "auc": success_auc(ious),
            "precision": precision, "norm_precision": norm_precision,
            "ao": ao, "sr_050": sr50, "sr_075": sr75}


def run_one_pass_eval(model_or_fn, sequences,
                      tracker_config: TrackerConfig = TrackerConfig()
                      ) -> EvalReport:
    """Initialize each sequence from frame 0's ground truth, track to the
    end without re-initialization, and aggregate per-sequence metrics.
    The init frame is excluded from scoring.

    Accepts either a model (run through the streaming tracker) or a
    callable `fn(sequence) -> list of predicted boxes for frames 1..end`.
    """
    if not sequences:
        raise ContractError("need at least one sequence")
    per_seq = []
    for seq in sequences:
        if len(seq.frames) < 2:
            raise ContractError("sequences must have >= 2 frames")
        if isinstance(model_or_fn, TrackModel):
            boxes, _ = track_sequence(model_or_fn, seq.frames, seq.gt[0],
                                      tracker_config)
            preds = boxes[1:]
        else:
            preds = list(model_or_fn(seq))
        per_seq.append(evaluate_trace(preds, seq.gt[1:]))
    mean = lambda key: float(np.mean([m[key] for m in per_seq]))
    return EvalReport(
        per_sequence_ious=[m["ious"] for m in per_seq],
        auc=mean("auc"), precision=mean("precision"),
        norm_precision=mean("norm_precision"), ao=mean("ao"),
        sr_050=mean("sr_050"), sr_075=mean("sr_075"),
        n_sequences=len(per_seq))


def write_report(report: EvalReport, path) -> None:
    """Machine-readable key=value lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    keys = ("auc", "precision", "norm_precision", "ao", "sr_050",
            "sr_075", "n_sequences")
    lines = [f"{k}={getattr(report, k)}" for k in keys]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_success_curve(report: EvalReport, path) -> None:
    """Comma-separated (threshold, success fraction) pairs, the mean over
    sequences at each of the 21 overlap thresholds."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for t in SUCCESS_THRESHOLDS:
        frac = float(np.mean([np.mean(ious > t)
                              for ious in report.per_sequence_ious]))
        lines.append(f"{t:.2f},{frac:.6f}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
