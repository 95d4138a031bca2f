"""Center-point prediction head and the training objective.

Three small conv stacks read the search-region feature map and emit, per
cell: a classification score S, a normalized box size Bm = (w, h), and a
sub-cell center offset O = (ox, oy), all sigmoid-bounded. Decoding takes
the argmax cell of S and reassembles the box from that cell's size/offset.

The objective sums, over the supervised frames, a penalty-reduced focal
term on S against a Gaussian target map plus L1 and generalized-IoU terms
on the box read out at the target's center cell, weighted 1 / 5 / 2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ContractError
from .geometry import BBox
from .nn import Conv2d3x3, Linear, Module

LOSS_WEIGHTS = (1.0, 5.0, 2.0)   # classification, L1, generalized IoU
_EPS = 1e-9


@dataclass
class HeadMaps:
    """Decoded-side view of the head output for one search region.

    S: (1, Hm, Wm) scores in [0,1]; Bm: (2, Hm, Wm) normalized (w, h);
    O: (2, Hm, Wm) sub-cell offsets (ox, oy) in [0,1).
    """

    S: np.ndarray
    Bm: np.ndarray
    O: np.ndarray


class _ConvStack(Module):
    def __init__(self, rng, dim: int, out_ch: int):
        c2 = max(dim // 2, 4)
        c4 = max(dim // 4, 4)
        self.conv1 = Conv2d3x3(rng, dim, c2)
        self.conv2 = Conv2d3x3(rng, c2, c4)
        self.out = Linear(rng, c4, out_ch)

    def forward(self, x: Tensor) -> Tensor:
        x = ag.relu(self.conv1(x))
        x = ag.relu(self.conv2(x))
        return ag.sigmoid(self.out(x))


class CenterHead(Module):
    """Input (b, Hm, Wm, dim); outputs dict of sigmoid maps (channel-last)."""

    def __init__(self, rng, dim: int, score_bias: float = -2.0):
        self.score_stack = _ConvStack(rng, dim, 1)
        self.size_stack = _ConvStack(rng, dim, 2)
        self.offset_stack = _ConvStack(rng, dim, 2)
        # start scores low so the focal negatives dominate early training
        self.score_stack.out.bias.data[:] = score_bias

    def forward(self, feats: Tensor) -> dict:
        return {
            "score": self.score_stack(feats),    # (b, Hm, Wm, 1)
            "size": self.size_stack(feats),      # (b, Hm, Wm, 2)
            "offset": self.offset_stack(feats),  # (b, Hm, Wm, 2)
        }


def head_forward(head: CenterHead, search_features: np.ndarray) -> HeadMaps:
    """Single-sequence surface: (dim, Hm, Wm) features to HeadMaps."""
    f = np.asarray(search_features, dtype=np.float64)
    if f.ndim != 3:
        raise ContractError("search features must be (dim, Hm, Wm)")
    with ag.no_grad():
        out = head(Tensor(f.transpose(1, 2, 0)[None]))
    return HeadMaps(S=out["score"].data[0].transpose(2, 0, 1),
                    Bm=out["size"].data[0].transpose(2, 0, 1),
                    O=out["offset"].data[0].transpose(2, 0, 1))


def decode_box(maps: HeadMaps) -> tuple[BBox, float]:
    """Argmax cell of S (row-major tie order) + that cell's offset/size."""
    _, hm, wm = maps.S.shape
    flat = int(np.argmax(maps.S[0]))
    i, j = divmod(flat, wm)
    cx = (j + maps.O[0, i, j]) / wm
    cy = (i + maps.O[1, i, j]) / hm
    w = maps.Bm[0, i, j]
    h = maps.Bm[1, i, j]
    box = BBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2).clip()
    return box, float(maps.S[0, i, j])


def center_cell(gt: BBox, hm: int, wm: int) -> tuple[int, int]:
    cxc = gt.cx * wm
    cyc = gt.cy * hm
    j0 = int(np.clip(np.floor(cxc), 0, wm - 1))
    i0 = int(np.clip(np.floor(cyc), 0, hm - 1))
    return i0, j0


def gaussian_target(gt: BBox, hm: int, wm: int) -> np.ndarray:
    """(hm, wm) map: 1 at the cell containing the center, Gaussian falloff
    with sigma proportional to the box size elsewhere."""
    cxc = gt.cx * wm
    cyc = gt.cy * hm
    i0, j0 = center_cell(gt, hm, wm)
    sx = max(0.25 * gt.w * wm, 1e-6)
    sy = max(0.25 * gt.h * hm, 1e-6)
    dx2 = (np.arange(wm) + 0.5 - cxc) ** 2
    dy2 = (np.arange(hm) + 0.5 - cyc) ** 2
    g = np.exp(-(dx2[None, :] / (2 * sx * sx) + dy2[:, None] / (2 * sy * sy)))
    return g / g[i0, j0]   # containing cell is the per-axis max, so peak = 1


def focal_loss(scores, target):
    """Penalty-reduced focal loss; positives are the exact-1 target cells.

    loss = [sum_pos -(1-p)^2 log p  +  sum_neg -(1-t)^4 p^2 log(1-p)]
           / max(1, #pos)

    Accepts numpy arrays (returns float) or Tensors (returns Tensor).
    """
    is_tensor = isinstance(scores, Tensor)
    s = scores if is_tensor else Tensor(np.asarray(scores, dtype=np.float64))
    t = np.asarray(target.data if isinstance(target, Tensor) else target,
                   dtype=np.float64)
    if s.shape != t.shape:
        raise ContractError("score/target shape mismatch")
    pos = (t == 1.0).astype(np.float64)
    neg = 1.0 - pos
    n_pos = max(1.0, pos.sum())
    p = ag.clip(s, 1e-7, 1.0 - 1e-7)
    pos_term = ((1.0 - p) ** 2.0) * ag.log(p) * pos
    neg_term = ((1.0 - t) ** 4) * (p ** 2.0) * ag.log(1.0 - p) * neg
    loss = (pos_term.sum() + neg_term.sum()) * (-1.0 / n_pos)
    return loss if is_tensor else loss.item()


def _corners(x) -> Tensor:
    if isinstance(x, BBox):
        x = x.as_array()
    x = ag.as_tensor(x)
    if x.ndim == 1:
        x = x.reshape(1, 4)
    return x


def _giou_per_box(pred: Tensor, gt: Tensor) -> Tensor:
    """1 - GIoU for corner tensors (n, 4); epsilon only guards zero
    denominators so finite cases stay exact."""
    px1, py1 = pred[:, 0], pred[:, 1]
    px2, py2 = pred[:, 2], pred[:, 3]
    gx1, gy1 = gt[:, 0], gt[:, 1]
    gx2, gy2 = gt[:, 2], gt[:, 3]
    iw = ag.relu(ag.minimum(px2, gx2) - ag.maximum(px1, gx1))
    ih = ag.relu(ag.minimum(py2, gy2) - ag.maximum(py1, gy1))
    inter = iw * ih
    union = (px2 - px1) * (py2 - py1) + (gx2 - gx1) * (gy2 - gy1) - inter
    hull = ((ag.maximum(px2, gx2) - ag.minimum(px1, gx1))
            * (ag.maximum(py2, gy2) - ag.minimum(py1, gy1)))
    giou_v = inter / ag.maximum(union, _EPS) \
        - (hull - union) / ag.maximum(hull, _EPS)
    return 1.0 - giou_v


def giou_loss(pred, gt):
    """Mean (1 - GIoU) over boxes. BBox/array input returns a float;
    Tensor input stays in the graph."""
    is_tensor = isinstance(pred, Tensor)
    out = _giou_per_box(_corners(pred), _corners(gt)).mean()
    return out if is_tensor else out.item()


def l1_loss(pred, gt):
    """Mean absolute corner difference."""
    is_tensor = isinstance(pred, Tensor)
    out = ag.absolute(_corners(pred) - _corners(gt)).mean()
    return out if is_tensor else out.item()


def total_loss(per_frame, weights=LOSS_WEIGHTS):
    """Weighted sum over frames of (cls, l1, giou) triples."""
    if not per_frame:
        raise ContractError("total_loss needs at least one frame")
    w_cls, w_l1, w_giou = weights
    total = None
    for cls_i, l1_i, giou_i in per_frame:
        term = w_cls * cls_i + w_l1 * l1_i + w_giou * giou_i
        total = term if total is None else total + term
    return total


def detection_losses(head_out: dict, gt_boxes: np.ndarray):
    """Per-frame loss triple for a batch.

    head_out: CenterHead output Tensors; gt_boxes: (b, 4) normalized
    corners. Size/offset are supervised at the target's center cell only.
    Returns (cls, l1, giou) scalar Tensors.
    """
    b, hm, wm, _ = head_out["score"].shape
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64)
    boxes = [BBox(*row) for row in gt_boxes]
    targets = np.stack([gaussian_target(g, hm, wm) for g in boxes])
    cls = focal_loss(head_out["score"].reshape(b, hm, wm), targets)

    cells = np.array([center_cell(g, hm, wm) for g in boxes])
    bi = np.arange(b)
    off = head_out["offset"][bi, cells[:, 0], cells[:, 1], :]   # (b, 2)
    size = head_out["size"][bi, cells[:, 0], cells[:, 1], :]    # (b, 2)
    cx = (off[:, 0] + cells[:, 1].astype(np.float64)) / wm
    cy = (off[:, 1] + cells[:, 0].astype(np.float64)) / hm
    half_w = size[:, 0] * 0.5
    half_h = size[:, 1] * 0.5
    pred = ag.concat([(cx - half_w).reshape(b, 1),
                      (cy - half_h).reshape(b, 1),
                      (cx + half_w).reshape(b, 1),
                      (cy + half_h).reshape(b, 1)], axis=1)
    return cls, l1_loss(pred, gt_boxes), \
        _giou_per_box(pred, ag.as_tensor(gt_boxes)).mean()
