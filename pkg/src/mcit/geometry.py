"""Box and crop geometry shared by the head, data pipeline, and tracker.

Conventions: boxes are corner tuples (x1, y1, x2, y2) in continuous
coordinates where pixel k spans [k, k+1); normalized boxes live in [0,1].
Images are (3, H, W) float arrays in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ContractError(f"inverted box {self}")

    @classmethod
    def from_xywh(cls, x, y, w, h) -> "BBox":
        return cls(x, y, x + w, y + h)

    def to_xywh(self) -> tuple:
        return (self.x1, self.y1, self.x2 - self.x1, self.y2 - self.y1)

    @property
    def w(self) -> float:
        return self.x2 - self.x1

    @property
    def h(self) -> float:
        return self.y2 - self.y1

    @property
    def cx(self) -> float:
        return 0.5 * (self.x1 + self.x2)

    @property
    def cy(self) -> float:
        return 0.5 * (self.y1 + self.y2)

    def area(self) -> float:
        return self.w * self.h

    def clip(self, lo=0.0, hi=1.0) -> "BBox":
        x1 = float(np.clip(self.x1, lo, hi))
        y1 = float(np.clip(self.y1, lo, hi))
        x2 = float(np.clip(self.x2, lo, hi))
        y2 = float(np.clip(self.y2, lo, hi))
        return BBox(x1, y1, max(x1, x2), max(y1, y2))

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2])


def iou(a: BBox, b: BBox) -> float:
    ix = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = ix * iy
    union = a.area() + b.area() - inter
    return inter / union if union > 0 else 0.0


def giou(a: BBox, b: BBox) -> float:
    """IoU minus the normalized empty share of the enclosing hull; in (-1, 1]."""
    ix = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = ix * iy
    union = a.area() + b.area() - inter
    hull = ((max(a.x2, b.x2) - min(a.x1, b.x1))
            * (max(a.y2, b.y2) - min(a.y1, b.y1)))
    eps = 1e-9
    return (inter / max(union, eps)
            - (hull - union) / max(hull, eps))


def crop_region(box: BBox, factor: float) -> tuple:
    """Square crop window (cx, cy, side) around a box: side = factor *
    the box's larger extent, floored at 1 pixel so degenerate boxes stay
    croppable."""
    side = factor * max(box.w, box.h, 1.0)
    return box.cx, box.cy, side


def crop_resize(image: np.ndarray, cx: float, cy: float, side: float,
                out_size: int) -> np.ndarray:
    """Bilinear resample of the square window (cx, cy, side) to
    (3, out_size, out_size). Out-of-frame reads clamp to the edge."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ContractError("image must be (3, H, W)")
    _, H, W = image.shape
    scale = side / out_size
    # output pixel centers mapped into source pixel-center coordinates
    xs = cx - side / 2 + (np.arange(out_size) + 0.5) * scale - 0.5
    ys = cy - side / 2 + (np.arange(out_size) + 0.5) * scale - 0.5
    xs = np.clip(xs, 0.0, W - 1.0)
    ys = np.clip(ys, 0.0, H - 1.0)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = xs - x0
    fy = ys - y0
    top = (image[:, y0][:, :, x0] * (1 - fx)
           + image[:, y0][:, :, x1] * fx)          # (3, out, out)
    bot = (image[:, y1][:, :, x0] * (1 - fx)
           + image[:, y1][:, :, x1] * fx)
    return top * (1 - fy[None, :, None]) + bot * fy[None, :, None]


def box_to_crop(box: BBox, cx: float, cy: float, side: float) -> BBox:
    """Map an image-coordinate box into the crop's normalized [0,1] frame
    (no clipping; callers clip when they need a valid target)."""
    x0 = cx - side / 2
    y0 = cy - side / 2
    return BBox((box.x1 - x0) / side, (box.y1 - y0) / side,
                (box.x2 - x0) / side, (box.y2 - y0) / side)


def box_to_image(box: BBox, cx: float, cy: float, side: float) -> BBox:
    """Inverse of box_to_crop."""
    x0 = cx - side / 2
    y0 = cy - side / 2
    return BBox(box.x1 * side + x0, box.y1 * side + y0,
                box.x2 * side + x0, box.y2 * side + y0)
