"""
Domain types and box geometry shared by every labelsmith module.

Boxes are stored as top-left corner plus width/height in float pixels. All
types are frozen dataclasses; operations return new objects.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from . import _kernels
from .exceptions import ConfigError, DataError

IDENTITY = "identity"
HFLIP = "hflip"
TRANSFORM_KINDS = (IDENTITY, HFLIP)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box ``[x, y, w, h]`` with ``w > 0`` and ``h > 0``."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise DataError(f"box field {name} is not finite: {v!r}")
            object.__setattr__(self, name, v)
        if self.w <= 0 or self.h <= 0:
            raise DataError(f"degenerate box: w={self.w}, h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def to_list(self):
        return [self.x, self.y, self.w, self.h]

    @classmethod
    def from_corners(cls, x1, y1, x2, y2) -> "BBox":
        return cls(x1, y1, x2 - x1, y2 - y1)

    def within(self, width: float, height: float) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x2 <= width and self.y2 <= height


@dataclass(frozen=True)
class LabeledBox:
    """Ground-truth box with a class id.

    ``ignore`` marks regions such as KITTI ``DontCare`` that are kept in the
    file but excluded from frequencies and matching.
    """

    box: BBox
    class_id: int
    ignore: bool = False

    def __post_init__(self):
        if int(self.class_id) != self.class_id or self.class_id < 0:
            raise DataError(f"class_id must be a non-negative integer, got {self.class_id!r}")
        object.__setattr__(self, "class_id", int(self.class_id))


@dataclass(frozen=True)
class Detection:
    box: BBox
    class_id: int
    score: float

    def __post_init__(self):
        if int(self.class_id) != self.class_id or self.class_id < 0:
            raise DataError(f"class_id must be a non-negative integer, got {self.class_id!r}")
        object.__setattr__(self, "class_id", int(self.class_id))
        s = float(self.score)
        if not (0.0 <= s <= 1.0):
            raise DataError(f"score out of range: {self.score!r}")
        object.__setattr__(self, "score", s)


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    file_name: str
    width: int
    height: int
    labels: Tuple[LabeledBox, ...] = ()
    is_collage: bool = False

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "image_id", str(self.image_id))
        if self.width <= 0 or self.height <= 0:
            raise DataError(f"image {self.image_id}: non-positive size {self.width}x{self.height}")

    @property
    def active_labels(self) -> Tuple[LabeledBox, ...]:
        """Labels that take part in statistics and matching."""
        return tuple(lb for lb in self.labels if not lb.ignore)


@dataclass(frozen=True)
class BoxTransform:
    """Geometric part of an inference-time augmentation.

    Photometric augmentations (blur, noise) use ``identity``.
    """

    kind: str = IDENTITY
    image_width: Optional[float] = None

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise ConfigError(f"unknown transform kind {self.kind!r}")
        if self.kind == HFLIP:
            if self.image_width is None or not self.image_width > 0:
                raise ConfigError("hflip transform needs a positive image_width")
            object.__setattr__(self, "image_width", float(self.image_width))


@dataclass(frozen=True)
class Matching:
    pairs: Tuple[Tuple[int, int, float], ...] = ()
    unmatched_gt: Tuple[int, ...] = ()
    unmatched_pred: Tuple[int, ...] = field(default=())

    def pred_for_gt(self) -> dict:
        return {g: p for g, p, _ in self.pairs}

    def gt_for_pred(self) -> dict:
        return {p: g for g, p, _ in self.pairs}


def boxes_array(items) -> np.ndarray:
    """Stack boxes (or objects carrying ``.box``) into an (n, 4) xywh array."""
    rows = []
    for it in items:
        b = it.box if hasattr(it, "box") else it
        rows.append((b.x, b.y, b.w, b.h))
    if not rows:
        return np.zeros((0, 4))
    return np.asarray(rows, dtype=np.float64)


def _overlap(a1, aw, b1, bw) -> float:
    # a span nested in the other contributes its own length, so iou(a, a) is exactly 1
    a2, b2 = a1 + aw, b1 + bw
    a_in, b_in = a1 >= b1 and a2 <= b2, b1 >= a1 and b2 <= a2
    if a_in and b_in:
        return min(aw, bw)
    if a_in:
        return aw
    if b_in:
        return bw
    return max(min(a2, b2) - max(a1, b1), 0.0)


def iou(a: BBox, b: BBox) -> float:
    iw = _overlap(a.x, a.w, b.x, b.w)
    ih = _overlap(a.y, a.h, b.y, b.h)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return min(inter / (a.w * a.h + b.w * b.h - inter), 1.0)


def intersects(a: BBox, b: BBox) -> bool:
    return _overlap(a.x, a.w, b.x, b.w) > 0 and _overlap(a.y, a.h, b.y, b.h) > 0


def apply_transform(t: BoxTransform, b: BBox) -> BBox:
    if t.kind == IDENTITY:
        return b
    # hflip
    return BBox(t.image_width - b.x - b.w, b.y, b.w, b.h)


def inverse(t: BoxTransform) -> BoxTransform:
    # both supported transforms are involutions
    return t


def match(gt: Sequence, preds: Sequence, iou_thresh: float = 0.5) -> Matching:
    """Greedy one-to-one matching of ground truth to predictions.

    Candidate pairs with IoU at or above ``iou_thresh`` are taken in order of
    descending IoU; ties go to the lower gt index, then the lower pred index.
    Matching is class-agnostic.

    Args:
        gt: boxes, or objects with a ``.box`` attribute.
        preds: boxes, or objects with a ``.box`` attribute.
        iou_thresh: minimum IoU for a pair, in (0, 1].

    Returns:
        Matching with pairs in pick order.
    """
    if not (0.0 < iou_thresh <= 1.0):
        raise ConfigError(f"iou_thresh must be in (0, 1], got {iou_thresh}")
    n, m = len(gt), len(preds)
    if n == 0 or m == 0:
        return Matching((), tuple(range(n)), tuple(range(m)))
    ious = _kernels.pairwise_iou(boxes_array(gt), boxes_array(preds))
    gi, pj = _kernels.greedy_match(ious, iou_thresh)
    pairs = tuple((int(g), int(p), float(ious[g, p])) for g, p in zip(gi, pj))
    used_g = set(int(g) for g in gi)
    used_p = set(int(p) for p in pj)
    return Matching(
        pairs,
        tuple(i for i in range(n) if i not in used_g),
        tuple(j for j in range(m) if j not in used_p),
    )
