"""
Ground-truth label correction from teacher prediction consistency.

Given teacher detections on the original images and on augmented copies, a
detection's consistency is the mean IoU with its matched counterpart in each
augmented variant (0 when it has none). Consistent detections are trusted to
fix ground truth:

* false GT: a label intersecting no detection scored at least ``delta_floor``
  is removed;
* noisy GT: a label matched to a consistent detection at IoU below ``gamma_o``
  takes the detection's box; a class disagreement with a consistent match
  takes the detection's class;
* missing GT: a consistent detection scored at least ``delta_s`` that overlaps
  no label is promoted to a new label.

Corrections are computed per image in the order false, noisy, missing.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import _kernels
from .core import BBox, Detection, LabeledBox, apply_transform, boxes_array, inverse, match
from .dataset_io import AnnotationSet, DetectionSet
from .exceptions import ConfigError, DataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GlcConfig:
    delta_floor: float = 0.1
    delta_s: float = 0.4
    gamma_c: float = 0.9
    gamma_o: float = 0.9
    match_iou: float = 0.5
    correct_classes: bool = True

    def __post_init__(self):
        for name in ("delta_floor", "delta_s", "gamma_c", "gamma_o", "match_iou"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ConfigError(f"{name} must be in (0, 1], got {v}")
        if self.delta_floor > self.delta_s:
            raise ConfigError("delta_floor must not exceed delta_s")

    def to_dict(self):
        return {
            "delta_floor": self.delta_floor,
            "delta_s": self.delta_s,
            "gamma_c": self.gamma_c,
            "gamma_o": self.gamma_o,
            "match_iou": self.match_iou,
            "correct_classes": self.correct_classes,
        }


@dataclass(frozen=True)
class ConsistencyRecord:
    image_id: str
    det_index: int
    ious: Tuple[float, ...]
    mu: float


@dataclass(frozen=True)
class RemovedGT:
    index: int
    label: LabeledBox
    reason: str = "no_intersecting_prediction"


@dataclass(frozen=True)
class AddedGT:
    label: LabeledBox
    det_index: int
    score: float
    mu: float


@dataclass(frozen=True)
class ReplacedBox:
    index: int
    old_box: BBox
    new_box: BBox
    iou: float
    mu: float
    old_class: int
    new_class: int


@dataclass(frozen=True)
class ClassFix:
    index: int
    old_class: int
    new_class: int
    mu: float


@dataclass
class ImageCorrections:
    image_id: str
    removed_false_gt: List[RemovedGT] = field(default_factory=list)
    added_missing_gt: List[AddedGT] = field(default_factory=list)
    replaced_noisy_boxes: List[ReplacedBox] = field(default_factory=list)
    corrected_classes: List[ClassFix] = field(default_factory=list)

    def is_empty(self) -> bool:
        return not (self.removed_false_gt or self.added_missing_gt or self.replaced_noisy_boxes or self.corrected_classes)


def _lb_dict(lb: LabeledBox) -> dict:
    return {"bbox": lb.box.to_list(), "class_id": lb.class_id}


def _lb(d) -> LabeledBox:
    return LabeledBox(BBox(*d["bbox"]), d["class_id"])


@dataclass
class CorrectionReport:
    images: List[ImageCorrections] = field(default_factory=list)

    def by_id(self) -> Dict[str, ImageCorrections]:
        return {c.image_id: c for c in self.images}

    def summary(self) -> dict:
        return {
            "images_touched": sum(1 for c in self.images if not c.is_empty()),
            "removed_false_gt": sum(len(c.removed_false_gt) for c in self.images),
            "added_missing_gt": sum(len(c.added_missing_gt) for c in self.images),
            "replaced_noisy_boxes": sum(len(c.replaced_noisy_boxes) for c in self.images),
            "corrected_classes": sum(len(c.corrected_classes) for c in self.images)
            + sum(1 for c in self.images for r in c.replaced_noisy_boxes if r.new_class != r.old_class),
        }

    def to_dict(self) -> dict:
        rows = []
        for c in self.images:
            if c.is_empty():
                continue
            rows.append(
                {
                    "image_id": c.image_id,
                    "removed_false_gt": [
                        {"index": r.index, "label": _lb_dict(r.label), "reason": r.reason} for r in c.removed_false_gt
                    ],
                    "added_missing_gt": [
                        {"label": _lb_dict(a.label), "det_index": a.det_index, "score": a.score, "mu": a.mu}
                        for a in c.added_missing_gt
                    ],
                    "replaced_noisy_boxes": [
                        {
                            "index": r.index,
                            "old_box": r.old_box.to_list(),
                            "new_box": r.new_box.to_list(),
                            "iou": r.iou,
                            "mu": r.mu,
                            "old_class": r.old_class,
                            "new_class": r.new_class,
                        }
                        for r in c.replaced_noisy_boxes
                    ],
                    "corrected_classes": [
                        {"index": f.index, "old_class": f.old_class, "new_class": f.new_class, "mu": f.mu}
                        for f in c.corrected_classes
                    ],
                }
            )
        return {"summary": self.summary(), "images": rows}

    @classmethod
    def from_dict(cls, d: dict) -> "CorrectionReport":
        out = []
        for r in d.get("images", []):
            out.append(
                ImageCorrections(
                    r["image_id"],
                    [RemovedGT(e["index"], _lb(e["label"]), e.get("reason", "")) for e in r.get("removed_false_gt", [])],
                    [AddedGT(_lb(e["label"]), e["det_index"], e["score"], e["mu"]) for e in r.get("added_missing_gt", [])],
                    [
                        ReplacedBox(
                            e["index"], BBox(*e["old_box"]), BBox(*e["new_box"]), e["iou"], e["mu"], e["old_class"], e["new_class"]
                        )
                        for e in r.get("replaced_noisy_boxes", [])
                    ],
                    [ClassFix(e["index"], e["old_class"], e["new_class"], e["mu"]) for e in r.get("corrected_classes", [])],
                )
            )
        return cls(out)


# ---------------------------------------------------------------------------
# consistency
# ---------------------------------------------------------------------------

def image_consistency(original: Sequence[Detection], variants: Sequence[Sequence[Detection]], match_iou: float = 0.5) -> np.ndarray:
    """Per-detection mean matched IoU across variants (already in the original frame)."""
    n = len(original)
    if not variants:
        raise ConfigError("consistency needs at least one augmented variant")
    if n == 0:
        return np.zeros(0)
    acc = np.zeros((n, len(variants)))
    for v, dets in enumerate(variants):
        m = match(original, dets, match_iou)
        for g, _, val in m.pairs:
            acc[g, v] = val
    return acc


def _to_original_frame(dset: DetectionSet, image_id: str) -> List[Detection]:
    t = inverse(dset.transform)
    return [Detection(apply_transform(t, d.box), d.class_id, d.score) for d in dset.get(image_id)]


def consistency(original: DetectionSet, augmented: Sequence[DetectionSet], cfg: GlcConfig = GlcConfig()) -> List[ConsistencyRecord]:
    """Consistency records for every original detection, in image then detection order."""
    if not augmented:
        raise ConfigError("consistency needs at least one augmented variant")
    for a in augmented:
        missing = [iid for iid in original.image_ids if iid not in a.per_image]
        if missing:
            raise DataError(f"variant {a.variant!r} lacks images present in the original set, e.g. {missing[0]!r}")
    out = []
    for iid in original.image_ids:
        dets = original.get(iid)
        ious = image_consistency(dets, [_to_original_frame(a, iid) for a in augmented], cfg.match_iou)
        for i in range(len(dets)):
            out.append(ConsistencyRecord(iid, i, tuple(float(v) for v in ious[i]), float(ious[i].mean())))
    return out


# ---------------------------------------------------------------------------
# the three error cases
# ---------------------------------------------------------------------------

def detect_false_gt(gt: Sequence[LabeledBox], preds: Sequence[Detection], cfg: GlcConfig = GlcConfig()) -> List[int]:
    """Indices of active labels that intersect no prediction scored >= ``delta_floor``."""
    idx = [i for i, lb in enumerate(gt) if not lb.ignore]
    if not idx:
        return []
    strong = [p for p in preds if p.score >= cfg.delta_floor]
    if not strong:
        return idx
    inter = _kernels.pairwise_intersection(boxes_array([gt[i] for i in idx]), boxes_array(strong))
    return [i for i, row in zip(idx, inter) if not np.any(row > 0.0)]


def correct_noisy_gt(gt: Sequence[LabeledBox], mu: np.ndarray, preds: Sequence[Detection], cfg: GlcConfig = GlcConfig(), skip=()):
    """Box replacements and class fixes from consistent matched predictions.

    Args:
        gt: labels of one image.
        mu: consistency per prediction.
        preds: original-frame predictions of the image.
        skip: label indices excluded from matching (already removed).

    Returns:
        (replacements, class_fixes, matched_pred_indices)
    """
    active = [i for i, lb in enumerate(gt) if not lb.ignore and i not in skip]
    cand = [j for j, p in enumerate(preds) if p.score >= cfg.delta_s]
    m = match([gt[i] for i in active], [preds[j] for j in cand], cfg.match_iou)
    replaced, fixes, used = [], [], []
    for g, p, val in m.pairs:
        gi, pj = active[g], cand[p]
        used.append(pj)
        lb, pred = gt[gi], preds[pj]
        if mu[pj] <= cfg.gamma_c:
            continue
        new_class = pred.class_id if cfg.correct_classes else lb.class_id
        if val < cfg.gamma_o:
            replaced.append(ReplacedBox(gi, lb.box, pred.box, val, float(mu[pj]), lb.class_id, new_class))
        elif new_class != lb.class_id:
            fixes.append(ClassFix(gi, lb.class_id, new_class, float(mu[pj])))
    return replaced, fixes, used


def detect_missing_gt(gt: Sequence[LabeledBox], mu: np.ndarray, preds: Sequence[Detection], cfg: GlcConfig = GlcConfig(), represented=()) -> List[AddedGT]:
    """Consistent predictions with no counterpart among the labels.

    A prediction is promoted when its score is at least ``delta_s``, its
    consistency exceeds ``gamma_c`` and its IoU with every label (and every box
    in ``represented``) stays below ``match_iou``. Candidates are visited by
    descending score; one overlapping a higher-scored candidate at
    ``match_iou`` is treated as a duplicate. Duplicate suppression ignores
    consistency, so raising ``gamma_c`` can only shrink the promoted set.
    """
    cand = [j for j, p in enumerate(preds) if p.score >= cfg.delta_s]
    if not cand:
        return []
    cand.sort(key=lambda j: (-preds[j].score, j))
    ref = [lb.box for lb in gt] + list(represented)
    cb = boxes_array([preds[j] for j in cand])
    if ref:
        blocked = (_kernels.pairwise_iou(cb, boxes_array(ref)) >= cfg.match_iou).any(axis=1)
    else:
        blocked = np.zeros(len(cand), dtype=bool)
    self_iou = _kernels.pairwise_iou(cb, cb)
    added = []
    kept = []
    for a, j in enumerate(cand):
        if blocked[a]:
            continue
        if any(self_iou[a, b] >= cfg.match_iou for b in kept):
            continue
        kept.append(a)
        if mu[j] > cfg.gamma_c:
            p = preds[j]
            added.append(AddedGT(LabeledBox(p.box, p.class_id), j, p.score, float(mu[j])))
    return added


def correct_image(gt: Sequence[LabeledBox], preds: Sequence[Detection], variants: Sequence[Sequence[Detection]], cfg: GlcConfig, image_id: str = "") -> ImageCorrections:
    mu = image_consistency(preds, variants, cfg.match_iou) if preds else np.zeros(0)
    mu = mu.mean(axis=1) if mu.size else np.zeros(len(preds))
    out = ImageCorrections(image_id)
    false_idx = detect_false_gt(gt, preds, cfg)
    out.removed_false_gt = [RemovedGT(i, gt[i]) for i in false_idx]
    replaced, fixes, used = correct_noisy_gt(gt, mu, preds, cfg, skip=set(false_idx))
    out.replaced_noisy_boxes = replaced
    out.corrected_classes = fixes
    removed = set(false_idx)
    surviving = [lb for i, lb in enumerate(gt) if i not in removed]
    out.added_missing_gt = detect_missing_gt(surviving, mu, preds, cfg, represented=[preds[j].box for j in used])
    return out


def run_glc(gt: AnnotationSet, original: DetectionSet, augmented: Sequence[DetectionSet], cfg: GlcConfig = GlcConfig()) -> CorrectionReport:
    """Compute corrections for every annotated image covered by ``original``.

    Images missing from the original predictions are left alone.
    """
    if not augmented:
        raise ConfigError("GLC needs at least one augmented prediction set")
    for a in augmented:
        missing = [iid for iid in original.image_ids if iid not in a.per_image]
        if missing:
            raise DataError(f"variant {a.variant!r} lacks images present in the original set, e.g. {missing[0]!r}")
    report = CorrectionReport()
    covered = set(original.image_ids)
    for img in gt.images:
        if img.image_id not in covered:
            continue
        preds = list(original.get(img.image_id))
        variants = [_to_original_frame(a, img.image_id) for a in augmented]
        report.images.append(correct_image(img.labels, preds, variants, cfg, img.image_id))
    return report


def apply_corrections(dataset: AnnotationSet, report: CorrectionReport) -> AnnotationSet:
    """Apply a report; returns a new set with removals, replacements and additions."""
    fixes = report.by_id()
    out = []
    for img in dataset.images:
        c = fixes.get(img.image_id)
        if c is None or c.is_empty():
            out.append(img)
            continue
        labels = list(img.labels)
        n = len(labels)
        for r in c.replaced_noisy_boxes:
            if r.index >= n:
                raise DataError(f"image {img.image_id}: correction index {r.index} out of range")
            labels[r.index] = LabeledBox(r.new_box, r.new_class)
        for f in c.corrected_classes:
            if f.index >= n:
                raise DataError(f"image {img.image_id}: correction index {f.index} out of range")
            labels[f.index] = LabeledBox(labels[f.index].box, f.new_class)
        removed = {r.index for r in c.removed_false_gt}
        labels = [lb for i, lb in enumerate(labels) if i not in removed]
        labels.extend(a.label for a in c.added_missing_gt)
        out.append(type(img)(img.image_id, img.file_name, img.width, img.height, tuple(labels), img.is_collage))
    return dataset.with_images(out)
