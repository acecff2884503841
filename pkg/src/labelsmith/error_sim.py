"""
Synthetic ground-truth errors with a full ledger.

Four error kinds are injected, in this order: dropped boxes, box-dimension
noise, class flips, and false boxes. The ledger records every change so that
:func:`restore` rebuilds the clean set exactly.

Index convention: a corrupted image's labels are the surviving original
labels in their original order, followed by the injected false boxes. Ledger
indices for perturbations, flips and false boxes refer to that corrupted list;
indices of dropped boxes refer to the clean list.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .core import BBox, LabeledBox, intersects
from .dataset_io import AnnotationSet
from .exceptions import ConfigError, DataError

logger = logging.getLogger(__name__)

MAX_PLACEMENT_ATTEMPTS = 100
MIN_BOX_PX = 1.0


@dataclass(frozen=True)
class ErrorSpec:
    rho_drop: float = 0.0
    false_per_image: int = 0
    false_w_range: Tuple[float, float] = (10.0, 100.0)
    false_h_range: Tuple[float, float] = (10.0, 100.0)
    noise_image_frac: float = 0.0
    eps_b: float = 0.0
    class_flip_frac: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("rho_drop", "noise_image_frac", "class_flip_frac"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.eps_b < 0:
            raise ConfigError("eps_b must be non-negative")
        if self.false_per_image < 0 or int(self.false_per_image) != self.false_per_image:
            raise ConfigError("false_per_image must be a non-negative integer")
        for name in ("false_w_range", "false_h_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ConfigError(f"{name} must satisfy 0 < min <= max, got {(lo, hi)}")
            object.__setattr__(self, name, (float(lo), float(hi)))
        object.__setattr__(self, "false_per_image", int(self.false_per_image))

    def to_dict(self) -> dict:
        return {
            "rho_drop": self.rho_drop,
            "false_per_image": self.false_per_image,
            "false_w_range": list(self.false_w_range),
            "false_h_range": list(self.false_h_range),
            "noise_image_frac": self.noise_image_frac,
            "eps_b": self.eps_b,
            "class_flip_frac": self.class_flip_frac,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ErrorSpec":
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown error-spec fields: {sorted(unknown)}")
        kw = dict(d)
        for name in ("false_w_range", "false_h_range"):
            if name in kw:
                kw[name] = tuple(kw[name])
        return cls(**kw)


def level_preset(level: int, seed: int = 0) -> ErrorSpec:
    """Error presets: level 1 (moderate) and level 2 (severe)."""
    if level == 1:
        return ErrorSpec(0.20, 1, (10.0, 100.0), (10.0, 100.0), 0.20, 0.1, 0.0, seed)
    if level == 2:
        return ErrorSpec(0.50, 5, (10.0, 100.0), (10.0, 100.0), 0.20, 0.2, 0.0, seed)
    raise ConfigError(f"unknown error level {level!r}; expected 1 or 2")


@dataclass
class InjectionLedger:
    dropped: List[Tuple[str, int, LabeledBox]] = field(default_factory=list)
    added_false: List[Tuple[str, int, LabeledBox]] = field(default_factory=list)
    perturbed: List[Tuple[str, int, BBox, BBox]] = field(default_factory=list)
    class_flipped: List[Tuple[str, int, int, int]] = field(default_factory=list)
    skipped_false: List[Tuple[str, int]] = field(default_factory=list)

    def is_empty(self) -> bool:
        return not (self.dropped or self.added_false or self.perturbed or self.class_flipped)

    def to_dict(self) -> dict:
        def lb(x: LabeledBox):
            d = {"bbox": x.box.to_list(), "class_id": x.class_id}
            if x.ignore:
                d["ignore"] = True
            return d

        return {
            "dropped": [{"image_id": i, "index": k, "label": lb(b)} for i, k, b in self.dropped],
            "added_false": [{"image_id": i, "index": k, "label": lb(b)} for i, k, b in self.added_false],
            "perturbed": [
                {"image_id": i, "index": k, "original": o.to_list(), "perturbed": p.to_list()}
                for i, k, o, p in self.perturbed
            ],
            "class_flipped": [
                {"image_id": i, "index": k, "old_class": a, "new_class": b} for i, k, a, b in self.class_flipped
            ],
            "skipped_false": [{"image_id": i, "count": n} for i, n in self.skipped_false],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InjectionLedger":
        def lb(x):
            return LabeledBox(BBox(*x["bbox"]), x["class_id"], bool(x.get("ignore", False)))

        return cls(
            [(e["image_id"], e["index"], lb(e["label"])) for e in d.get("dropped", [])],
            [(e["image_id"], e["index"], lb(e["label"])) for e in d.get("added_false", [])],
            [(e["image_id"], e["index"], BBox(*e["original"]), BBox(*e["perturbed"])) for e in d.get("perturbed", [])],
            [(e["image_id"], e["index"], e["old_class"], e["new_class"]) for e in d.get("class_flipped", [])],
            [(e["image_id"], e["count"]) for e in d.get("skipped_false", [])],
        )


def _frac_count(frac: float, n: int) -> int:
    # tolerance absorbs products such as 0.2 * 1000 = 200.00000000000003
    return int(math.floor(frac * n + 1e-9))


def perturb_box(b: BBox, eps_b: float, signs, img_w: float, img_h: float) -> BBox:
    """Scale width/height by ``1 +- eps_b`` and shift by half the change.

    Args:
        signs: four values in {-1, +1} for (w, h, x, y).
    """
    sw, sh, sx, sy = signs
    dw = sw * eps_b * b.w
    dh = sh * eps_b * b.h
    x = b.x + sx * dw / 2.0
    y = b.y + sy * dh / 2.0
    x1, y1 = max(0.0, x), max(0.0, y)
    x2, y2 = min(float(img_w), x + b.w + dw), min(float(img_h), y + b.h + dh)
    if x2 - x1 < MIN_BOX_PX:
        x1 = min(x1, img_w - MIN_BOX_PX)
        x2 = x1 + MIN_BOX_PX
    if y2 - y1 < MIN_BOX_PX:
        y1 = min(y1, img_h - MIN_BOX_PX)
        y2 = y1 + MIN_BOX_PX
    return BBox.from_corners(x1, y1, x2, y2)


def inject(dataset: AnnotationSet, spec: ErrorSpec):
    """Corrupt ``dataset`` according to ``spec``.

    Returns:
        (corrupted AnnotationSet, InjectionLedger)
    """
    rng = np.random.default_rng(spec.seed)
    ledger = InjectionLedger()
    images = list(dataset.images)
    k = len(dataset.classes)

    # drop: uniform over all active boxes of the set
    slots = [(ii, bi) for ii, img in enumerate(images) for bi, lb in enumerate(img.labels) if not lb.ignore]
    n_drop = _frac_count(spec.rho_drop, len(slots))
    drop = set()
    if n_drop:
        for s in sorted(rng.choice(len(slots), size=n_drop, replace=False)):
            drop.add(slots[s])
    work = []
    for ii, img in enumerate(images):
        kept = []
        for bi, lb in enumerate(img.labels):
            if (ii, bi) in drop:
                ledger.dropped.append((img.image_id, bi, lb))
            else:
                kept.append(lb)
        work.append(kept)

    # box noise on a sample of images; every active box in them
    n_noise = _frac_count(spec.noise_image_frac, len(images))
    if n_noise and spec.eps_b > 0:
        for ii in sorted(rng.choice(len(images), size=n_noise, replace=False)):
            img = images[ii]
            for bi, lb in enumerate(work[ii]):
                if lb.ignore:
                    continue
                signs = rng.choice((-1.0, 1.0), size=4)
                nb = perturb_box(lb.box, spec.eps_b, signs, img.width, img.height)
                work[ii][bi] = LabeledBox(nb, lb.class_id)
                ledger.perturbed.append((img.image_id, bi, lb.box, nb))

    # class flips over surviving active boxes
    slots = [(ii, bi) for ii in range(len(images)) for bi, lb in enumerate(work[ii]) if not lb.ignore]
    n_flip = _frac_count(spec.class_flip_frac, len(slots))
    if n_flip:
        if k < 2:
            raise ConfigError("class flips need at least two classes")
        for s in sorted(rng.choice(len(slots), size=n_flip, replace=False)):
            ii, bi = slots[s]
            lb = work[ii][bi]
            new = int(rng.integers(0, k - 1))
            if new >= lb.class_id:
                new += 1
            work[ii][bi] = LabeledBox(lb.box, new)
            ledger.class_flipped.append((images[ii].image_id, bi, lb.class_id, new))

    # false boxes avoiding every clean and current box of the image
    if spec.false_per_image:
        if k < 1:
            raise ConfigError("false boxes need a non-empty class table")
        for ii, img in enumerate(images):
            blockers = [lb.box for lb in img.labels] + [lb.box for lb in work[ii]]
            skipped = 0
            for _ in range(spec.false_per_image):
                placed = None
                for _attempt in range(MAX_PLACEMENT_ATTEMPTS):
                    w = min(float(rng.uniform(*spec.false_w_range)), float(img.width))
                    h = min(float(rng.uniform(*spec.false_h_range)), float(img.height))
                    x = float(rng.uniform(0.0, img.width - w))
                    y = float(rng.uniform(0.0, img.height - h))
                    cand = BBox(x, y, w, h)
                    if not any(intersects(cand, b) for b in blockers):
                        placed = cand
                        break
                if placed is None:
                    skipped += 1
                    continue
                lb = LabeledBox(placed, int(rng.integers(0, k)))
                ledger.added_false.append((img.image_id, len(work[ii]), lb))
                work[ii].append(lb)
                blockers.append(placed)
            if skipped:
                logger.warning("image %s: could not place %d false boxes", img.image_id, skipped)
                ledger.skipped_false.append((img.image_id, skipped))

    out = [
        type(img)(img.image_id, img.file_name, img.width, img.height, tuple(work[ii]), img.is_collage)
        for ii, img in enumerate(images)
    ]
    return dataset.with_images(out), ledger


def restore(corrupted: AnnotationSet, ledger: InjectionLedger) -> AnnotationSet:
    """Undo :func:`inject` exactly."""
    work = {img.image_id: list(img.labels) for img in corrupted.images}

    def labels_of(iid):
        try:
            return work[iid]
        except KeyError:
            raise DataError(f"ledger refers to unknown image {iid!r}") from None

    by_image_false = {}
    for iid, idx, lb in ledger.added_false:
        by_image_false.setdefault(iid, []).append((idx, lb))
    for iid, entries in by_image_false.items():
        labels = labels_of(iid)
        for idx, lb in sorted(entries, reverse=True):
            if idx >= len(labels) or labels[idx] != lb:
                raise DataError(f"image {iid}: false box {idx} does not match the ledger")
            del labels[idx]
    for iid, idx, old, new in reversed(ledger.class_flipped):
        labels = labels_of(iid)
        if labels[idx].class_id != new:
            raise DataError(f"image {iid}: class flip at {idx} does not match the ledger")
        labels[idx] = LabeledBox(labels[idx].box, old, labels[idx].ignore)
    for iid, idx, orig, pert in reversed(ledger.perturbed):
        labels = labels_of(iid)
        if labels[idx].box != pert:
            raise DataError(f"image {iid}: perturbed box {idx} does not match the ledger")
        labels[idx] = LabeledBox(orig, labels[idx].class_id, labels[idx].ignore)
    by_image_drop = {}
    for iid, idx, lb in ledger.dropped:
        by_image_drop.setdefault(iid, []).append((idx, lb))
    for iid, entries in by_image_drop.items():
        labels = labels_of(iid)
        for idx, lb in sorted(entries, key=lambda t: t[0]):
            labels.insert(idx, lb)
    out = [
        type(img)(img.image_id, img.file_name, img.width, img.height, tuple(work[img.image_id]), img.is_collage)
        for img in corrupted.images
    ]
    return corrupted.with_images(out)
