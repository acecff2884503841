"""
Class frequencies and the per-image rarity score.

An image's raw score is the mean, over the distinct classes it contains, of
``1 / ln(max(f_k, log_floor))`` where ``f_k`` counts the boxes of class ``k``
in the whole set. Raw scores are then mapped linearly onto ``[1, gamma_f]``.
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Union

import numpy as np

from .core import ImageRecord
from .dataset_io import AnnotationSet, DetectionSet, save_weights
from .exceptions import ConfigError, DataError


@dataclass(frozen=True)
class ClassStats:
    freq: Dict[int, int]
    total: int

    def to_dict(self, classes=()) -> dict:
        rows = []
        for k, f in sorted(self.freq.items()):
            row = {"class_id": k, "count": f}
            if k < len(classes):
                row["name"] = classes[k]
            rows.append(row)
        return {"total": self.total, "classes": rows}


@dataclass(frozen=True)
class ImageScore:
    image_id: str
    raw_F: float
    scaled_F: float


def class_frequencies(dataset: Union[AnnotationSet, DetectionSet]) -> ClassStats:
    """Count boxes per class; ignore-flagged regions are skipped."""
    if isinstance(dataset, AnnotationSet):
        freq = {k: 0 for k in range(len(dataset.classes))}
        for img in dataset.images:
            for lb in img.active_labels:
                freq[lb.class_id] += 1
    else:
        freq = {k: 0 for k in range(len(dataset.classes))}
        for dets in dataset.per_image.values():
            for d in dets:
                freq[d.class_id] = freq.get(d.class_id, 0) + 1
    return ClassStats(freq, sum(freq.values()))


def _present_classes(img) -> List[int]:
    if isinstance(img, ImageRecord):
        items = img.active_labels
    else:
        items = img
    return sorted({it.class_id for it in items})


def image_score(img, stats: ClassStats, log_floor: float = 2) -> float:
    """Raw rarity score of one image.

    Args:
        img: an ImageRecord, or any sequence of objects with ``class_id``.
        stats: frequencies over the reference set.
        log_floor: counts below this are raised to it before the log, keeping
            the term finite for classes seen once.

    Returns:
        Mean of ``1/ln(max(f_k, log_floor))`` over distinct classes; 0 for an
        image without boxes.
    """
    if log_floor <= 1:
        raise ConfigError("log_floor must exceed 1")
    classes = _present_classes(img)
    if not classes:
        return 0.0
    total = 0.0
    for k in classes:
        if k not in stats.freq:
            raise DataError(f"class {k} missing from class statistics")
        total += 1.0 / math.log(max(stats.freq[k], log_floor))
    return total / len(classes)


def scale_scores(scores: Sequence[float], gamma_f: float) -> List[float]:
    """Map scores linearly so the minimum lands on 1 and the maximum on ``gamma_f``."""
    if not gamma_f > 1:
        raise ConfigError(f"gamma_f must be > 1, got {gamma_f}")
    arr = np.asarray(scores, dtype=np.float64)
    if arr.size == 0:
        raise ConfigError("scale_scores needs at least one score")
    lo, hi = arr.min(), arr.max()
    if hi == lo:
        return [1.0] * arr.size
    return list(1.0 + (arr - lo) / (hi - lo) * (gamma_f - 1.0))


def image_scores(dataset: AnnotationSet, gamma_f: float, stats: ClassStats = None, log_floor: float = 2) -> List[ImageScore]:
    if stats is None:
        stats = class_frequencies(dataset)
    raw = [image_score(img, stats, log_floor) for img in dataset.images]
    if not raw:
        return []
    scaled = scale_scores(raw, gamma_f)
    return [ImageScore(img.image_id, r, s) for img, r, s in zip(dataset.images, raw, scaled)]


def export_weights(dataset: AnnotationSet, gamma_f: float, path=None) -> Dict[str, float]:
    """Per-image weights (scaled scores) for a re-weighting baseline.

    Writes a weight file when ``path`` is given.
    """
    weights = {s.image_id: s.scaled_F for s in image_scores(dataset, gamma_f)}
    if path is not None:
        save_weights(weights, path, gamma_f=gamma_f)
    return weights
