"""
Pseudo-label selection.

Per pseudo-labeled image:

    S_i = n_i(delta_s) / n_i(alpha)
    C_i = mean over distinct predicted classes k of (1 - f_k / N)
    D_i = (1 - beta) * S_i + beta * C_i

where ``n_i(t)`` counts detections scored at least ``t``, and ``f_k`` and
``N`` are class and total counts over the alpha-filtered pseudo set. Images
with the lowest ``D_i`` are removed.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from .class_stats import ClassStats, class_frequencies
from .core import Detection, match
from .dataset_io import AnnotationSet, DetectionSet
from .exceptions import ConfigError, DataError


@dataclass(frozen=True)
class PlsConfig:
    delta_s: float = 0.4
    alpha: float = 0.1
    beta: float = 0.1
    removal_frac: float = 0.2

    def __post_init__(self):
        if not (0.0 <= self.alpha <= self.delta_s <= 1.0):
            raise ConfigError(f"need 0 <= alpha <= delta_s <= 1, got alpha={self.alpha}, delta_s={self.delta_s}")
        if not (0.0 <= self.beta <= 1.0):
            raise ConfigError(f"beta must be in [0, 1], got {self.beta}")
        if not (0.0 <= self.removal_frac <= 1.0):
            raise ConfigError(f"removal_frac must be in [0, 1], got {self.removal_frac}")

    def to_dict(self):
        return {"delta_s": self.delta_s, "alpha": self.alpha, "beta": self.beta, "removal_frac": self.removal_frac}


@dataclass(frozen=True)
class ImageSelection:
    image_id: str
    n_at_delta: int
    n_at_alpha: int
    S: float
    C: float
    D: float
    mean_score: float
    kept: bool


@dataclass
class SelectionReport:
    config: PlsConfig
    images: List[ImageSelection] = field(default_factory=list)
    kept_class_counts: Dict[int, int] = field(default_factory=dict)
    removed_class_counts: Dict[int, int] = field(default_factory=dict)

    @property
    def kept_ids(self) -> List[str]:
        return [r.image_id for r in self.images if r.kept]

    @property
    def removed_ids(self) -> List[str]:
        return [r.image_id for r in self.images if not r.kept]

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "summary": {
                "kept": len(self.kept_ids),
                "removed": len(self.removed_ids),
                "kept_class_counts": {str(k): v for k, v in sorted(self.kept_class_counts.items())},
                "removed_class_counts": {str(k): v for k, v in sorted(self.removed_class_counts.items())},
            },
            "images": [
                {
                    "image_id": r.image_id,
                    "n_at_delta": r.n_at_delta,
                    "n_at_alpha": r.n_at_alpha,
                    "S": r.S,
                    "C": r.C,
                    "D": r.D,
                    "mean_score": r.mean_score,
                    "kept": r.kept,
                }
                for r in self.images
            ],
        }


def filter_by_score(dets: DetectionSet, delta_s: float) -> DetectionSet:
    """Keep detections with ``score >= delta_s``; order and image list are preserved."""
    per = {iid: tuple(d for d in ds if d.score >= delta_s) for iid, ds in dets.per_image.items()}
    return DetectionSet(per, dets.variant, dets.transform, dets.classes)


def count_at(dets: Sequence[Detection], thresh: float) -> int:
    return sum(1 for d in dets if d.score >= thresh)


def score_metric(dets: Sequence[Detection], delta_s: float, alpha: float = 0.1) -> float:
    """Share of reference-level detections that survive ``delta_s``; 0 for an empty image."""
    if alpha > delta_s:
        raise ConfigError("alpha must not exceed delta_s")
    n_ref = count_at(dets, alpha)
    if n_ref == 0:
        return 0.0
    return count_at(dets, delta_s) / n_ref


def class_metric(dets: Sequence[Detection], stats: ClassStats) -> float:
    """Class-rarity regularizer of one image.

    Args:
        dets: the image's detections, already filtered at the reference level.
        stats: class counts over the reference-filtered pseudo set.
    """
    classes = sorted({d.class_id for d in dets})
    if not classes or stats.total == 0:
        return 0.0
    total = 0.0
    for k in classes:
        total += 1.0 - stats.freq.get(k, 0) / stats.total
    return total / len(classes)


def d_metric(S: float, C: float, beta: float) -> float:
    return (1.0 - beta) * S + beta * C


def mean_score(dets: Sequence[Detection]) -> float:
    if not dets:
        return 0.0
    return float(np.mean([d.score for d in dets]))


def _kept_count(removal_frac: float, n: int) -> int:
    # tolerance absorbs products such as (1 - 0.3) * 10 = 7.000000000000001
    return min(n, int(math.ceil((1.0 - removal_frac) * n - 1e-9)))


def image_metrics(dets: DetectionSet, cfg: PlsConfig) -> List[ImageSelection]:
    """S/C/D and baselines per image, all marked kept."""
    ref = filter_by_score(dets, cfg.alpha)
    stats = class_frequencies(ref)
    rows = []
    for iid, ds in dets.per_image.items():
        ref_ds = ref.per_image[iid]
        S = score_metric(ds, cfg.delta_s, cfg.alpha)
        C = class_metric(ref_ds, stats)
        rows.append(
            ImageSelection(
                iid,
                count_at(ds, cfg.delta_s),
                len(ref_ds),
                S,
                C,
                d_metric(S, C, cfg.beta),
                mean_score(ref_ds),
                True,
            )
        )
    return rows


def select(dets: DetectionSet, cfg: PlsConfig = PlsConfig()) -> SelectionReport:
    """Rank images by D ascending (ties by image_id) and drop the lowest share."""
    rows = image_metrics(dets, cfg)
    n = len(rows)
    n_keep = _kept_count(cfg.removal_frac, n)
    ranked = sorted(range(n), key=lambda i: (rows[i].D, rows[i].image_id))
    removed = set(ranked[: n - n_keep])
    final = []
    kept_counts: Dict[int, int] = {}
    removed_counts: Dict[int, int] = {}
    for i, r in enumerate(rows):
        keep = i not in removed
        final.append(ImageSelection(r.image_id, r.n_at_delta, r.n_at_alpha, r.S, r.C, r.D, r.mean_score, keep))
        target = kept_counts if keep else removed_counts
        for d in dets.per_image[r.image_id]:
            if d.score >= cfg.delta_s:
                target[d.class_id] = target.get(d.class_id, 0) + 1
    return SelectionReport(cfg, final, kept_counts, removed_counts)


def selected_detections(dets: DetectionSet, report: SelectionReport) -> DetectionSet:
    """Pseudo-labels handed to training: kept images, filtered at delta_s."""
    kept = set(report.kept_ids)
    filtered = filter_by_score(dets, report.config.delta_s)
    per = {iid: ds for iid, ds in filtered.per_image.items() if iid in kept}
    return DetectionSet(per, dets.variant, dets.transform, dets.classes)


def recommend_threshold(dets: DetectionSet, gt: AnnotationSet, match_iou: float = 0.5, require_class: bool = True) -> float:
    """Mean score of detections matched to ground truth on a validation set.

    Matching is the greedy IoU matcher; with ``require_class`` only pairs whose
    classes agree count.
    """
    scores = []
    for img in gt.images:
        preds = dets.get(img.image_id)
        labels = img.active_labels
        m = match(labels, preds, match_iou)
        for g, p, _ in m.pairs:
            if require_class and labels[g].class_id != preds[p].class_id:
                continue
            scores.append(preds[p].score)
    if not scores:
        raise DataError("no matched detections")
    return float(np.mean(scores))
