"""
Pseudo-label quality against reference ground truth, and ROC analysis of
per-image selection metrics.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .core import match
from .dataset_io import AnnotationSet, DetectionSet
from .exceptions import ConfigError, DataError
from .pls import PlsConfig, filter_by_score, image_metrics


@dataclass(frozen=True)
class ImageQuality:
    image_id: str
    n_gt: int
    n_pred: int
    n_matched: int
    n_class_agree: int
    iou_sum: float

    @property
    def mdr(self) -> Optional[float]:
        return (self.n_gt - self.n_matched) / self.n_gt if self.n_gt else None

    @property
    def udr(self) -> Optional[float]:
        return (self.n_pred - self.n_matched) / self.n_pred if self.n_pred else None


@dataclass
class QualityReport:
    match_iou: float
    images: List[ImageQuality] = field(default_factory=list)

    def _tot(self, name):
        return sum(getattr(r, name) for r in self.images)

    @property
    def MDR(self) -> Optional[float]:
        n = self._tot("n_gt")
        return (n - self._tot("n_matched")) / n if n else None

    @property
    def UDR(self) -> Optional[float]:
        n = self._tot("n_pred")
        return (n - self._tot("n_matched")) / n if n else None

    @property
    def mACC(self) -> Optional[float]:
        n = self._tot("n_matched")
        return self._tot("n_class_agree") / n if n else None

    @property
    def mIoU(self) -> Optional[float]:
        n = self._tot("n_matched")
        return self._tot("iou_sum") / n if n else None

    def to_dict(self) -> dict:
        out = {"match_iou": self.match_iou}
        # undefined aggregates are left out rather than written as null
        for k in ("MDR", "UDR", "mACC", "mIoU"):
            v = getattr(self, k)
            if v is not None:
                out[k] = v
        out["counts"] = {
            "gt": self._tot("n_gt"),
            "pred": self._tot("n_pred"),
            "matched": self._tot("n_matched"),
            "class_agree": self._tot("n_class_agree"),
        }
        rows = []
        for r in self.images:
            row = {
                "image_id": r.image_id,
                "n_gt": r.n_gt,
                "n_pred": r.n_pred,
                "n_matched": r.n_matched,
                "n_class_agree": r.n_class_agree,
            }
            if r.mdr is not None:
                row["MDR"] = r.mdr
            if r.udr is not None:
                row["UDR"] = r.udr
            rows.append(row)
        out["images"] = rows
        return out


@dataclass(frozen=True)
class RocResult:
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    auc: float

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            # the leading "nothing positive" point has no finite threshold
            "thresholds": [float(t) if np.isfinite(t) else None for t in self.thresholds],
            "tpr": [float(t) for t in self.tpr],
            "fpr": [float(f) for f in self.fpr],
        }


def image_quality(image_id, labels, preds, match_iou: float = 0.5) -> ImageQuality:
    labels = [lb for lb in labels if not lb.ignore]
    m = match(labels, preds, match_iou)
    agree = sum(1 for g, p, _ in m.pairs if labels[g].class_id == preds[p].class_id)
    return ImageQuality(image_id, len(labels), len(preds), len(m.pairs), agree, float(sum(v for _, _, v in m.pairs)))


def quality(preds: DetectionSet, gt: AnnotationSet, match_iou: float = 0.5) -> QualityReport:
    """Class-agnostic matching per image, micro-averaged over boxes.

    MDR is the share of GT boxes left unmatched, UDR the share of predictions
    left unmatched; mACC and mIoU are taken over matched pairs.
    """
    rep = QualityReport(match_iou)
    for img in gt.images:
        rep.images.append(image_quality(img.image_id, img.labels, preds.get(img.image_id), match_iou))
    return rep


def mdr_labels(preds: DetectionSet, gt: AnnotationSet, delta_s: float, mdr_cut: float = 0.5, match_iou: float = 0.5) -> Dict[str, int]:
    """1 for images whose MDR after filtering at ``delta_s`` is strictly above ``mdr_cut``.

    Images without GT boxes miss nothing and get 0.
    """
    rep = quality(filter_by_score(preds, delta_s), gt, match_iou)
    return {r.image_id: int(r.mdr is not None and r.mdr > mdr_cut) for r in rep.images}


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> RocResult:
    """ROC where a LOW score predicts the positive class.

    Thresholds are the distinct score values in ascending order; an image is
    called positive when its score is at or below the threshold, so tied
    scores enter together. AUC is the trapezoidal area.
    """
    s = -np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    if s.shape != y.shape:
        raise DataError("scores and labels differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise DataError("labels must be 0/1")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("degenerate labels: need both classes")
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    y_sorted = y[order]
    # last index of every run of equal scores
    ends = np.r_[np.nonzero(np.diff(s_sorted))[0], s_sorted.size - 1]
    tp = np.cumsum(y_sorted)[ends]
    fp = (ends + 1) - tp
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thresholds = np.r_[-np.inf, -s_sorted[ends]]
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocResult(thresholds, tpr, fpr, auc)


def compare_metrics(
    preds: DetectionSet,
    gt: AnnotationSet,
    delta_s: float = 0.9,
    alpha: float = 0.1,
    betas: Sequence[float] = (0.0, 0.1, 0.25),
    mdr_cut: float = 0.5,
    match_iou: float = 0.5,
) -> Dict[str, RocResult]:
    """AUC of each per-image metric at flagging images with MDR above ``mdr_cut``.

    Labels come from :func:`mdr_labels` at ``delta_s``; metrics are S_i, D_i
    for each beta, mean score per image and detection count per image (both
    at ``alpha``). Only images present in ``gt`` are scored.
    """
    labels = mdr_labels(preds, gt, delta_s, mdr_cut, match_iou)
    ids = [img.image_id for img in gt.images]
    per = {iid: preds.get(iid) for iid in ids}
    sub = DetectionSet(per, preds.variant, preds.transform, preds.classes)
    y = [labels[i] for i in ids]
    out = {}
    base = {r.image_id: r for r in image_metrics(sub, PlsConfig(delta_s=delta_s, alpha=alpha, beta=0.0, removal_frac=0.0))}
    out["S"] = roc_auc([base[i].S for i in ids], y)
    for b in betas:
        if not (0.0 <= b <= 1.0):
            raise ConfigError(f"beta must be in [0, 1], got {b}")
        rows = {r.image_id: r for r in image_metrics(sub, PlsConfig(delta_s=delta_s, alpha=alpha, beta=b, removal_frac=0.0))}
        out[f"D(beta={b:g})"] = roc_auc([rows[i].D for i in ids], y)
    out["mean_score"] = roc_auc([base[i].mean_score for i in ids], y)
    out["n_detections"] = roc_auc([base[i].n_at_alpha for i in ids], y)
    return out
