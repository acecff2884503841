"""
Synthetic scenes and a noisy synthetic detector with known error rates.

Scenes are non-overlapping, class-colored rectangles on black backgrounds.
The detector misses, jitters, scores and confuses boxes from explicit
probability models, and records every decision in a truth ledger so tests can
compare measured metrics against the generating process.
"""

import colorsys
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .core import HFLIP, IDENTITY, BBox, BoxTransform, Detection, ImageRecord, LabeledBox, apply_transform, iou
from .dataset_io import AnnotationSet, DetectionSet
from .exceptions import ConfigError

MAX_ATTEMPTS = 100
# variants produced by default; photometric ones keep the original frame
DEFAULT_VARIANTS = ("original", "hflip", "blur", "noise")


@dataclass(frozen=True)
class SceneSpec:
    n_images: int = 100
    image_w: int = 256
    image_h: int = 128
    n_classes: int = 5
    # power-law exponent s (weight of class k is (k + 1) ** -s) or explicit weights
    class_weights: Union[float, Tuple[float, ...]] = 1.0
    boxes_per_image: Tuple[int, int] = (1, 6)
    box_size: Tuple[int, int] = (12, 40)
    margin: int = 8
    gap: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.n_images < 0 or self.image_w <= 0 or self.image_h <= 0 or self.n_classes < 1:
            raise ConfigError("invalid scene dimensions")
        lo, hi = self.boxes_per_image
        if not (0 <= lo <= hi):
            raise ConfigError("boxes_per_image must satisfy 0 <= min <= max")
        lo, hi = self.box_size
        if not (1 <= lo <= hi):
            raise ConfigError("box_size must satisfy 1 <= min <= max")
        if hi + 2 * self.margin > min(self.image_w, self.image_h):
            raise ConfigError("largest box plus margins does not fit the image")
        if not isinstance(self.class_weights, (int, float)):
            w = tuple(float(v) for v in self.class_weights)
            if len(w) != self.n_classes or any(v <= 0 for v in w):
                raise ConfigError("class_weights must be positive, one per class")
            object.__setattr__(self, "class_weights", w)
        object.__setattr__(self, "boxes_per_image", tuple(self.boxes_per_image))
        object.__setattr__(self, "box_size", tuple(self.box_size))

    def weights(self) -> np.ndarray:
        if isinstance(self.class_weights, tuple):
            w = np.asarray(self.class_weights)
        else:
            w = (np.arange(self.n_classes) + 1.0) ** -float(self.class_weights)
        return w / w.sum()

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown scene-spec fields: {sorted(unknown)}")
        kw = dict(d)
        if isinstance(kw.get("class_weights"), list):
            kw["class_weights"] = tuple(kw["class_weights"])
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


@dataclass(frozen=True)
class DetectorSpec:
    # base miss probability, scalar or one per class
    miss_prob: Union[float, Tuple[float, ...]] = 0.0
    # per-image difficulty d ~ Beta(a, b); None means d = 0 everywhere
    difficulty: Optional[Tuple[float, float]] = None
    # miss probability becomes base + (1 - base) * difficulty_miss * d
    difficulty_miss: float = 0.0
    # matched-score mean drops by difficulty_score_shift * d
    difficulty_score_shift: float = 0.0
    fp_rate: float = 0.0
    jitter: float = 0.0
    matched_score_mean: float = 1.0
    matched_score_std: float = 0.0
    false_score_mean: float = 0.2
    false_score_std: float = 0.0
    class_confusion: float = 0.0
    variants: Tuple[str, ...] = DEFAULT_VARIANTS
    variant_jitter: float = 0.0
    variant_score_std: float = 0.0
    variant_drop: float = 0.0
    seed: int = 0

    def __post_init__(self):
        probs = [self.difficulty_miss, self.class_confusion, self.variant_drop]
        if isinstance(self.miss_prob, (int, float)):
            probs.append(self.miss_prob)
        else:
            object.__setattr__(self, "miss_prob", tuple(float(v) for v in self.miss_prob))
            probs.extend(self.miss_prob)
        if any(not (0.0 <= p <= 1.0) for p in probs):
            raise ConfigError("probabilities must lie in [0, 1]")
        if self.matched_score_mean <= self.false_score_mean:
            raise ConfigError("matched_score_mean must exceed false_score_mean")
        if min(self.fp_rate, self.jitter, self.matched_score_std, self.false_score_std, self.variant_jitter, self.variant_score_std) < 0:
            raise ConfigError("rates and spreads must be non-negative")
        if self.difficulty is not None:
            a, b = self.difficulty
            if a <= 0 or b <= 0:
                raise ConfigError("difficulty Beta parameters must be positive")
            object.__setattr__(self, "difficulty", (float(a), float(b)))
        v = tuple(self.variants)
        if not v or v[0] != "original":
            raise ConfigError("variants must start with 'original'")
        object.__setattr__(self, "variants", v)

    def class_miss(self, k: int) -> float:
        if isinstance(self.miss_prob, tuple):
            return self.miss_prob[k]
        return float(self.miss_prob)

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown detector-spec fields: {sorted(unknown)}")
        kw = dict(d)
        for k in ("miss_prob", "difficulty", "variants"):
            if isinstance(kw.get(k), list):
                kw[k] = tuple(kw[k])
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


SCENE_PRESETS: Dict[str, SceneSpec] = {
    "default": SceneSpec(),
    "imbalanced": SceneSpec(n_classes=6, class_weights=1.5, boxes_per_image=(1, 8)),
    "constant_density": SceneSpec(boxes_per_image=(6, 6)),
}

DETECTOR_PRESETS: Dict[str, DetectorSpec] = {
    # predictions equal ground truth under every variant
    "perfect": DetectorSpec(),
    "calibrated": DetectorSpec(
        miss_prob=0.2,
        fp_rate=0.5,
        jitter=0.02,
        matched_score_mean=0.7,
        matched_score_std=0.15,
        false_score_mean=0.25,
        false_score_std=0.1,
        class_confusion=0.1,
        variant_jitter=0.01,
        variant_score_std=0.02,
        variant_drop=0.05,
    ),
    # per-image difficulty drives both misses and low scores
    "heterogeneous": DetectorSpec(
        miss_prob=0.05,
        difficulty=(0.6, 0.9),
        difficulty_miss=0.9,
        difficulty_score_shift=0.4,
        fp_rate=1.0,
        jitter=0.02,
        matched_score_mean=0.97,
        matched_score_std=0.06,
        false_score_mean=0.3,
        false_score_std=0.15,
        variant_jitter=0.01,
        variant_score_std=0.02,
        variant_drop=0.05,
    ),
    # difficulty lowers scores only; detection counts carry no miss signal
    "score_only": DetectorSpec(
        miss_prob=0.05,
        difficulty=(0.6, 0.9),
        difficulty_score_shift=0.4,
        fp_rate=1.0,
        jitter=0.02,
        matched_score_mean=0.97,
        matched_score_std=0.06,
        false_score_mean=0.3,
        false_score_std=0.15,
    ),
    # matched scores centred at 0.36
    "threshold_036": DetectorSpec(
        miss_prob=0.1,
        fp_rate=0.5,
        jitter=0.02,
        matched_score_mean=0.36,
        matched_score_std=0.1,
        false_score_mean=0.15,
        false_score_std=0.05,
    ),
}


def class_colors(n_classes: int) -> np.ndarray:
    """Distinct saturated RGB colors, one per class."""
    out = np.zeros((n_classes, 3), dtype=np.uint8)
    for k in range(n_classes):
        r, g, b = colorsys.hsv_to_rgb(k / max(n_classes, 1), 1.0, 1.0)
        out[k] = (round(r * 255), round(g * 255), round(b * 255))
    return out


def render(record: ImageRecord, colors: np.ndarray) -> np.ndarray:
    img = np.zeros((record.height, record.width, 3), dtype=np.uint8)
    for lb in record.labels:
        b = lb.box
        x1, y1 = int(round(b.x)), int(round(b.y))
        x2, y2 = int(round(b.x2)), int(round(b.y2))
        img[y1:y2, x1:x2] = colors[lb.class_id]
    return img


class SceneRasters(Mapping):
    """Lazy ``image_id -> raster`` mapping; rasters are rendered on access."""

    def __init__(self, dataset: AnnotationSet):
        self._records = dataset.by_id()
        self.colors = class_colors(len(dataset.classes))

    def __getitem__(self, image_id):
        return render(self._records[image_id], self.colors)

    def __iter__(self):
        return iter(self._records)

    def __len__(self):
        return len(self._records)

    def __call__(self, record: ImageRecord) -> np.ndarray:
        return render(record, self.colors)


@dataclass
class SceneBundle:
    annotations: AnnotationSet
    rasters: SceneRasters
    emitted: Dict[int, int]

    def __iter__(self):
        return iter((self.annotations, self.rasters))


def _place(rng, spec: SceneSpec, w: int, h: int, placed: List[Tuple[int, int, int, int]]):
    g = spec.gap
    for _ in range(MAX_ATTEMPTS):
        x = int(rng.integers(spec.margin, spec.image_w - spec.margin - w + 1))
        y = int(rng.integers(spec.margin, spec.image_h - spec.margin - h + 1))
        if all(x + w + g <= px or px + pw + g <= x or y + h + g <= py or py + ph + g <= y for px, py, pw, ph in placed):
            return x, y
    return None


def gen_scenes(spec: SceneSpec) -> SceneBundle:
    """Generate an annotation set, its lazy rasters and the per-class emission counts."""
    rng = np.random.default_rng(spec.seed)
    p = spec.weights()
    emitted = {k: 0 for k in range(spec.n_classes)}
    images = []
    for i in range(spec.n_images):
        n = int(rng.integers(spec.boxes_per_image[0], spec.boxes_per_image[1] + 1))
        placed = []
        labels = []
        for _ in range(n):
            w = int(rng.integers(spec.box_size[0], spec.box_size[1] + 1))
            h = int(rng.integers(spec.box_size[0], spec.box_size[1] + 1))
            k = int(rng.choice(spec.n_classes, p=p))
            pos = _place(rng, spec, w, h, placed)
            if pos is None:
                continue
            placed.append((pos[0], pos[1], w, h))
            labels.append(LabeledBox(BBox(pos[0], pos[1], w, h), k))
            emitted[k] += 1
        iid = f"sim_{i:06d}"
        images.append(ImageRecord(iid, f"{iid}.png", spec.image_w, spec.image_h, tuple(labels)))
    classes = tuple(f"class_{k}" for k in range(spec.n_classes))
    ds = AnnotationSet(classes, tuple(images))
    return SceneBundle(ds, SceneRasters(ds), emitted)


# ---------------------------------------------------------------------------
# detector
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ImageTruth:
    image_id: str
    difficulty: float
    n_gt: int
    n_missed: int
    n_fp: int
    n_confused: int
    iou_sum: float

    @property
    def mdr(self) -> Optional[float]:
        return self.n_missed / self.n_gt if self.n_gt else None


@dataclass
class TruthLedger:
    images: List[ImageTruth] = field(default_factory=list)

    def _tot(self, name):
        return sum(getattr(r, name) for r in self.images)

    @property
    def MDR(self):
        n = self._tot("n_gt")
        return self._tot("n_missed") / n if n else None

    @property
    def UDR(self):
        det = self._tot("n_gt") - self._tot("n_missed")
        n = det + self._tot("n_fp")
        return self._tot("n_fp") / n if n else None

    @property
    def mACC(self):
        det = self._tot("n_gt") - self._tot("n_missed")
        return (det - self._tot("n_confused")) / det if det else None

    @property
    def mIoU(self):
        det = self._tot("n_gt") - self._tot("n_missed")
        return self._tot("iou_sum") / det if det else None

    def per_image_mdr(self) -> Dict[str, Optional[float]]:
        return {r.image_id: r.mdr for r in self.images}

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in ("MDR", "UDR", "mACC", "mIoU") if getattr(self, k) is not None}
        out["images"] = [asdict(r) for r in self.images]
        return out


@dataclass
class DetectionBundle:
    variants: Dict[str, DetectionSet]
    truth: TruthLedger

    @property
    def original(self) -> DetectionSet:
        return self.variants["original"]

    @property
    def augmented(self) -> List[DetectionSet]:
        return [v for k, v in self.variants.items() if k != "original"]


def _jitter(rng, b: BBox, sigma: float, img_w: float, img_h: float) -> BBox:
    if sigma <= 0:
        return b
    dx, dy, dw, dh = rng.normal(0.0, sigma, size=4)
    x1 = max(0.0, b.x + dx * b.w)
    y1 = max(0.0, b.y + dy * b.h)
    x2 = min(float(img_w), b.x + dx * b.w + b.w * (1.0 + dw))
    y2 = min(float(img_h), b.y + dy * b.h + b.h * (1.0 + dh))
    if x2 - x1 < 1.0:
        x2 = min(float(img_w), x1 + 1.0)
        x1 = x2 - 1.0
    if y2 - y1 < 1.0:
        y2 = min(float(img_h), y1 + 1.0)
        y1 = y2 - 1.0
    return BBox.from_corners(x1, y1, x2, y2)


def _score(rng, mean: float, std: float) -> float:
    if std <= 0:
        return float(min(1.0, max(0.0, mean)))
    return float(np.clip(rng.normal(mean, std), 0.0, 1.0))


def _false_positives(rng, record: ImageRecord, spec: DetectorSpec, n_classes: int) -> List[Detection]:
    n = int(rng.poisson(spec.fp_rate)) if spec.fp_rate > 0 else 0
    out = []
    if n == 0:
        return out
    gts = [lb.box for lb in record.labels]
    sizes = [b.w for b in gts] + [b.h for b in gts]
    lo, hi = (min(sizes), max(sizes)) if sizes else (8.0, 32.0)
    blockers = list(gts)
    for _ in range(n):
        for _attempt in range(MAX_ATTEMPTS):
            w = min(float(rng.uniform(lo, hi)), record.width)
            h = min(float(rng.uniform(lo, hi)), record.height)
            x = float(rng.uniform(0.0, record.width - w))
            y = float(rng.uniform(0.0, record.height - h))
            cand = BBox(x, y, w, h)
            if all(iou(cand, b) == 0.0 and not _touch(cand, b) for b in blockers):
                out.append(Detection(cand, int(rng.integers(0, n_classes)), _score(rng, spec.false_score_mean, spec.false_score_std)))
                blockers.append(cand)
                break
    return out


def _touch(a: BBox, b: BBox) -> bool:
    return min(a.x2, b.x2) - max(a.x, b.x) > 0 and min(a.y2, b.y2) - max(a.y, b.y) > 0


def gen_detections(gt: AnnotationSet, spec: DetectorSpec) -> DetectionBundle:
    """Simulate teacher detections for every variant in ``spec.variants``.

    True detections persist across variants (with optional extra jitter, score
    noise and dropout); false positives are drawn independently per variant.
    The ``hflip`` variant stores its boxes in the flipped frame.
    """
    rng = np.random.default_rng(spec.seed)
    k = len(gt.classes)
    widths = {img.width for img in gt.images}
    if HFLIP in spec.variants and len(widths) > 1:
        raise ConfigError("hflip variant needs images of a single width")
    width = widths.pop() if widths else 1
    per_variant: Dict[str, Dict[str, list]] = {v: {} for v in spec.variants}
    truth = TruthLedger()
    for img in gt.images:
        d = float(rng.beta(*spec.difficulty)) if spec.difficulty is not None else 0.0
        base = []
        missed = confused = 0
        iou_sum = 0.0
        for lb in img.active_labels:
            m = spec.class_miss(lb.class_id)
            m = m + (1.0 - m) * spec.difficulty_miss * d
            if rng.random() < m:
                missed += 1
                continue
            box = _jitter(rng, lb.box, spec.jitter, img.width, img.height)
            cls = lb.class_id
            if k > 1 and rng.random() < spec.class_confusion:
                cls = int(rng.integers(0, k - 1))
                cls = cls + 1 if cls >= lb.class_id else cls
                confused += 1
            score = _score(rng, spec.matched_score_mean - spec.difficulty_score_shift * d, spec.matched_score_std)
            iou_sum += iou(box, lb.box)
            base.append(Detection(box, cls, score))
        fps = _false_positives(rng, img, spec, k)
        per_variant["original"][img.image_id] = base + fps
        truth.images.append(ImageTruth(img.image_id, d, len(img.active_labels), missed, len(fps), confused, iou_sum))
        for v in spec.variants[1:]:
            dets = []
            for det in base:
                if spec.variant_drop > 0 and rng.random() < spec.variant_drop:
                    continue
                box = _jitter(rng, det.box, spec.variant_jitter, img.width, img.height)
                score = det.score
                if spec.variant_score_std > 0:
                    score = float(np.clip(score + rng.normal(0.0, spec.variant_score_std), 0.0, 1.0))
                dets.append(Detection(box, det.class_id, score))
            dets.extend(_false_positives(rng, img, spec, k))
            if v == HFLIP:
                t = BoxTransform(HFLIP, width)
                dets = [Detection(apply_transform(t, x.box), x.class_id, x.score) for x in dets]
            per_variant[v][img.image_id] = dets
    sets = {}
    for v in spec.variants:
        t = BoxTransform(HFLIP, width) if v == HFLIP else BoxTransform(IDENTITY)
        sets[v] = DetectionSet(per_variant[v], v, t, gt.classes)
    return DetectionBundle(sets, truth)


def perfect_oracle(gt: AnnotationSet, variants: Sequence[str] = DEFAULT_VARIANTS) -> DetectionBundle:
    """Detections equal to ``gt`` (score 1) under every variant."""
    return gen_detections(gt, DetectorSpec(variants=tuple(variants)))
