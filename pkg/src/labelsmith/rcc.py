"""
Rare Class Collage: crop rare-class objects with random context and paste
them onto new labeled canvases.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, FrozenSet, List, Mapping, Optional, Tuple

import numpy as np

from . import _kernels
from .core import BBox, ImageRecord, LabeledBox
from .dataset_io import AnnotationSet
from .exceptions import ConfigError, DataError

logger = logging.getLogger(__name__)

HORIZONTAL = "horizontal"
GRID4X4 = "grid4x4"
LAYOUTS = (HORIZONTAL, GRID4X4)
GRID_N = 4
# resize target height range for scale variation, as a fraction of canvas height
SV_RANGE = (0.5, 1.0)


@dataclass(frozen=True)
class RccConfig:
    rare_classes: FrozenSet[int]
    gamma_r_min: float = 0.25
    gamma_r_max: float = 0.75
    layout: str = HORIZONTAL
    scale_variation: bool = False
    canvas_w: int = 1024
    canvas_h: int = 512
    seed: int = 0
    # optional per-collage hook (e.g. an external augmentation); must not move pixels
    augment: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "rare_classes", frozenset(int(c) for c in self.rare_classes))
        if not (0 <= self.gamma_r_min <= self.gamma_r_max):
            raise ConfigError(f"need 0 <= gamma_r_min <= gamma_r_max, got {self.gamma_r_min}, {self.gamma_r_max}")
        if self.canvas_w <= 0 or self.canvas_h <= 0:
            raise ConfigError("canvas dimensions must be positive")
        if self.layout not in LAYOUTS:
            raise ConfigError(f"unknown layout {self.layout!r}; expected one of {LAYOUTS}")
        if self.layout == GRID4X4 and (self.canvas_w < GRID_N or self.canvas_h < GRID_N):
            raise ConfigError("canvas too small for a 4x4 grid")


@dataclass(frozen=True)
class Provenance:
    image_id: str
    box_index: int
    p_r: float
    crop: Tuple[int, int, int, int]  # source pixel rect x, y, w, h
    placement: Tuple[int, int, int, int]  # canvas pixel rect x, y, w, h

    def to_dict(self):
        return {
            "image_id": self.image_id,
            "box_index": self.box_index,
            "p_r": self.p_r,
            "crop": list(self.crop),
            "placement": list(self.placement),
        }


@dataclass
class CollageOutput:
    image: np.ndarray
    labels: List[LabeledBox]
    provenance: List[Provenance]


@dataclass
class _Crop:
    record: ImageRecord
    box_index: int
    p_r: float
    rect: Tuple[int, int, int, int]
    # (label index in source, label) for every label fully inside rect; the
    # rare object itself comes first
    members: List[Tuple[int, LabeledBox]]


def expand_box(b: BBox, p_r: float, img_w: float, img_h: float) -> BBox:
    """Grow ``b`` by ``p_r`` of its size on every side, clipped to the image."""
    if p_r < 0:
        raise ConfigError("p_r must be non-negative")
    x1 = max(0.0, b.x - p_r * b.w)
    y1 = max(0.0, b.y - p_r * b.h)
    x2 = min(float(img_w), b.x + (1.0 + p_r) * b.w)
    y2 = min(float(img_h), b.y + (1.0 + p_r) * b.h)
    return BBox.from_corners(x1, y1, x2, y2)


def _pixel_rect(b: BBox, img_w: int, img_h: int) -> Tuple[int, int, int, int]:
    x1 = max(0, int(math.floor(b.x)))
    y1 = max(0, int(math.floor(b.y)))
    x2 = min(img_w, int(math.ceil(b.x2)))
    y2 = min(img_h, int(math.ceil(b.y2)))
    return x1, y1, max(1, x2 - x1), max(1, y2 - y1)


def _inside(b: BBox, rect) -> bool:
    x, y, w, h = rect
    return b.x >= x and b.y >= y and b.x2 <= x + w and b.y2 <= y + h


def _as_rgb(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.ndim != 3 or arr.shape[2] not in (3, 4):
        raise DataError(f"unsupported raster shape {arr.shape}")
    return np.ascontiguousarray(arr[:, :, :3].astype(np.uint8, copy=False))


def _fetch(images, record: ImageRecord) -> np.ndarray:
    if callable(images) and not isinstance(images, Mapping):
        arr = images(record)
    else:
        try:
            arr = images[record.image_id]
        except KeyError:
            raise DataError(f"no raster for image {record.image_id!r}") from None
    arr = _as_rgb(arr)
    if arr.shape[0] != record.height or arr.shape[1] != record.width:
        raise DataError(
            f"image {record.image_id}: raster is {arr.shape[1]}x{arr.shape[0]}, "
            f"annotation says {record.width}x{record.height}"
        )
    return arr


def collect_crops(dataset: AnnotationSet, cfg: RccConfig, rng: np.random.Generator) -> List[_Crop]:
    """One crop per rare box, in dataset order; draws one ``p_r`` per crop."""
    crops = []
    for rec in dataset.images:
        for bi, lb in enumerate(rec.labels):
            if lb.ignore or lb.class_id not in cfg.rare_classes:
                continue
            p = float(rng.uniform(cfg.gamma_r_min, cfg.gamma_r_max))
            rect = _pixel_rect(expand_box(lb.box, p, rec.width, rec.height), rec.width, rec.height)
            members = [(bi, lb)]
            for oi, other in enumerate(rec.labels):
                if oi != bi and not other.ignore and _inside(other.box, rect):
                    members.append((oi, other))
            crops.append(_Crop(rec, bi, p, rect, members))
    return crops


def _target_size(crop_w, crop_h, cfg: RccConfig, rng) -> Tuple[int, int]:
    if cfg.layout == HORIZONTAL:
        th = cfg.canvas_h
        if cfg.scale_variation:
            th = max(1, int(round(rng.uniform(*SV_RANGE) * cfg.canvas_h)))
        tw = max(1, int(round(crop_w * th / crop_h)))
        if tw > cfg.canvas_w:
            # a single crop wider than the canvas is shrunk to fit
            tw = cfg.canvas_w
            th = max(1, min(th, int(round(crop_h * tw / crop_w))))
        return tw, th
    cell_w = cfg.canvas_w // GRID_N
    cell_h = cfg.canvas_h // GRID_N
    s = min(cell_w / crop_w, cell_h / crop_h)
    if cfg.scale_variation:
        s *= rng.uniform(*SV_RANGE)
    tw = min(cell_w, max(1, int(round(crop_w * s))))
    th = min(cell_h, max(1, int(round(crop_h * s))))
    return tw, th


def _layout(sizes: List[Tuple[int, int]], cfg: RccConfig) -> List[Tuple[int, int, int]]:
    """Assign (collage index, x, y) to each resized crop, in order."""
    out = []
    if cfg.layout == GRID4X4:
        cell_w = cfg.canvas_w // GRID_N
        cell_h = cfg.canvas_h // GRID_N
        per = GRID_N * GRID_N
        for i in range(len(sizes)):
            c, slot = divmod(i, per)
            r, col = divmod(slot, GRID_N)
            out.append((c, col * cell_w, r * cell_h))
        return out
    collage = 0
    cursor = 0
    for tw, _ in sizes:
        if cursor > 0 and cursor + tw > cfg.canvas_w:
            collage += 1
            cursor = 0
        out.append((collage, cursor, 0))
        cursor += tw
    return out


def _map_box(b: BBox, crop_rect, sx, sy, px, py, cw, ch) -> BBox:
    cx, cy = crop_rect[0], crop_rect[1]
    x1 = (b.x - cx) * sx + px
    y1 = (b.y - cy) * sy + py
    x2 = min((b.x2 - cx) * sx + px, float(cw))
    y2 = min((b.y2 - cy) * sy + py, float(ch))
    return BBox.from_corners(max(x1, 0.0), max(y1, 0.0), x2, y2)


def build_collages(dataset: AnnotationSet, images, cfg: RccConfig) -> List[CollageOutput]:
    """Build collages from every rare-class box in ``dataset``.

    Args:
        dataset: source annotations.
        images: mapping ``image_id -> HxWx3 uint8`` or callable on ImageRecord.
        cfg: collage configuration; all randomness comes from ``cfg.seed``.

    Returns:
        Collages in index order; empty (with a warning) when no rare box exists.
    """
    if not cfg.rare_classes:
        raise ConfigError("rare_classes must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    crops = collect_crops(dataset, cfg, rng)
    if not crops:
        logger.warning("no boxes of rare classes %s found; no collages built", sorted(cfg.rare_classes))
        return []
    order = rng.permutation(len(crops))
    crops = [crops[i] for i in order]
    sizes = [_target_size(c.rect[2], c.rect[3], cfg, rng) for c in crops]
    places = _layout(sizes, cfg)

    n_collages = places[-1][0] + 1
    outs = [
        CollageOutput(np.zeros((cfg.canvas_h, cfg.canvas_w, 3), dtype=np.uint8), [], [])
        for _ in range(n_collages)
    ]
    cache_id, cache_arr = None, None
    for crop, (tw, th), (ci, px, py) in zip(crops, sizes, places):
        if crop.record.image_id != cache_id:
            cache_id, cache_arr = crop.record.image_id, _fetch(images, crop.record)
        x, y, w, h = crop.rect
        patch = _kernels.bilinear_resize(cache_arr[y : y + h, x : x + w], th, tw)
        out = outs[ci]
        out.image[py : py + th, px : px + tw] = patch
        sx, sy = tw / w, th / h
        placement = (px, py, tw, th)
        for oi, lb in crop.members:
            nb = _map_box(lb.box, crop.rect, sx, sy, px, py, cfg.canvas_w, cfg.canvas_h)
            out.labels.append(LabeledBox(nb, lb.class_id))
            out.provenance.append(Provenance(crop.record.image_id, oi, crop.p_r, crop.rect, placement))
    if cfg.augment is not None:
        for out in outs:
            aug = np.asarray(cfg.augment(out.image))
            if aug.shape != out.image.shape:
                raise ConfigError("collage augmentation hook must preserve the image shape")
            out.image = aug.astype(np.uint8, copy=False)
    logger.info("built %d collages from %d rare crops", n_collages, len(crops))
    return outs


def append_collages(dataset: AnnotationSet, collages: List[CollageOutput], prefix: str = "rcc_") -> AnnotationSet:
    """Append collages as new images named ``{prefix}{index:05d}``.

    Collage records carry ``is_collage=True`` so batch planning keeps them in
    the common stratum.
    """
    return dataset.with_images(tuple(dataset.images) + tuple(collage_records(collages, prefix, dataset)))


def collage_records(collages: List[CollageOutput], prefix: str = "rcc_", dataset: AnnotationSet = None) -> List[ImageRecord]:
    taken = set(img.image_id for img in dataset.images) if dataset is not None else set()
    recs = []
    for i, c in enumerate(collages):
        iid = f"{prefix}{i:05d}"
        if iid in taken:
            raise DataError(f"collage id {iid!r} collides with an existing image")
        h, w = c.image.shape[:2]
        recs.append(ImageRecord(iid, f"{iid}.png", w, h, tuple(c.labels), is_collage=True))
    return recs
