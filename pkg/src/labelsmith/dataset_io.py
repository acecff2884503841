"""
Annotation, detection and report files.

The canonical interchange format is JSON. Annotation files follow the COCO
layout (``categories`` / ``images`` / ``annotations`` with ``bbox`` as
``[x, y, w, h]``); detection files are a header plus a flat record list.
KITTI label directories are read-only.

All writes go through :func:`atomic_write_text`, so a failed write never
leaves a partial file behind.
"""

import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np

from .core import HFLIP, IDENTITY, BBox, BoxTransform, Detection, ImageRecord, LabeledBox
from .exceptions import ConfigError, DataError

logger = logging.getLogger(__name__)

COCO_JSON = "coco_json"
KITTI_TXT = "kitti_txt"
FORMATS = (COCO_JSON, KITTI_TXT)

KITTI_CLASSES = ("Car", "Van", "Truck", "Pedestrian", "Person_sitting", "Cyclist", "Tram", "Misc")
KITTI_IGNORE = "DontCare"
# nominal KITTI frame; expanded per image if a box reaches past it
KITTI_DEFAULT_SIZE = (1242, 375)


@dataclass(frozen=True)
class AnnotationSet:
    classes: Tuple[str, ...]
    images: Tuple[ImageRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "images", tuple(self.images))
        seen = set()
        k = len(self.classes)
        for img in self.images:
            if img.image_id in seen:
                raise DataError(f"duplicate image_id {img.image_id!r}")
            seen.add(img.image_id)
            for lb in img.labels:
                if lb.class_id >= k:
                    raise DataError(f"image {img.image_id}: class_id {lb.class_id} not in class table of size {k}")

    def __len__(self):
        return len(self.images)

    def by_id(self) -> Dict[str, ImageRecord]:
        return {img.image_id: img for img in self.images}

    def with_images(self, images) -> "AnnotationSet":
        return AnnotationSet(self.classes, tuple(images))


@dataclass(frozen=True)
class DetectionSet:
    """Per-image detections for one inference variant.

    ``per_image`` keeps file order; an image present with an empty tuple had
    zero detections, an absent image was not run.
    """

    per_image: Mapping[str, Tuple[Detection, ...]]
    variant: str = "original"
    transform: BoxTransform = field(default_factory=BoxTransform)
    classes: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "per_image", {str(k): tuple(v) for k, v in self.per_image.items()})
        object.__setattr__(self, "classes", tuple(self.classes))

    @property
    def image_ids(self) -> List[str]:
        return list(self.per_image)

    def __len__(self):
        return len(self.per_image)

    def get(self, image_id: str) -> Tuple[Detection, ...]:
        return self.per_image.get(image_id, ())

    def n_detections(self) -> int:
        return sum(len(v) for v in self.per_image.values())


# ---------------------------------------------------------------------------
# low-level writing
# ---------------------------------------------------------------------------

def dumps(obj) -> str:
    # json's float repr is shortest round-trip, so reloads are bit-exact
    return json.dumps(obj, indent=1, ensure_ascii=False, allow_nan=False) + "\n"


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    parent = path.parent if str(path.parent) else Path(".")
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=parent)
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}") from e
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException as e:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        if isinstance(e, OSError):
            raise DataError(f"cannot write {path}: {e}") from e
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj) -> Path:
    return atomic_write_text(path, dumps(obj))


def read_json(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    if not text.strip():
        return None
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e


# ---------------------------------------------------------------------------
# annotations
# ---------------------------------------------------------------------------

def _field(rec, key, path, where):
    try:
        return rec[key]
    except (KeyError, TypeError):
        raise DataError(f"{path}: {where}: missing field '{key}'") from None


def _parse_bbox(raw, path, where) -> BBox:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise DataError(f"{path}: {where}: field 'bbox' must be a list of 4 numbers")
    try:
        vals = [float(v) for v in raw]
    except (TypeError, ValueError):
        raise DataError(f"{path}: {where}: field 'bbox' must be numeric") from None
    try:
        return BBox(*vals)
    except DataError as e:
        raise DataError(f"{path}: {where}: field 'bbox': {e}") from None


def _load_coco(path) -> AnnotationSet:
    data = read_json(path)
    if data is None:
        return AnnotationSet((), ())
    if not isinstance(data, dict):
        raise DataError(f"{path}: top level must be an object")
    cats = data.get("categories", [])
    for i, c in enumerate(cats):
        _field(c, "id", path, f"categories[{i}]")
        _field(c, "name", path, f"categories[{i}]")
    # COCO category ids may be sparse; map to dense ids in ascending id order
    cats_sorted = sorted(cats, key=lambda c: c["id"])
    cat_map = {c["id"]: k for k, c in enumerate(cats_sorted)}
    classes = tuple(str(c["name"]) for c in cats_sorted)

    images = []
    order = []
    for i, rec in enumerate(data.get("images", [])):
        where = f"images[{i}]"
        iid = str(_field(rec, "id", path, where))
        try:
            w = int(_field(rec, "width", path, where))
            h = int(_field(rec, "height", path, where))
        except (TypeError, ValueError):
            raise DataError(f"{path}: {where}: width/height must be integers") from None
        images.append(
            {
                "image_id": iid,
                "file_name": str(rec.get("file_name", iid)),
                "width": w,
                "height": h,
                "is_collage": bool(rec.get("is_collage", False)),
                "labels": [],
            }
        )
        order.append(iid)
    index = {}
    for i, iid in enumerate(order):
        if iid in index:
            raise DataError(f"{path}: images[{i}]: duplicate id {iid!r}")
        index[iid] = i

    for i, rec in enumerate(data.get("annotations", [])):
        where = f"annotations[{i}]"
        iid = str(_field(rec, "image_id", path, where))
        if iid not in index:
            raise DataError(f"{path}: {where}: field 'image_id' refers to unknown image {iid!r}")
        cid = _field(rec, "category_id", path, where)
        if cid not in cat_map:
            raise DataError(f"{path}: {where}: field 'category_id' refers to unknown category {cid!r}")
        box = _parse_bbox(_field(rec, "bbox", path, where), path, where)
        images[index[iid]]["labels"].append(LabeledBox(box, cat_map[cid], bool(rec.get("ignore", False))))

    recs = [
        ImageRecord(d["image_id"], d["file_name"], d["width"], d["height"], tuple(d["labels"]), d["is_collage"])
        for d in images
    ]
    return AnnotationSet(classes, tuple(recs))


def _kitti_image_size(image_dir, stem) -> Optional[Tuple[int, int]]:
    if image_dir is None:
        return None
    from PIL import Image

    for ext in (".png", ".jpg", ".jpeg"):
        p = Path(image_dir) / f"{stem}{ext}"
        if p.exists():
            with Image.open(p) as im:
                return im.size
    return None


def parse_kitti_lines(lines: Iterable[str], path="<kitti>", class_table: Optional[List[str]] = None):
    """Parse KITTI label lines into ``(class_name, BBox, ignore)`` triples.

    Fields are ``type truncated occluded alpha x1 y1 x2 y2 ...``; only the
    first eight are required.
    """
    out = []
    for lineno, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) < 8:
            raise DataError(f"{path}: line {lineno}: expected at least 8 fields, got {len(parts)}")
        name = parts[0]
        coords = []
        for fi, fname in zip(range(4, 8), ("x1", "y1", "x2", "y2")):
            try:
                coords.append(float(parts[fi]))
            except ValueError:
                raise DataError(f"{path}: line {lineno}: field {fname} is not a number: {parts[fi]!r}") from None
        x1, y1, x2, y2 = coords
        if x2 <= x1 or y2 <= y1:
            raise DataError(f"{path}: line {lineno}: field bbox is degenerate ({x1}, {y1}, {x2}, {y2})")
        out.append((name, BBox.from_corners(x1, y1, x2, y2), name == KITTI_IGNORE))
    return out


def _load_kitti(path, image_dir=None, image_size=None) -> AnnotationSet:
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.txt"))
    elif path.exists():
        files = [path]
    else:
        raise DataError(f"{path}: no such file or directory")
    classes = list(KITTI_CLASSES)
    parsed = []
    for f in files:
        try:
            lines = f.read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise DataError(f"cannot read {f}: {e}") from e
        rows = parse_kitti_lines(lines, f)
        for name, _, ign in rows:
            if name not in classes and name != KITTI_IGNORE:
                classes.append(name)
        parsed.append((f, rows))
    has_ignore = any(ign for _, rows in parsed for _, _, ign in rows)
    if has_ignore:
        classes.append(KITTI_IGNORE)
    cid = {n: i for i, n in enumerate(classes)}

    images = []
    for f, rows in parsed:
        size = _kitti_image_size(image_dir, f.stem) or image_size or KITTI_DEFAULT_SIZE
        w, h = int(size[0]), int(size[1])
        for _, b, _ in rows:
            w = max(w, int(math.ceil(b.x2)))
            h = max(h, int(math.ceil(b.y2)))
        labels = []
        for name, b, ign in rows:
            # KITTI boxes may start a fraction of a pixel outside the frame
            x1, y1 = max(0.0, b.x), max(0.0, b.y)
            labels.append(LabeledBox(BBox.from_corners(x1, y1, b.x2, b.y2), cid[name], ign))
        images.append(ImageRecord(f.stem, f"{f.stem}.png", w, h, tuple(labels)))
    return AnnotationSet(tuple(classes), tuple(images))


def load_annotations(path, format: str = COCO_JSON, image_dir=None, image_size=None) -> AnnotationSet:
    """Load an annotation set.

    Args:
        path: JSON file for ``coco_json``; a label file or a directory of
            per-image label files for ``kitti_txt``.
        format: ``coco_json`` or ``kitti_txt``.
        image_dir: KITTI only; directory used to read true image sizes.
        image_size: KITTI only; ``(width, height)`` fallback.
    """
    if format == COCO_JSON:
        return _load_coco(path)
    if format == KITTI_TXT:
        return _load_kitti(path, image_dir=image_dir, image_size=image_size)
    raise ConfigError(f"unknown annotation format {format!r}; expected one of {FORMATS}")


def annotations_to_dict(aset: AnnotationSet) -> dict:
    images = []
    anns = []
    ann_id = 0
    for img in aset.images:
        rec = {"id": img.image_id, "file_name": img.file_name, "width": img.width, "height": img.height}
        if img.is_collage:
            rec["is_collage"] = True
        images.append(rec)
        for lb in img.labels:
            a = {"id": ann_id, "image_id": img.image_id, "category_id": lb.class_id, "bbox": lb.box.to_list()}
            if lb.ignore:
                a["ignore"] = 1
            anns.append(a)
            ann_id += 1
    return {
        "categories": [{"id": i, "name": n} for i, n in enumerate(aset.classes)],
        "images": images,
        "annotations": anns,
    }


def save_annotations(aset: AnnotationSet, path) -> Path:
    return write_json(path, annotations_to_dict(aset))


# ---------------------------------------------------------------------------
# detections
# ---------------------------------------------------------------------------

def _transform_from_header(header, path) -> BoxTransform:
    variant = str(header.get("variant", "original"))
    kind = header.get("transform")
    if kind is None:
        kind = HFLIP if variant == HFLIP else IDENTITY
    width = header.get("width")
    if kind == HFLIP and width is None:
        raise DataError(f"{path}: header: field 'width' is required for hflip variants")
    try:
        return BoxTransform(kind, width if kind == HFLIP else None)
    except ConfigError as e:
        raise DataError(f"{path}: header: {e}") from None


def load_detections(path) -> DetectionSet:
    """Load a detection file.

    Layout::

        {"header": {"variant": "hflip", "width": 1024},
         "classes": [...], "images": [ids...],
         "detections": [{"image_id", "class_id", "bbox", "score"}, ...]}

    A bare list of records is accepted as well (variant ``original``).
    """
    data = read_json(path)
    if data is None:
        return DetectionSet({})
    if isinstance(data, list):
        data = {"detections": data}
    if not isinstance(data, dict):
        raise DataError(f"{path}: top level must be an object or a list")
    header = data.get("header", {}) or {}
    variant = str(header.get("variant", "original"))
    transform = _transform_from_header(header, path)
    per_image: Dict[str, list] = {}
    for iid in data.get("images", []):
        per_image.setdefault(str(iid), [])
    for i, rec in enumerate(data.get("detections", [])):
        where = f"detections[{i}]"
        iid = str(_field(rec, "image_id", path, where))
        cid = _field(rec, "class_id", path, where)
        if not isinstance(cid, int) or isinstance(cid, bool) or cid < 0:
            raise DataError(f"{path}: {where}: field 'class_id' must be a non-negative integer")
        box = _parse_bbox(_field(rec, "bbox", path, where), path, where)
        score = _field(rec, "score", path, where)
        try:
            score = float(score)
        except (TypeError, ValueError):
            raise DataError(f"{path}: {where}: field 'score' must be numeric") from None
        if not (0.0 <= score <= 1.0):
            raise DataError(f"{path}: {where}: field 'score': score out of range ({score})")
        per_image.setdefault(iid, []).append(Detection(box, cid, score))
    return DetectionSet(per_image, variant, transform, tuple(data.get("classes", ())))


def detections_to_dict(dset: DetectionSet) -> dict:
    header = {"variant": dset.variant, "transform": dset.transform.kind}
    if dset.transform.kind == HFLIP:
        header["width"] = dset.transform.image_width
    recs = []
    for iid, dets in dset.per_image.items():
        for d in dets:
            recs.append({"image_id": iid, "class_id": d.class_id, "bbox": d.box.to_list(), "score": d.score})
    out = {"header": header}
    if dset.classes:
        out["classes"] = list(dset.classes)
    out["images"] = list(dset.per_image)
    out["detections"] = recs
    return out


def save_detections(dset: DetectionSet, path) -> Path:
    return write_json(path, detections_to_dict(dset))


# ---------------------------------------------------------------------------
# reports, weights, images
# ---------------------------------------------------------------------------

def save_report(report, path, meta: Optional[dict] = None) -> Path:
    """Write a report object (anything with ``to_dict``, or a plain dict)."""
    body = report.to_dict() if hasattr(report, "to_dict") else dict(report)
    if meta is not None:
        body = {"meta": meta, **body}
    return write_json(path, body)


def load_report(path, cls=None):
    data = read_json(path)
    if data is None:
        raise DataError(f"{path}: empty report file")
    if cls is None:
        return data
    return cls.from_dict(data)


def save_weights(weights: Mapping[str, float], path, gamma_f: Optional[float] = None) -> Path:
    body = {"weights": [{"image_id": k, "weight": float(v)} for k, v in weights.items()]}
    if gamma_f is not None:
        body = {"gamma_f": float(gamma_f), **body}
    return write_json(path, body)


def load_weights(path) -> Dict[str, float]:
    data = read_json(path)
    if data is None:
        return {}
    out = {}
    for i, rec in enumerate(data.get("weights", [])):
        out[str(_field(rec, "image_id", path, f"weights[{i}]"))] = float(_field(rec, "weight", path, f"weights[{i}]"))
    return out


class DirectoryImages:
    """Read-only raster source resolving ``ImageRecord.file_name`` under a root."""

    def __init__(self, root):
        self.root = Path(root)

    def __call__(self, record: ImageRecord) -> np.ndarray:
        from PIL import Image

        p = self.root / record.file_name
        try:
            with Image.open(p) as im:
                arr = np.asarray(im.convert("RGB"))
        except OSError as e:
            raise DataError(f"cannot decode image {p}: {e}") from e
        return arr


def save_png(arr: np.ndarray, path) -> Path:
    import io

    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(arr)).save(buf, format="PNG")
    return atomic_write_bytes(path, buf.getvalue())
