import numpy as np
import pytest

from labelsmith.core import BBox, Detection, ImageRecord, LabeledBox
from labelsmith.dataset_io import AnnotationSet, DetectionSet


def lb(x, y, w, h, k=0, ignore=False):
    return LabeledBox(BBox(x, y, w, h), k, ignore)


def det(x, y, w, h, k=0, s=1.0):
    return Detection(BBox(x, y, w, h), k, s)


def aset(images, classes=("a", "b", "c"), w=100, h=100):
    """``images`` maps image_id -> list of LabeledBox."""
    recs = tuple(ImageRecord(iid, f"{iid}.png", w, h, tuple(labels)) for iid, labels in images.items())
    return AnnotationSet(tuple(classes), recs)


def dset(per_image, classes=("a", "b", "c"), **kw):
    return DetectionSet({k: tuple(v) for k, v in per_image.items()}, classes=tuple(classes), **kw)


def brute_greedy(ious, thresh):
    """Repeatedly take the highest remaining pair; ties to the lower gt, then pred index."""
    n, m = ious.shape
    free_g, free_p = set(range(n)), set(range(m))
    pairs = []
    while True:
        best = None
        for g in sorted(free_g):
            for p in sorted(free_p):
                v = ious[g, p]
                if v >= thresh and (best is None or v > best[0]):
                    best = (v, g, p)
        if best is None:
            return pairs
        pairs.append((best[1], best[2]))
        free_g.discard(best[1])
        free_p.discard(best[2])


def random_int_boxes(rng, n, lo=0, hi=20, smax=10):
    xy = rng.integers(lo, hi, size=(n, 2))
    wh = rng.integers(1, smax + 1, size=(n, 2))
    return np.hstack([xy, wh]).astype(np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria append (number, title, passed, detail) here; printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, title, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {n:>2}. {title}: {detail}")
