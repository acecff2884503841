"""
Hot numeric kernels: pairwise box overlap, greedy matching, bilinear resize.

Every kernel exists twice: a numba ``@njit`` version and a pure-numpy version.
Both compute in the same operation order so results agree bit for bit. The
backend is picked once at import time:

    LABELSMITH_DISABLE_NUMBA=1   force the numpy path
    (numba not importable)       numpy path as well

Boxes are float64 arrays of shape (n, 4) in [x, y, w, h] layout.
"""

import logging
import os

import numpy as np

logger = logging.getLogger(__name__)

_DISABLED = os.environ.get("LABELSMITH_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

BACKEND = "numba" if (HAS_NUMBA and not _DISABLED) else "numpy"


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _np_overlap(a1, aw, b1, bw):
    # a span nested in the other contributes its own length, so iou(a, a) is exactly 1
    a2 = a1 + aw
    b2 = b1 + bw
    gen = np.minimum(a2, b2) - np.maximum(a1, b1)
    a_in = (a1 >= b1) & (a2 <= b2)
    b_in = (b1 >= a1) & (b2 <= a2)
    gen = np.where(b_in, bw, gen)
    gen = np.where(a_in, aw, gen)
    gen = np.where(a_in & b_in, np.minimum(aw, bw), gen)
    return np.where(gen > 0.0, gen, 0.0)


def _np_pairwise_intersection(a, b):
    iw = _np_overlap(a[:, 0:1], a[:, 2:3], b[:, 0][None, :], b[:, 2][None, :])
    ih = _np_overlap(a[:, 1:2], a[:, 3:4], b[:, 1][None, :], b[:, 3][None, :])
    return iw * ih


def np_pairwise_iou(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    inter = _np_pairwise_intersection(a, b)
    area_a = (a[:, 2] * a[:, 3])[:, None]
    area_b = (b[:, 2] * b[:, 3])[None, :]
    union = area_a + area_b - inter
    return np.where(inter > 0.0, np.minimum(inter / np.where(union > 0.0, union, 1.0), 1.0), 0.0)


def np_pairwise_intersection(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    return _np_pairwise_intersection(a, b)


def np_greedy_match(iou, thresh):
    iou = np.asarray(iou, dtype=np.float64)
    n, m = iou.shape
    gi, pj = np.nonzero(iou >= thresh)
    if gi.size == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    vals = iou[gi, pj]
    # primary key: descending iou; then ascending gt index, then ascending pred index
    order = np.lexsort((pj, gi, -vals))
    used_g = np.zeros(n, dtype=bool)
    used_p = np.zeros(m, dtype=bool)
    out_g = []
    out_p = []
    for idx in order:
        g = gi[idx]
        p = pj[idx]
        if used_g[g] or used_p[p]:
            continue
        used_g[g] = True
        used_p[p] = True
        out_g.append(g)
        out_p.append(p)
    return np.asarray(out_g, dtype=np.int64), np.asarray(out_p, dtype=np.int64)


def np_bilinear_resize(img, out_h, out_w):
    img = np.asarray(img)
    in_h, in_w = img.shape[0], img.shape[1]
    src = img.astype(np.float64)
    if src.ndim == 2:
        src = src[:, :, None]

    sy = (np.arange(out_h, dtype=np.float64) + 0.5) * (in_h / out_h) - 0.5
    sy = np.minimum(np.maximum(sy, 0.0), in_h - 1.0)
    y0 = np.floor(sy).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    wy = (sy - y0)[:, None, None]

    sx = (np.arange(out_w, dtype=np.float64) + 0.5) * (in_w / out_w) - 0.5
    sx = np.minimum(np.maximum(sx, 0.0), in_w - 1.0)
    x0 = np.floor(sx).astype(np.int64)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wx = (sx - x0)[None, :, None]

    p00 = src[y0][:, x0]
    p01 = src[y0][:, x1]
    p10 = src[y1][:, x0]
    p11 = src[y1][:, x1]
    top = (1.0 - wx) * p00 + wx * p01
    bot = (1.0 - wx) * p10 + wx * p11
    val = (1.0 - wy) * top + wy * bot
    out = np.floor(val + 0.5)
    out = np.minimum(np.maximum(out, 0.0), 255.0).astype(np.uint8)
    if img.ndim == 2:
        out = out[:, :, 0]
    return out


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def _nb_overlap(a1, aw, b1, bw):
        a2 = a1 + aw
        b2 = b1 + bw
        a_in = a1 >= b1 and a2 <= b2
        b_in = b1 >= a1 and b2 <= a2
        if a_in and b_in:
            return min(aw, bw)
        if a_in:
            return aw
        if b_in:
            return bw
        v = min(a2, b2) - max(a1, b1)
        return v if v > 0.0 else 0.0

    @njit(cache=True)
    def _nb_intersection(a, b):
        n = a.shape[0]
        m = b.shape[0]
        out = np.zeros((n, m))
        for i in range(n):
            for j in range(m):
                iw = _nb_overlap(a[i, 0], a[i, 2], b[j, 0], b[j, 2])
                ih = _nb_overlap(a[i, 1], a[i, 3], b[j, 1], b[j, 3])
                if iw > 0.0 and ih > 0.0:
                    out[i, j] = iw * ih
        return out

    @njit(cache=True)
    def _nb_iou(a, b):
        inter = _nb_intersection(a, b)
        n = a.shape[0]
        m = b.shape[0]
        out = np.zeros((n, m))
        for i in range(n):
            area_a = a[i, 2] * a[i, 3]
            for j in range(m):
                it = inter[i, j]
                if it > 0.0:
                    union = area_a + b[j, 2] * b[j, 3] - it
                    out[i, j] = min(it / union, 1.0)
        return out

    @njit(cache=True)
    def _nb_greedy_match(iou, thresh):
        n, m = iou.shape
        cnt = 0
        for i in range(n):
            for j in range(m):
                if iou[i, j] >= thresh:
                    cnt += 1
        gi = np.empty(cnt, np.int64)
        pj = np.empty(cnt, np.int64)
        vals = np.empty(cnt, np.float64)
        c = 0
        for i in range(n):
            for j in range(m):
                if iou[i, j] >= thresh:
                    gi[c] = i
                    pj[c] = j
                    vals[c] = iou[i, j]
                    c += 1
        # candidates are generated in (gi, pj) order, so a stable sort on -iou
        # reproduces the (iou desc, gi asc, pj asc) ordering
        order = np.argsort(-vals, kind="mergesort")
        used_g = np.zeros(n, np.bool_)
        used_p = np.zeros(m, np.bool_)
        out_g = np.empty(min(n, m), np.int64)
        out_p = np.empty(min(n, m), np.int64)
        k = 0
        for t in range(cnt):
            idx = order[t]
            g = gi[idx]
            p = pj[idx]
            if used_g[g] or used_p[p]:
                continue
            used_g[g] = True
            used_p[p] = True
            out_g[k] = g
            out_p[k] = p
            k += 1
        return out_g[:k], out_p[:k]

    @njit(cache=True)
    def _nb_bilinear_resize(src, out_h, out_w):
        in_h, in_w, ch = src.shape
        out = np.empty((out_h, out_w, ch), np.uint8)
        scale_y = in_h / out_h
        scale_x = in_w / out_w
        x0s = np.empty(out_w, np.int64)
        x1s = np.empty(out_w, np.int64)
        wxs = np.empty(out_w, np.float64)
        for x in range(out_w):
            sx = (x + 0.5) * scale_x - 0.5
            sx = min(max(sx, 0.0), in_w - 1.0)
            x0 = int(np.floor(sx))
            x0s[x] = x0
            x1s[x] = min(x0 + 1, in_w - 1)
            wxs[x] = sx - x0
        for y in range(out_h):
            sy = (y + 0.5) * scale_y - 0.5
            sy = min(max(sy, 0.0), in_h - 1.0)
            y0 = int(np.floor(sy))
            y1 = min(y0 + 1, in_h - 1)
            wy = sy - y0
            for x in range(out_w):
                x0 = x0s[x]
                x1 = x1s[x]
                wx = wxs[x]
                for c in range(ch):
                    top = (1.0 - wx) * src[y0, x0, c] + wx * src[y0, x1, c]
                    bot = (1.0 - wx) * src[y1, x0, c] + wx * src[y1, x1, c]
                    v = np.floor((1.0 - wy) * top + wy * bot + 0.5)
                    if v < 0.0:
                        v = 0.0
                    elif v > 255.0:
                        v = 255.0
                    out[y, x, c] = np.uint8(v)
        return out

    def nb_pairwise_iou(a, b):
        a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
        b = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
        return _nb_iou(a, b)

    def nb_pairwise_intersection(a, b):
        a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
        b = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
        return _nb_intersection(a, b)

    def nb_greedy_match(iou, thresh):
        return _nb_greedy_match(np.ascontiguousarray(iou, dtype=np.float64), float(thresh))

    def nb_bilinear_resize(img, out_h, out_w):
        img = np.asarray(img)
        src = img.astype(np.float64)
        if src.ndim == 2:
            src = src[:, :, None]
        out = _nb_bilinear_resize(np.ascontiguousarray(src), int(out_h), int(out_w))
        if img.ndim == 2:
            out = out[:, :, 0]
        return out


IMPLEMENTATIONS = {
    "numpy": {
        "pairwise_iou": np_pairwise_iou,
        "pairwise_intersection": np_pairwise_intersection,
        "greedy_match": np_greedy_match,
        "bilinear_resize": np_bilinear_resize,
    },
}
if HAS_NUMBA:
    IMPLEMENTATIONS["numba"] = {
        "pairwise_iou": nb_pairwise_iou,
        "pairwise_intersection": nb_pairwise_intersection,
        "greedy_match": nb_greedy_match,
        "bilinear_resize": nb_bilinear_resize,
    }

_active = IMPLEMENTATIONS[BACKEND]

#: (n, 4) x (m, 4) -> (n, m) IoU matrix
pairwise_iou = _active["pairwise_iou"]
#: (n, 4) x (m, 4) -> (n, m) intersection areas
pairwise_intersection = _active["pairwise_intersection"]
#: (n, m) IoU matrix, threshold -> (gt indices, pred indices) in pick order
greedy_match = _active["greedy_match"]
#: (h, w[, c]) uint8 image -> (out_h, out_w[, c]) uint8, half-pixel-centre bilinear
bilinear_resize = _active["bilinear_resize"]

logger.debug("labelsmith kernel backend: %s", BACKEND)
