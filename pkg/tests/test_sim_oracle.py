import math
from dataclasses import replace

import numpy as np
import pytest

from labelsmith.core import apply_transform, intersects
from labelsmith.exceptions import ConfigError
from labelsmith.quality_eval import quality
from labelsmith.sim_oracle import (
    DETECTOR_PRESETS,
    SCENE_PRESETS,
    DetectorSpec,
    SceneSpec,
    class_colors,
    gen_detections,
    gen_scenes,
    perfect_oracle,
)


def three_sigma(n, p):
    return 3 * math.sqrt(n * p * (1 - p))


class TestScenes:
    def test_weights_binomial(self):
        b = gen_scenes(SceneSpec(n_images=1000, n_classes=2, class_weights=(9, 1), boxes_per_image=(1, 1)))
        counts = [0, 0]
        for img in b.annotations.images:
            for x in img.labels:
                counts[x.class_id] += 1
        assert sum(counts) == 1000
        assert abs(counts[0] - 900) <= three_sigma(1000, 0.9)

    def test_power_law_weights(self):
        w = SceneSpec(n_classes=3, class_weights=1.0).weights()
        np.testing.assert_allclose(w, np.array([1, 1 / 2, 1 / 3]) / (11 / 6))

    def test_one_box_each(self):
        b = gen_scenes(SceneSpec(n_images=200, boxes_per_image=(1, 1)))
        assert all(len(img.labels) == 1 for img in b.annotations.images)

    def test_deterministic(self):
        s = SceneSpec(n_images=30, seed=5)
        assert gen_scenes(s).annotations == gen_scenes(s).annotations
        assert gen_scenes(s).annotations != gen_scenes(replace(s, seed=6)).annotations

    def test_non_overlapping_and_inside(self):
        s = SceneSpec(n_images=200, boxes_per_image=(4, 8))
        for img in gen_scenes(s).annotations.images:
            boxes = [x.box for x in img.labels]
            for i, a in enumerate(boxes):
                assert a.x >= 0 and a.y >= 0 and a.x2 <= img.width and a.y2 <= img.height
                for b in boxes[i + 1 :]:
                    assert not intersects(a, b)

    def test_rasters(self):
        b = gen_scenes(SceneSpec(n_images=3, n_classes=3))
        colors = class_colors(3)
        for img in b.annotations.images:
            r = b.rasters[img.image_id]
            assert r.shape == (img.height, img.width, 3) and r.dtype == np.uint8
            mask = np.zeros(r.shape[:2], bool)
            for x in img.labels:
                x0, y0 = int(x.box.x), int(x.box.y)
                patch = r[y0 : y0 + int(x.box.h), x0 : x0 + int(x.box.w)]
                assert np.all(patch == colors[x.class_id])
                mask[y0 : y0 + int(x.box.h), x0 : x0 + int(x.box.w)] = True
            assert np.all(r[~mask] == 0)

    @pytest.mark.parametrize(
        "kw", [dict(n_classes=0), dict(boxes_per_image=(3, 1)), dict(box_size=(0, 4)), dict(box_size=(10, 200)), dict(class_weights=(1, -1, 1, 1, 1))]
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            SceneSpec(**kw)

    def test_dict_round_trip(self):
        s = SCENE_PRESETS["imbalanced"]
        assert SceneSpec.from_dict(s.to_dict()) == s
        with pytest.raises(ConfigError):
            SceneSpec.from_dict({"bogus": 1})


class TestDetections:
    GT = gen_scenes(SceneSpec(n_images=60, seed=2)).annotations

    def test_perfect_every_variant(self):
        b = perfect_oracle(self.GT)
        for ds in b.variants.values():
            for img in self.GT.images:
                got = [apply_transform(ds.transform, d.box) for d in ds.get(img.image_id)]
                assert got == [x.box for x in img.labels]
                assert all(d.score == 1.0 for d in ds.get(img.image_id))
        q = quality(b.original, self.GT)
        assert (q.MDR, q.UDR, q.mIoU) == (0.0, 0.0, 1.0)

    def test_miss_rate_binomial(self):
        gt = gen_scenes(SceneSpec(n_images=2000, boxes_per_image=(5, 5), seed=11)).annotations
        n = sum(len(img.labels) for img in gt.images)
        assert n >= 9500
        b = gen_detections(gt, DetectorSpec(miss_prob=0.3, variants=("original",), seed=12))
        q = quality(b.original, gt)
        assert abs(q.MDR * n - 0.3 * n) <= three_sigma(n, 0.3)

    def test_per_class_miss(self):
        gt = gen_scenes(SceneSpec(n_images=400, n_classes=2, class_weights=(1, 1), seed=1)).annotations
        b = gen_detections(gt, DetectorSpec(miss_prob=(0.0, 1.0), variants=("original",)))
        for img in gt.images:
            assert len(b.original.get(img.image_id)) == sum(1 for x in img.labels if x.class_id == 0)

    def test_heterogeneous_has_hard_images(self):
        gt = gen_scenes(replace(SCENE_PRESETS["default"], n_images=1000, seed=1)).annotations
        t = gen_detections(gt, replace(DETECTOR_PRESETS["heterogeneous"], seed=2)).truth
        mdr = [v for v in t.per_image_mdr().values() if v is not None]
        assert np.mean(np.array(mdr) > 0.5) >= 0.2

    def test_false_positives_avoid_gt(self):
        b = gen_detections(self.GT, replace(DETECTOR_PRESETS["calibrated"], miss_prob=1.0, seed=3))
        for img in self.GT.images:
            for d in b.original.get(img.image_id):
                assert not any(intersects(d.box, x.box) for x in img.labels)

    @pytest.mark.parametrize("preset", ["perfect", "calibrated", "heterogeneous"])
    def test_ledger_matches_quality(self, preset):
        b = gen_detections(self.GT, replace(DETECTOR_PRESETS[preset], seed=4))
        q = quality(b.original, self.GT)
        per = {r.image_id: r for r in q.images}
        for t in b.truth.images:
            r = per[t.image_id]
            assert r.n_gt - r.n_matched == t.n_missed
            assert r.n_pred - r.n_matched == t.n_fp
        assert q.MDR == b.truth.MDR and q.UDR == b.truth.UDR

    def test_deterministic(self):
        s = replace(DETECTOR_PRESETS["heterogeneous"], seed=7)
        a, b = gen_detections(self.GT, s), gen_detections(self.GT, s)
        for v in s.variants:
            assert a.variants[v] == b.variants[v]
        assert a.truth.to_dict() == b.truth.to_dict()

    def test_scores_in_unit_interval(self):
        b = gen_detections(self.GT, replace(DETECTOR_PRESETS["heterogeneous"], seed=8))
        for ds in b.variants.values():
            for dets in ds.per_image.values():
                assert all(0.0 <= d.score <= 1.0 for d in dets)

    @pytest.mark.parametrize(
        "kw",
        [
            dict(miss_prob=1.5),
            dict(matched_score_mean=0.2, false_score_mean=0.3),
            dict(fp_rate=-1),
            dict(difficulty=(0, 1)),
            dict(variants=("hflip",)),
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            DetectorSpec(**kw)

    def test_dict_round_trip(self):
        s = DETECTOR_PRESETS["heterogeneous"]
        assert DetectorSpec.from_dict(s.to_dict()) == s
