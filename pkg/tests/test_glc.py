import numpy as np
import pytest

from labelsmith.core import BBox, BoxTransform, Detection, LabeledBox, apply_transform, iou
from labelsmith.error_sim import ErrorSpec, inject, level_preset
from labelsmith.exceptions import ConfigError, DataError
from labelsmith.glc import (
    CorrectionReport,
    GlcConfig,
    ImageCorrections,
    RemovedGT,
    apply_corrections,
    consistency,
    correct_noisy_gt,
    detect_false_gt,
    detect_missing_gt,
    image_consistency,
    run_glc,
)
from labelsmith.sim_oracle import SceneSpec, gen_scenes, perfect_oracle

from conftest import aset, det, dset, lb

CFG = GlcConfig()


@pytest.fixture(scope="module")
def clean():
    return gen_scenes(SceneSpec(n_images=150, image_w=320, image_h=240, n_classes=4, seed=21)).annotations


@pytest.fixture(scope="module")
def oracle(clean):
    return perfect_oracle(clean)


class TestConsistency:
    def test_perfect(self):
        o = [det(0, 0, 10, 10)]
        assert image_consistency(o, [o, o, o]).mean(axis=1).tolist() == [1.0]

    def test_unmatched_counts_zero(self):
        o = [det(0, 0, 10, 10)]
        v = [det(0, 0, 10, 8)]  # iou 0.8
        mu = image_consistency(o, [v, []]).mean(axis=1)
        assert mu[0] == pytest.approx(0.4)

    def test_hflip_mapped_back(self):
        o = dset({"a": [det(5, 5, 10, 20)]})
        t = BoxTransform("hflip", 100)
        f = dset({"a": [Detection(apply_transform(t, BBox(5, 5, 10, 20)), 0, 1.0)]}, variant="hflip", transform=t)
        [rec] = consistency(o, [f])
        assert rec.mu == 1.0 and rec.ious == (1.0,)

    def test_needs_variants(self):
        with pytest.raises(ConfigError):
            consistency(dset({"a": []}), [])

    def test_variant_missing_image(self):
        with pytest.raises(DataError):
            consistency(dset({"a": [], "b": []}), [dset({"a": []})])


class TestFalse:
    def test_low_score_overlap_saves(self):
        assert detect_false_gt([lb(0, 0, 10, 10)], [det(8, 8, 10, 10, s=0.12)]) == []

    def test_below_floor_ignored(self):
        assert detect_false_gt([lb(0, 0, 10, 10)], [det(8, 8, 10, 10, s=0.05)]) == [0]

    def test_empty_region(self):
        assert detect_false_gt([lb(0, 0, 10, 10), lb(50, 50, 5, 5)], [det(0, 0, 10, 10)]) == [1]


class TestNoisy:
    def test_replaced(self):
        gt = [lb(0, 0, 10, 10)]
        preds = [det(0, 0, 10, 7, s=0.9)]  # iou 0.7
        rep, fixes, used = correct_noisy_gt(gt, np.array([0.95]), preds)
        assert [r.new_box for r in rep] == [BBox(0, 0, 10, 7)] and used == [0]

    def test_high_iou_untouched(self):
        gt = [lb(0, 0, 10, 10)]
        preds = [det(0, 0, 10, 9.5, s=0.9)]  # iou 0.95
        for mu in (0.5, 1.0):
            rep, fixes, _ = correct_noisy_gt(gt, np.array([mu]), preds)
            assert rep == [] and fixes == []

    def test_inconsistent_untouched(self):
        rep, fixes, _ = correct_noisy_gt([lb(0, 0, 10, 10)], np.array([0.9]), [det(0, 0, 10, 7, 1, s=0.9)])
        assert rep == [] and fixes == []

    def test_class_fix(self):
        rep, fixes, _ = correct_noisy_gt([lb(0, 0, 10, 10, 0)], np.array([1.0]), [det(0, 0, 10, 10, 2, s=0.9)])
        assert rep == [] and [(f.old_class, f.new_class) for f in fixes] == [(0, 2)]

    def test_class_fix_disabled(self):
        cfg = GlcConfig(correct_classes=False)
        rep, fixes, _ = correct_noisy_gt([lb(0, 0, 10, 10, 0)], np.array([1.0]), [det(0, 0, 10, 10, 2, s=0.9)], cfg)
        assert fixes == []


class TestMissing:
    def test_promoted(self):
        [a] = detect_missing_gt([lb(0, 0, 10, 10)], np.array([0.95]), [det(50, 50, 10, 10, 1, s=0.8)])
        assert a.label == LabeledBox(BBox(50, 50, 10, 10), 1)

    def test_represented_not_promoted(self):
        assert detect_missing_gt([lb(0, 0, 10, 10)], np.array([0.95]), [det(0, 0, 10, 6, s=0.8)]) == []  # iou 0.6

    def test_low_score_or_inconsistent(self):
        assert detect_missing_gt([], np.array([0.95]), [det(0, 0, 10, 10, s=0.3)]) == []
        assert detect_missing_gt([], np.array([0.9]), [det(0, 0, 10, 10, s=0.8)]) == []

    def test_duplicates_collapse(self):
        preds = [det(0, 0, 10, 10, s=0.8), det(0, 0, 10, 9, s=0.9)]
        [a] = detect_missing_gt([], np.array([1.0, 1.0]), preds)
        assert a.det_index == 1


class TestApply:
    def test_empty_report(self, clean):
        assert apply_corrections(clean, CorrectionReport()) == clean

    def test_remove_one(self):
        ds = aset({"a": [lb(0, 0, 1, 1), lb(5, 5, 2, 2, 1)]})
        rep = CorrectionReport([ImageCorrections("a", [RemovedGT(0, lb(0, 0, 1, 1))])])
        out = apply_corrections(ds, rep)
        assert out.images[0].labels == (lb(5, 5, 2, 2, 1),)
        assert len(ds.images[0].labels) == 2


class TestPerfectOracle:
    def run(self, clean, oracle, spec):
        corrupted, ledger = inject(clean, spec)
        rep = run_glc(corrupted, oracle.original, oracle.augmented)
        return corrupted, ledger, rep, apply_corrections(corrupted, rep)

    def test_level1_recovery(self, clean, oracle):
        corrupted, ledger, rep, fixed = self.run(clean, oracle, level_preset(1, 4))
        by = rep.by_id()
        flagged = {(c.image_id, r.index) for c in rep.images for r in c.removed_false_gt}
        assert {(i, k) for i, k, _ in ledger.added_false} == flagged
        added = {(c.image_id, a.label) for c in rep.images for a in c.added_missing_gt}
        assert {(i, b) for i, _, b in ledger.dropped} == added
        for iid, idx, orig, _ in ledger.perturbed:
            [r] = [r for r in by[iid].replaced_noisy_boxes if r.index == idx]
            assert iou(r.new_box, orig) == pytest.approx(1.0, abs=1e-6)
        # full round trip up to label order
        want = {img.image_id: sorted(img.labels, key=repr) for img in clean.images}
        got = {img.image_id: sorted(img.labels, key=repr) for img in fixed.images}
        assert got == want

    def test_class_flips(self, clean, oracle):
        _, ledger, rep, fixed = self.run(clean, oracle, ErrorSpec.from_dict({**level_preset(1, 8).to_dict(), "class_flip_frac": 0.2}))
        assert ledger.class_flipped
        ok = 0
        clean_by = clean.by_id()
        fixed_by = fixed.by_id()
        for iid, idx, old, new in ledger.class_flipped:
            box_classes = {(x.box, x.class_id) for x in fixed_by[iid].labels}
            target = [x for x in clean_by[iid].labels if x.class_id == old]
            ok += any((x.box, old) in box_classes for x in target)
        assert ok / len(ledger.class_flipped) >= 0.95

    def test_idempotent(self, clean, oracle):
        _, _, _, fixed = self.run(clean, oracle, level_preset(2, 1))
        again = apply_corrections(fixed, run_glc(fixed, oracle.original, oracle.augmented))
        assert again == fixed

    def test_clean_set_untouched(self, clean, oracle):
        rep = run_glc(clean, oracle.original, oracle.augmented)
        assert all(c.is_empty() for c in rep.images)

    def test_images_without_predictions_untouched(self, clean, oracle):
        corrupted, _ = inject(clean, level_preset(2, 2))
        keep = {img.image_id for img in clean.images[:50]}
        sub = lambda d: type(d)({k: v for k, v in d.per_image.items() if k in keep}, d.variant, d.transform, d.classes)
        rep = run_glc(corrupted, sub(oracle.original), [sub(a) for a in oracle.augmented])
        assert {c.image_id for c in rep.images} <= keep


def test_monotone_in_gamma_c():
    from labelsmith.sim_oracle import DETECTOR_PRESETS, gen_detections
    from dataclasses import replace

    gt = gen_scenes(SceneSpec(n_images=80, seed=5)).annotations
    corrupted, _ = inject(gt, level_preset(1, 3))
    b = gen_detections(gt, replace(DETECTOR_PRESETS["calibrated"], variant_jitter=0.05, seed=4))
    prev = None
    for g in (0.5, 0.6, 0.7, 0.8, 0.9, 0.95):
        rep = run_glc(corrupted, b.original, b.augmented, GlcConfig(gamma_c=g))
        adds = {(c.image_id, a.det_index) for c in rep.images for a in c.added_missing_gt}
        reps = {(c.image_id, r.index) for c in rep.images for r in c.replaced_noisy_boxes}
        if prev is not None:
            assert adds <= prev[0] and reps <= prev[1]
        prev = (adds, reps)


@pytest.mark.parametrize("kw", [{"gamma_c": 0.0}, {"gamma_o": 1.2}, {"delta_floor": 0.5, "delta_s": 0.4}])
def test_bad_config(kw):
    with pytest.raises(ConfigError):
        GlcConfig(**kw)
