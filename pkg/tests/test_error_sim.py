import pytest

from labelsmith.core import BBox, iou
from labelsmith.error_sim import ErrorSpec, InjectionLedger, inject, level_preset, perturb_box, restore
from labelsmith.exceptions import ConfigError, DataError
from labelsmith.sim_oracle import SceneSpec, gen_scenes

from conftest import aset, lb

SPECS = {
    "level1": lambda s: level_preset(1, s),
    "level2": lambda s: level_preset(2, s),
    "flip": lambda s: ErrorSpec(class_flip_frac=0.2, seed=s),
}


@pytest.fixture(scope="module")
def clean():
    return gen_scenes(SceneSpec(n_images=60, image_w=320, image_h=240, n_classes=4, seed=2)).annotations


class TestPresets:
    def test_level1(self):
        s = level_preset(1)
        assert (s.rho_drop, s.false_per_image, s.eps_b, s.noise_image_frac) == (0.20, 1, 0.1, 0.20)
        assert s.false_w_range == s.false_h_range == (10.0, 100.0)
        assert s.class_flip_frac == 0.0

    def test_level2(self):
        s = level_preset(2)
        assert (s.rho_drop, s.false_per_image, s.eps_b, s.noise_image_frac) == (0.50, 5, 0.2, 0.20)
        assert s.false_w_range == s.false_h_range == (10.0, 100.0)

    def test_unknown(self):
        with pytest.raises(ConfigError):
            level_preset(3)

    @pytest.mark.parametrize("kw", [{"rho_drop": 1.5}, {"eps_b": -0.1}, {"false_w_range": (5, 1)}, {"false_per_image": 1.5}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            ErrorSpec(**kw)

    def test_dict_round_trip(self):
        s = level_preset(2, seed=7)
        assert ErrorSpec.from_dict(s.to_dict()) == s


class TestPerturb:
    def test_hand_case(self):
        assert perturb_box(BBox(100, 50, 40, 20), 0.1, (1, 1, 1, 1), 1024, 512) == BBox(102, 51, 44, 22)

    def test_shrink(self):
        assert perturb_box(BBox(100, 50, 40, 20), 0.1, (-1, -1, 1, -1), 1024, 512) == BBox(98, 51, 36, 18)

    def test_clamped(self, rng):
        for _ in range(200):
            w, h = rng.uniform(1, 30, 2)
            b = BBox(float(rng.uniform(0, 50 - w)), float(rng.uniform(0, 50 - h)), float(w), float(h))
            p = perturb_box(b, float(rng.uniform(0, 0.9)), rng.choice([-1, 1], 4), 50, 50)
            assert p.x >= 0 and p.y >= 0 and p.x2 <= 50 and p.y2 <= 50 and p.w >= 1 - 1e-12 and p.h >= 1 - 1e-12


class TestInject:
    def test_identity_spec(self, clean):
        out, ledger = inject(clean, ErrorSpec())
        assert out == clean and ledger.is_empty()

    def test_exact_drop_count(self):
        ds = aset({f"i{k}": [lb(j * 3, 0, 2, 2) for j in range(10)] for k in range(100)})
        out, ledger = inject(ds, ErrorSpec(rho_drop=0.2))
        assert len(ledger.dropped) == 200
        assert sum(len(i.labels) for i in out.images) == 800

    def test_false_boxes_avoid_gt(self, clean):
        out, ledger = inject(clean, level_preset(2, 3))
        by_id = clean.by_id()
        for iid, _, f in ledger.added_false:
            assert all(iou(f.box, g.box) == 0.0 for g in by_id[iid].labels)
            img = by_id[iid]
            assert f.box.x >= 0 and f.box.x2 <= img.width and f.box.y2 <= img.height

    def test_saturated_image_skips(self):
        ds = aset({"a": [lb(0, 0, 100, 100)]})
        out, ledger = inject(ds, ErrorSpec(false_per_image=2))
        assert ledger.skipped_false == [("a", 2)] and out == ds

    def test_noise_count(self, clean):
        _, ledger = inject(clean, ErrorSpec(noise_image_frac=0.2, eps_b=0.1))
        touched = {iid for iid, *_ in ledger.perturbed}
        assert len(touched) == 12
        by_id = clean.by_id()
        # every box of a touched image is perturbed
        assert len(ledger.perturbed) == sum(len(by_id[i].labels) for i in touched)
        assert all(o != p for _, _, o, p in ledger.perturbed)

    def test_flips_change_class(self, clean):
        _, ledger = inject(clean, ErrorSpec(class_flip_frac=0.2))
        n = sum(len(i.labels) for i in clean.images)
        assert len(ledger.class_flipped) == int(0.2 * n)
        assert all(a != b for *_, a, b in ledger.class_flipped)

    def test_deterministic(self, clean):
        assert inject(clean, level_preset(1, 5)) == inject(clean, level_preset(1, 5))
        assert inject(clean, level_preset(1, 5))[1].dropped != inject(clean, level_preset(1, 6))[1].dropped

    @pytest.mark.parametrize("name", sorted(SPECS))
    def test_round_trip(self, clean, name):
        for seed in range(20):
            out, ledger = inject(clean, SPECS[name](seed))
            assert out != clean
            assert restore(out, ledger) == clean

    def test_combined_round_trip_via_files(self, clean, tmp_path):
        from labelsmith.dataset_io import load_annotations, load_report, save_annotations, save_report

        spec = ErrorSpec.from_dict({**level_preset(2, 1).to_dict(), "class_flip_frac": 0.2})
        out, ledger = inject(clean, spec)
        out2 = load_annotations(save_annotations(out, tmp_path / "c.json"))
        ledger2 = load_report(save_report(ledger, tmp_path / "l.json"), InjectionLedger)
        assert restore(out2, ledger2) == clean

    def test_restore_detects_mismatch(self, clean):
        out, ledger = inject(clean, ErrorSpec(class_flip_frac=0.2))
        with pytest.raises(DataError):
            restore(clean, ledger)

    def test_total_drop_allowed(self, clean):
        out, ledger = inject(clean, ErrorSpec(rho_drop=1.0))
        assert all(not i.labels for i in out.images)
        assert restore(out, ledger) == clean
