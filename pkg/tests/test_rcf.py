import math
from collections import Counter
from dataclasses import replace

import pytest

from labelsmith.class_stats import class_frequencies
from labelsmith.exceptions import ConfigError, DataError
from labelsmith.rcf import COMMON, RARE_ORIGINS, BatchPlan, plan_epoch, plan_epochs, rare_count, stratify
from labelsmith.sim_oracle import SceneSpec, gen_scenes

from conftest import aset, lb


def sim(m, seed=0):
    return gen_scenes(SceneSpec(n_images=m, n_classes=5, class_weights=1.3, boxes_per_image=(0, 4), seed=seed)).annotations


def check_plan(plan, rare, common, pair=True):
    for ep in plan.epochs:
        seen = Counter()
        for batch in ep:
            origins = [e.origin for e in batch]
            assert len(batch) <= plan.batch_size
            if pair:
                assert origins[:2] == list(RARE_ORIGINS)
            else:
                assert origins[0] == RARE_ORIGINS[0] and origins.count(RARE_ORIGINS[1]) == 0
            seen.update(e.image_id for e in batch if e.origin == COMMON)
        assert seen == Counter(common)
        # all batches but the last are full
        assert all(len(b) == plan.batch_size for b in ep[:-1])


class TestStratify:
    @pytest.mark.parametrize("m,B,k", [(100, 8, 13), (8, 8, 1), (9, 8, 2)])
    def test_k(self, m, B, k):
        assert rare_count(m, B) == k
        rare, common = stratify(sim(m), batch_size=B)
        assert len(rare) == k and len(common) == m - k

    def test_ties_by_id(self):
        ds = aset({f"i{k}": [lb(0, 0, 1, 1, 0)] for k in (3, 1, 2, 0)})
        rare, common = stratify(ds, batch_size=2)
        assert rare == ["i0", "i1"] and common == ["i3", "i2"]

    def test_rarest_images_win(self):
        ds = aset({"a": [lb(0, 0, 1, 1, 0)] * 1, "b": [lb(0, 0, 1, 1, 0)], "c": [lb(0, 0, 1, 1, 1)], "d": [lb(0, 0, 1, 1, 0)]})
        assert stratify(ds, batch_size=4)[0] == ["c"]

    def test_gamma_invariant(self, rng):
        ds = sim(60, seed=4)
        ref = stratify(ds, batch_size=4)
        for g in rng.uniform(1.01, 100, size=10):
            assert stratify(ds, batch_size=4, gamma_f=float(g)) == ref

    def test_collages_forced_common(self):
        ds = sim(16)
        rare, _ = stratify(ds, batch_size=4)
        recs = [replace(r, is_collage=True) if r.image_id == rare[0] else r for r in ds.images]
        rare2, common2 = stratify(ds.with_images(recs), batch_size=4)
        assert rare[0] not in rare2 and rare[0] in common2

    def test_too_few_images(self):
        with pytest.raises(DataError):
            stratify(sim(3), batch_size=8)


class TestPlan:
    def test_counting_example(self):
        rare = ["r1", "r2"]
        common = [f"c{i}" for i in range(1, 7)]
        plan = plan_epoch(rare, common, 4, seed=0)
        [ep] = plan.epochs
        # every common image once per epoch: 6 commons at 2 per batch is 3 batches
        assert len(ep) == 3
        for batch in ep:
            assert sum(e.origin in RARE_ORIGINS for e in batch) == 2
            assert sum(e.origin == COMMON for e in batch) == 2
            assert all(e.augment for e in batch if e.origin in RARE_ORIGINS)
            assert not any(e.augment for e in batch if e.origin == COMMON)
        check_plan(plan, rare, common)

    def test_unpaired(self):
        plan = plan_epoch(["r"], [f"c{i}" for i in range(9)], 4, seed=1, pair_rare=False)
        for batch in plan.epochs[0]:
            assert sum(e.origin in RARE_ORIGINS for e in batch) == 1
        check_plan(plan, ["r"], [f"c{i}" for i in range(9)], pair=False)

    def test_deterministic(self):
        rare, common = ["a", "b", "c"], [str(i) for i in range(20)]
        assert plan_epochs(rare, common, 6, 3, seed=9) == plan_epochs(rare, common, 6, 3, seed=9)
        assert plan_epochs(rare, common, 6, 3, seed=9) != plan_epochs(rare, common, 6, 3, seed=10)

    def test_rare_stream_bounds(self):
        rare, common = ["a", "b", "c"], [str(i) for i in range(40)]
        plan = plan_epoch(rare, common, 4, seed=2)
        ep = plan.epochs[0]
        for origin in RARE_ORIGINS:
            c = Counter(b[[e.origin for e in b].index(origin)].image_id for b in ep)
            assert set(c) == set(rare)
            assert max(c.values()) <= math.ceil(len(ep) / len(rare)) + 1

    def test_random_configs(self, rng):
        for _ in range(50):
            B = int(rng.choice([4, 6, 8, 12, 16]))
            m = int(rng.integers(B, 300))
            g = float(rng.uniform(1.5, 50))
            ds = sim(m, seed=int(rng.integers(1 << 30)))
            rare, common = stratify(ds, class_frequencies(ds), B, g)
            assert len(rare) == math.ceil(m / B)
            plan = plan_epochs(rare, common, B, 2, seed=int(rng.integers(1 << 30)))
            check_plan(plan, rare, common)
            for ep in plan.epochs:
                assert set(rare) <= {e.image_id for b in ep for e in b if e.origin != COMMON}

    def test_round_trip(self):
        plan = plan_epochs(["a", "b"], ["c", "d", "e"], 4, 2, seed=0)
        assert BatchPlan.from_dict(plan.to_dict()) == plan

    @pytest.mark.parametrize("B", [3, 5])
    def test_odd_batch_with_pairs(self, B):
        with pytest.raises(ConfigError):
            plan_epoch(["a"], ["b", "c", "d", "e", "f"], B, 0)

    def test_insufficient(self):
        with pytest.raises(DataError, match="insufficient"):
            plan_epoch(["a"], ["b"], 8, 0)

    def test_empty_rare(self):
        with pytest.raises(DataError):
            plan_epoch([], ["b"] * 8, 4, 0)
