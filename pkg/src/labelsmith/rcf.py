"""
Rare Class Focus: split the labeled set into rare and common images by rarity
score, then plan batches so that each batch carries rare images.

The plan is plain data; the trainer decides how to load and augment.
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .class_stats import ClassStats, class_frequencies, image_score
from .dataset_io import AnnotationSet
from .exceptions import ConfigError, DataError

COMMON = "common"
RARE_1 = "rare_copy_1"
RARE_2 = "rare_copy_2"
RARE_ORIGINS = (RARE_1, RARE_2)


@dataclass(frozen=True)
class BatchEntry:
    image_id: str
    origin: str
    augment: bool


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int
    epochs: Tuple[Tuple[Tuple[BatchEntry, ...], ...], ...]
    rare_set: Tuple[str, ...]
    seed: int
    pair_rare: bool = True

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "seed": self.seed,
            "pair_rare": self.pair_rare,
            "rare_set": list(self.rare_set),
            "epochs": [
                [[{"image_id": e.image_id, "origin": e.origin, "augment": e.augment} for e in batch] for batch in ep]
                for ep in self.epochs
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BatchPlan":
        epochs = tuple(
            tuple(tuple(BatchEntry(e["image_id"], e["origin"], bool(e["augment"])) for e in batch) for batch in ep)
            for ep in d["epochs"]
        )
        return cls(int(d["batch_size"]), epochs, tuple(d["rare_set"]), int(d["seed"]), bool(d.get("pair_rare", True)))


def rare_count(m: int, batch_size: int) -> int:
    """Smallest k with k >= m / B."""
    return -(-m // batch_size)


def stratify(
    dataset: AnnotationSet,
    stats: ClassStats = None,
    batch_size: int = 8,
    gamma_f: float = 20.0,
    force_common: Sequence[str] = (),
) -> Tuple[List[str], List[str]]:
    """Split images into (rare_ids, common_ids).

    Images are ranked by rarity score, highest first, ties broken by
    image_id; the top ``ceil(m / B)`` are rare. Collage images and ids in
    ``force_common`` never enter the rare set.
    """
    m = len(dataset.images)
    if batch_size < 1:
        raise ConfigError("batch size must be >= 1")
    if m < batch_size:
        raise DataError(f"need at least one full batch: {m} images < batch size {batch_size}")
    if stats is None:
        stats = class_frequencies(dataset)
    if not gamma_f > 1:
        raise ConfigError(f"gamma_f must be > 1, got {gamma_f}")
    # scaled scores are a strictly increasing map of raw scores; ranking on raw
    # avoids ties introduced by rounding in the rescale
    raw = [image_score(img, stats) for img in dataset.images]
    forced = set(force_common)
    eligible = [
        (r, img.image_id)
        for r, img in zip(raw, dataset.images)
        if not img.is_collage and img.image_id not in forced
    ]
    eligible.sort(key=lambda t: (-t[0], t[1]))
    k = rare_count(m, batch_size)
    rare = [iid for _, iid in eligible[:k]]
    rare_set = set(rare)
    common = [img.image_id for img in dataset.images if img.image_id not in rare_set]
    return rare, common


def _stream(ids: Sequence[str], rng: np.random.Generator, n: int) -> List[str]:
    """``n`` draws from ``ids``, reshuffling each time the pool is exhausted."""
    out = []
    while len(out) < n:
        perm = rng.permutation(len(ids))
        out.extend(ids[i] for i in perm[: n - len(out)])
    return out


def _plan_one(rare, common, batch_size, rng, pair_rare, augment_rare):
    n_rare = 2 if pair_rare else 1
    per_batch = batch_size - n_rare
    order = rng.permutation(len(common))
    shuffled = [common[i] for i in order]
    n_batches = max(1, -(-len(shuffled) // per_batch)) if per_batch > 0 else 1
    streams = [_stream(rare, rng, n_batches) for _ in range(n_rare)]
    batches = []
    for b in range(n_batches):
        entries = [BatchEntry(streams[s][b], RARE_ORIGINS[s], augment_rare) for s in range(n_rare)]
        entries.extend(BatchEntry(iid, COMMON, False) for iid in shuffled[b * per_batch : (b + 1) * per_batch])
        batches.append(tuple(entries))
    return tuple(batches)


def _check(rare, common, batch_size, pair_rare):
    if not rare:
        raise DataError("rare set is empty")
    if pair_rare:
        if batch_size % 2:
            raise ConfigError(f"batch size must be even when rare pairs are enabled, got {batch_size}")
        if batch_size < 4 and common:
            raise ConfigError("batch size must be >= 4 to hold a rare pair and common images")
        need = len(common) + 2 * len(rare)
    else:
        if batch_size < 2 and common:
            raise ConfigError("batch size must be >= 2 to hold a rare image and common images")
        need = len(common) + len(rare)
    if need < batch_size:
        raise DataError(f"insufficient images for one full batch of {batch_size}")


def plan_epoch(
    rare_ids: Sequence[str],
    common_ids: Sequence[str],
    batch_size: int,
    seed: int,
    pair_rare: bool = True,
    augment_rare: bool = True,
) -> BatchPlan:
    """Plan a single epoch.

    Each batch gets one entry from each rare stream (two streams with
    ``pair_rare``, one otherwise) followed by up to ``B - 2`` (or ``B - 1``)
    common images. Every common image appears exactly once; the last batch may
    be short of common images.
    """
    return plan_epochs(rare_ids, common_ids, batch_size, 1, seed, pair_rare, augment_rare)


def plan_epochs(
    rare_ids: Sequence[str],
    common_ids: Sequence[str],
    batch_size: int,
    epochs: int,
    seed: int,
    pair_rare: bool = True,
    augment_rare: bool = True,
) -> BatchPlan:
    rare_ids, common_ids = list(rare_ids), list(common_ids)
    _check(rare_ids, common_ids, batch_size, pair_rare)
    if epochs < 1:
        raise ConfigError("epochs must be >= 1")
    rng = np.random.default_rng(seed)
    plans = tuple(_plan_one(rare_ids, common_ids, batch_size, rng, pair_rare, augment_rare) for _ in range(epochs))
    return BatchPlan(batch_size, plans, tuple(rare_ids), seed, pair_rare)
