"""Manifest curation: per-class filtering, capping, subsampling, remapping.

The full pipeline is filter -> cap -> subsample -> remap; ``curate`` runs it
in that order. Every random choice is drawn from a Philox stream keyed by
(seed, purpose, class), so outputs are byte-identical across runs and
independent of class iteration order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import DatasetManifest
from .errors import ConfigError
from .rand import STREAM_CAP, STREAM_SUBSAMPLE, philox

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CurationConfig:
    min_samples_per_class: int = 3
    max_samples_per_class: int = 100
    class_budget: int | None = None
    per_class_cap_for_subset: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.min_samples_per_class < 1:
            raise ConfigError("min_samples_per_class must be >= 1")
        if self.max_samples_per_class < self.min_samples_per_class:
            raise ConfigError("max_samples_per_class must be >= min_samples_per_class")
        if self.class_budget is not None and self.class_budget < 1:
            raise ConfigError("class_budget must be positive when present")
        if self.per_class_cap_for_subset is not None and self.per_class_cap_for_subset < 1:
            raise ConfigError("per_class_cap_for_subset must be positive when present")


def filter_min_samples(manifest: DatasetManifest, min_samples: int) -> DatasetManifest:
    """Drop every class with fewer than `min_samples` records."""
    if min_samples < 1:
        raise ConfigError("min_samples must be >= 1")
    class_ids = manifest.class_ids
    uniq, cnt = np.unique(class_ids, return_counts=True)
    keep_classes = uniq[cnt >= min_samples]
    if keep_classes.size == uniq.size:
        return manifest
    mask = np.isin(class_ids, keep_classes)
    return manifest.take(np.flatnonzero(mask))


def cap_samples_per_class(manifest: DatasetManifest, cap: int, seed: int) -> DatasetManifest:
    """Uniformly downsample every class to at most `cap` records.

    Selection is without replacement; surviving records keep their
    original relative order.
    """
    if cap < 1:
        raise ConfigError("cap must be >= 1")
    class_ids = manifest.class_ids
    n = len(manifest)
    keep = np.ones(n, dtype=bool)
    order = np.argsort(class_ids, kind="stable")
    sorted_ids = class_ids[order]
    boundaries = np.flatnonzero(np.diff(sorted_ids)) + 1
    for group in np.split(order, boundaries):
        if group.size <= cap:
            continue
        cid = int(class_ids[group[0]])
        rng = philox(seed, STREAM_CAP, cid)
        chosen = rng.permutation(group.size)[:cap]
        drop = np.delete(group, chosen)
        keep[drop] = False
    if keep.all():
        return manifest
    return manifest.take(np.flatnonzero(keep))


def subsample_classes(
    manifest: DatasetManifest, class_budget: int, per_class_cap: int, seed: int
) -> DatasetManifest:
    """Keep a uniform random subset of at most `class_budget` classes,
    each capped at `per_class_cap` records."""
    if class_budget < 1:
        raise ConfigError("class_budget must be >= 1")
    uniq = np.unique(manifest.class_ids)
    if class_budget >= uniq.size:
        logger.warning(
            "subsample_classes: budget %d >= available classes %d, keeping all",
            class_budget,
            uniq.size,
        )
        subset = manifest
    else:
        rng = philox(seed, STREAM_SUBSAMPLE)
        chosen = uniq[rng.permutation(uniq.size)[:class_budget]]
        mask = np.isin(manifest.class_ids, chosen)
        subset = manifest.take(np.flatnonzero(mask))
    return cap_samples_per_class(subset, per_class_cap, seed)


def remap_class_ids(manifest: DatasetManifest) -> tuple[DatasetManifest, dict[int, int]]:
    """Reassign class ids to [0, C) in order of first appearance."""
    class_ids = manifest.class_ids
    uniq, first_idx, inverse = np.unique(class_ids, return_index=True, return_inverse=True)
    rank = np.empty(uniq.size, dtype=np.int64)
    rank[np.argsort(first_idx, kind="stable")] = np.arange(uniq.size)
    new_ids = rank[inverse]
    mapping = {int(old): int(new) for old, new in zip(uniq, rank)}
    remapped = DatasetManifest.from_columns(
        manifest.sample_ids, new_ids, manifest.splits, manifest.domains
    )
    return remapped, mapping


def curate(
    manifest: DatasetManifest, config: CurationConfig
) -> tuple[DatasetManifest, dict[int, int]]:
    """Run filter -> cap -> subsample -> remap with the given config."""
    out = filter_min_samples(manifest, config.min_samples_per_class)
    out = cap_samples_per_class(out, config.max_samples_per_class, config.seed)
    if config.class_budget is not None:
        cap = config.per_class_cap_for_subset or config.max_samples_per_class
        out = subsample_classes(out, config.class_budget, cap, config.seed)
    return remap_class_ids(out)
