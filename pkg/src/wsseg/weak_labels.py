"""Sparse, class-balanced and nested weak-label selection."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import IGNORE, ClassCatalog, check_labels

#: A class never contributes more than this fraction of its population.
CLASS_FRACTION_CEILING = 0.1


@dataclass
class WeakLabelSet:
    """Labeled point indices (sorted) with their ground-truth classes."""

    labeled_indices: np.ndarray
    labels: np.ndarray
    per_class_cap: int
    total_points: int
    seed: int | None = None
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.labeled_indices = np.asarray(self.labeled_indices, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.labeled_indices) != len(self.labels):
            raise ValueError("labeled_indices and labels differ in length")
        if np.any(np.diff(self.labeled_indices) <= 0):
            raise ValueError("labeled_indices must be strictly increasing")

    @property
    def count(self) -> int:
        return len(self.labeled_indices)

    @property
    def target_ratio(self) -> float:
        """Realized fraction of labeled points."""
        return self.count / self.total_points if self.total_points else 0.0

    def class_counts(self, class_count: int) -> np.ndarray:
        return np.bincount(self.labels, minlength=class_count)

    def mask(self, n: int | None = None) -> np.ndarray:
        n = self.total_points if n is None else n
        m = np.zeros(n, dtype=bool)
        m[self.labeled_indices] = True
        return m

    def dense_labels(self, n: int | None = None) -> np.ndarray:
        """Length-N label array with IGNORE on unlabeled points."""
        n = self.total_points if n is None else n
        out = np.full(n, IGNORE, dtype=np.int64)
        out[self.labeled_indices] = self.labels
        return out


def class_quota(population: int, per_class_cap: int) -> int:
    return min(per_class_cap, int(np.floor(CLASS_FRACTION_CEILING * population)), population)


def sample_weak_labels(truth, catalog: ClassCatalog, per_class_cap: int, rng,
                       parent: WeakLabelSet | None = None, *,
                       enforce_ceiling: bool = True) -> WeakLabelSet:
    """Draw up to ``per_class_cap`` labels per class, uniformly without replacement.

    A class never gets more than 10% of its population. When ``parent`` is
    given its selections are kept and only the remainder is drawn, so the
    result contains the parent as a subset.

    ``enforce_ceiling=False`` lifts the ratio guard (M/N <= 0.1) and the
    10% rule; it exists for degenerate test fixtures only.
    """
    if per_class_cap < 1:
        raise ValueError("per_class_cap must be >= 1")
    truth = check_labels(truth, catalog.class_count)
    n = len(truth)
    k = catalog.class_count
    notes = []

    parent_by_class = [np.zeros(0, dtype=np.int64) for _ in range(k)]
    if parent is not None:
        if parent.total_points != n:
            raise ValueError("parent weak-label set belongs to a different cloud")
        if np.any(truth[parent.labeled_indices] != parent.labels):
            raise ValueError("parent labels disagree with ground truth")
        for c in range(k):
            parent_by_class[c] = parent.labeled_indices[parent.labels == c]

    chosen = []
    for c in range(k):
        members = np.flatnonzero(truth == c)
        if len(members) == 0:
            notes.append(f"class {c} ({catalog.class_names[c]}) has no points; no labels drawn")
            continue
        quota = class_quota(len(members), per_class_cap) if enforce_ceiling \
            else min(per_class_cap, len(members))
        have = parent_by_class[c]
        if len(have) > quota:
            raise ValueError(
                f"parent holds {len(have)} labels for class {c}, more than the requested {quota}"
            )
        pool = np.setdiff1d(members, have, assume_unique=True)
        extra = rng.choice(pool, size=quota - len(have), replace=False) if quota > len(have) \
            else np.zeros(0, dtype=np.int64)
        chosen.append(np.concatenate([have, extra]))
    for msg in notes:
        warnings.warn(msg, stacklevel=2)

    idx = np.sort(np.concatenate(chosen)) if chosen else np.zeros(0, dtype=np.int64)
    if enforce_ceiling and len(idx) > CLASS_FRACTION_CEILING * n:
        raise ValueError(f"{len(idx)} labels exceed 10% of {n} points")
    return WeakLabelSet(idx, truth[idx], per_class_cap, n, warnings=notes)


def unlabeled_complement(cloud_size: int, weak: WeakLabelSet) -> np.ndarray:
    """Sorted indices in [0, cloud_size) that carry no weak label."""
    if weak.count and weak.labeled_indices.max() >= cloud_size:
        raise ValueError("weak index outside the cloud")
    mask = np.ones(cloud_size, dtype=bool)
    mask[weak.labeled_indices] = False
    return np.flatnonzero(mask)


def realized_count(truth, class_count: int, per_class_cap: int) -> int:
    """Total labels ``sample_weak_labels`` would return for a given cap."""
    pops = np.bincount(np.asarray(truth)[np.asarray(truth) != IGNORE], minlength=class_count)
    return int(sum(class_quota(p, per_class_cap) for p in pops if p > 0))


def cap_for_ratio(truth, class_count: int, target_ratio: float) -> int:
    """Smallest per-class cap whose realized label ratio is closest to ``target_ratio``."""
    n = len(truth)
    target = target_ratio * n
    lo, hi = 1, max(1, n)
    # realized_count is nondecreasing in the cap: find first cap reaching target
    while lo < hi:
        mid = (lo + hi) // 2
        if realized_count(truth, class_count, mid) >= target:
            hi = mid
        else:
            lo = mid + 1
    best = lo
    if lo > 1:
        below = realized_count(truth, class_count, lo - 1)
        if abs(below - target) <= abs(realized_count(truth, class_count, lo) - target):
            best = lo - 1
    return best
