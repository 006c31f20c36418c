"""Circular spatial mini-batches.

Training batches are centred on the point of lowest potential; every point
fed to the model has its potential raised according to its distance from
the centre, which spreads visits evenly over the scene. Test batches tile
the scene on a regular grid so neighbouring circles overlap by half.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PointCloud, SpatialIndex


@dataclass(frozen=True)
class BatchSpec:
    radius: float
    point_cap: int = 120_000
    steps_per_epoch: int = 80

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.point_cap < 1:
            raise ValueError("point_cap must be >= 1")
        if self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1")


@dataclass
class MiniBatch:
    indices: np.ndarray
    center: np.ndarray
    labeled_mask: np.ndarray

    def __len__(self):
        return len(self.indices)


class PotentialField:
    """Per-point potentials plus the spatial index used to draw batches."""

    def __init__(self, potentials, exponent: float = 2.0):
        self.potentials = np.asarray(potentials, dtype=np.float64)
        if not np.all(np.isfinite(self.potentials)) or np.any(self.potentials < 0):
            raise ValueError("potentials must be finite and non-negative")
        self.exponent = exponent
        self._index = None

    def __len__(self):
        return len(self.potentials)

    def index_for(self, cloud: PointCloud, radius: float) -> SpatialIndex:
        if self._index is None or self._index.cell_size != radius \
                or self._index.coords is not cloud.coords:
            self._index = SpatialIndex(cloud.coords, radius)
        return self._index


def init_potentials(n: int, rng, exponent: float = 2.0) -> PotentialField:
    """I.i.d. uniform potentials in the open interval (0, 1)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    p = rng.uniform(0.0, 1.0, size=n)
    # uniform() samples [0, 1); nudge an exact zero into the open interval
    p[p == 0.0] = np.nextafter(0.0, 1.0)
    return PotentialField(p, exponent)


def potential_increment(dist, radius: float, exponent: float = 2.0):
    """(1 - d/r)^exponent, in [0, 1] for 0 <= d <= r."""
    return np.clip(1.0 - np.asarray(dist) / radius, 0.0, 1.0) ** exponent


def _labeled_mask(indices, weak) -> np.ndarray:
    if weak is None or weak.count == 0:
        return np.zeros(len(indices), dtype=bool)
    pos = np.searchsorted(weak.labeled_indices, indices)
    pos = np.minimum(pos, weak.count - 1)
    return weak.labeled_indices[pos] == indices


def next_train_batch(field: PotentialField, cloud: PointCloud, spec: BatchSpec,
                     weak=None) -> MiniBatch:
    """Draw the next training batch and update ``field`` in place.

    Batches are vertical cylinders: distance is measured in the horizontal
    plane, as ALS batches are circles on the ground.
    """
    if len(field) != cloud.point_count:
        raise ValueError("potential field and cloud differ in size")
    c = int(np.argmin(field.potentials))
    center = cloud.coords[c].copy()
    index = field.index_for(cloud, spec.radius)
    idx, dist = index.query(center, spec.radius, planar=True)
    if len(idx) > spec.point_cap:
        near = np.lexsort((idx, dist))[:spec.point_cap]
        near.sort()
        idx, dist = idx[near], dist[near]
    field.potentials[idx] += potential_increment(dist, spec.radius, field.exponent)
    return MiniBatch(idx, center, _labeled_mask(idx, weak))


def test_batches(cloud: PointCloud, spec: BatchSpec, weak=None) -> list[MiniBatch]:
    """Cover the cloud with circles of the training radius on a grid of spacing r.

    The grid starts at the lower bounding-box corner and spans the box, so
    every point lies within r/sqrt(2) of some centre; empty circles are
    skipped.
    """
    if cloud.point_count == 0:
        raise ValueError("cloud is empty")
    r = spec.radius
    lo = cloud.coords[:, :2].min(axis=0)
    hi = cloud.coords[:, :2].max(axis=0)
    index = SpatialIndex(cloud.coords, r)
    xs = lo[0] + r * np.arange(int(np.ceil((hi[0] - lo[0]) / r)) + 1)
    ys = lo[1] + r * np.arange(int(np.ceil((hi[1] - lo[1]) / r)) + 1)
    zc = float(np.median(cloud.coords[:, 2]))
    batches = []
    for x in xs:
        for y in ys:
            center = np.array([x, y, zc])
            idx, _ = index.query(center, r, planar=True)
            if len(idx):
                batches.append(MiniBatch(idx, center, _labeled_mask(idx, weak)))
    return batches


test_batches.__test__ = False  # not a pytest test despite the name
