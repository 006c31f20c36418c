"""Point-cloud container, grid subsampling, spatial queries and augmentation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

#: Label value marking an unlabeled entry in a label array.
IGNORE = -1

_STREAM_KEYS = {"labels": 0, "potentials": 1, "augment": 2, "init": 3, "scene": 4}


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent named random stream derived from a root seed.

    Streams never share state, so enabling or disabling one consumer does
    not shift the draws seen by another.
    """
    try:
        key = _STREAM_KEYS[name]
    except KeyError:
        raise ValueError(f"unknown rng stream {name!r}") from None
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key,)))


@dataclass
class PointCloud:
    """N points with 3D coordinates (meters) and F auxiliary feature channels."""

    coords: np.ndarray
    features: np.ndarray = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 3)
        if self.features is None:
            self.features = np.zeros((len(self.coords), 0))
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim == 1:
            self.features = self.features[:, None]
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("coordinates must be finite")
        if len(self.features) != len(self.coords):
            raise ValueError(
                f"feature rows ({len(self.features)}) != point count ({len(self.coords)})"
            )

    @property
    def point_count(self) -> int:
        return len(self.coords)

    @property
    def feature_count(self) -> int:
        return self.features.shape[1]

    def __len__(self):
        return len(self.coords)

    def subset(self, indices) -> "PointCloud":
        return PointCloud(self.coords[indices], self.features[indices])


@dataclass(frozen=True)
class ClassCatalog:
    class_names: tuple

    def __post_init__(self):
        names = tuple(self.class_names)
        object.__setattr__(self, "class_names", names)
        if len(names) < 2:
            raise ValueError("a class catalog needs at least two classes")
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")

    @property
    def class_count(self) -> int:
        return len(self.class_names)


def check_labels(labels, class_count: int) -> np.ndarray:
    """Validate a label array: entries are class indices in [0, K) or IGNORE."""
    labels = np.asarray(labels, dtype=np.int64)
    bad = (labels != IGNORE) & ((labels < 0) | (labels >= class_count))
    if np.any(bad):
        raise ValueError(f"label {labels[bad][0]} outside [0, {class_count})")
    return labels


@dataclass
class SubsampleMapping:
    kept_to_source: np.ndarray
    source_to_kept: np.ndarray

    @property
    def kept_count(self) -> int:
        return len(self.kept_to_source)


def _nearest(tree: cKDTree, points: np.ndarray) -> np.ndarray:
    # k=2 so exact distance ties can be resolved toward the lower kept index
    k = min(2, tree.n)
    dist, idx = tree.query(points, k=k)
    if k == 1:
        return np.asarray(idx, dtype=np.int64).reshape(-1)
    best = idx[:, 0].copy()
    tie = dist[:, 0] == dist[:, 1]
    best[tie] = np.minimum(idx[tie, 0], idx[tie, 1])
    return best.astype(np.int64)


def grid_subsample(cloud: PointCloud, cell_size: float):
    """Keep one centroid per occupied cubic cell of edge ``cell_size``.

    Returns the subsampled cloud and a mapping in which every source point
    points to its nearest kept point. Each kept point's representative is
    the member of its cell closest to the centroid.
    """
    if not cell_size > 0:
        raise ValueError("cell_size must be positive")
    n = cloud.point_count
    if n == 0:
        empty = np.zeros(0, dtype=np.int64)
        return PointCloud(np.zeros((0, 3)), np.zeros((0, cloud.feature_count))), \
            SubsampleMapping(empty, empty.copy())

    keys = np.floor(cloud.coords / cell_size).astype(np.int64)
    _, cell_of, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    cell_of = cell_of.reshape(-1)
    m = len(counts)

    coords = np.zeros((m, 3))
    np.add.at(coords, cell_of, cloud.coords)
    coords /= counts[:, None]
    feats = np.zeros((m, cloud.feature_count))
    if cloud.feature_count:
        np.add.at(feats, cell_of, cloud.features)
        feats /= counts[:, None]

    # representative: cell member nearest its centroid, lowest index on ties
    d2 = np.sum((cloud.coords - coords[cell_of]) ** 2, axis=1)
    order = np.lexsort((np.arange(n), d2, cell_of))
    first = np.ones(n, dtype=bool)
    first[1:] = cell_of[order[1:]] != cell_of[order[:-1]]
    kept_to_source = order[first]

    source_to_kept = _nearest(cKDTree(coords), cloud.coords)
    source_to_kept[kept_to_source] = np.arange(m)
    return PointCloud(coords, feats), SubsampleMapping(kept_to_source, source_to_kept)


def transfer_labels(mapping: SubsampleMapping, sub_values):
    """Carry per-kept-point values back to every source point."""
    sub_values = np.asarray(sub_values)
    if len(sub_values) != mapping.kept_count:
        raise ValueError(
            f"expected {mapping.kept_count} values, got {len(sub_values)}"
        )
    return sub_values[mapping.source_to_kept]


class SpatialIndex:
    """Uniform hash grid over the horizontal plane.

    Cells are keyed by integer (x, y) cell coordinates; a query visits every
    column cell overlapping the query disc and filters candidates exactly.
    """

    def __init__(self, coords, cell_size: float):
        if not cell_size > 0:
            raise ValueError("cell_size must be positive")
        self.coords = np.asarray(coords, dtype=np.float64)
        self.cell_size = float(cell_size)
        keys = np.floor(self.coords[:, :2] / self.cell_size).astype(np.int64)
        order = np.lexsort((np.arange(len(keys)), keys[:, 1], keys[:, 0]))
        self._order = order
        self._cells = {}
        if len(order):
            sk = keys[order]
            change = np.ones(len(sk), dtype=bool)
            change[1:] = np.any(sk[1:] != sk[:-1], axis=1)
            starts = np.flatnonzero(change)
            ends = np.append(starts[1:], len(sk))
            for s, e in zip(starts, ends):
                self._cells[(int(sk[s, 0]), int(sk[s, 1]))] = (s, e)

    def candidates(self, center, radius: float) -> np.ndarray:
        lo = np.floor((np.asarray(center[:2]) - radius) / self.cell_size).astype(int)
        hi = np.floor((np.asarray(center[:2]) + radius) / self.cell_size).astype(int)
        chunks = []
        for i in range(lo[0], hi[0] + 1):
            for j in range(lo[1], hi[1] + 1):
                span = self._cells.get((i, j))
                if span is not None:
                    chunks.append(self._order[span[0]:span[1]])
        if not chunks:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate(chunks)

    def query(self, center, radius: float, planar: bool = False):
        """Indices within ``radius`` of ``center`` (ascending) and their distances."""
        center = np.asarray(center, dtype=np.float64)
        cand = self.candidates(center, radius)
        dims = 2 if planar else 3
        d = np.sqrt(np.sum((self.coords[cand, :dims] - center[:dims]) ** 2, axis=1))
        keep = d <= radius
        cand, d = cand[keep], d[keep]
        order = np.argsort(cand, kind="stable")
        return cand[order], d[order]


def radius_query(cloud: PointCloud, center, radius: float, *, planar: bool = False,
                 index: SpatialIndex | None = None) -> np.ndarray:
    """Indices of points within ``radius`` of ``center``, ascending.

    ``planar=True`` measures horizontal distance only (a vertical cylinder).
    Pass a prebuilt ``index`` to amortize construction over many queries.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    if index is None:
        index = SpatialIndex(cloud.coords, radius)
    return index.query(center, radius, planar=planar)[0]


@dataclass
class AugmentConfig:
    rotate: bool = True
    scale_range: tuple = (0.9, 1.1)
    jitter_sigma: float = 0.01


def augment(coords, rng, config: AugmentConfig | None = None) -> np.ndarray:
    """Rotate about z, scale isotropically, then jitter each coordinate.

    Draws are always taken from ``rng`` in the same order (angle, scale,
    noise) so the stream advances identically whatever the configuration.
    """
    config = config or AugmentConfig()
    coords = np.asarray(coords, dtype=np.float64)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    scale = rng.uniform(*config.scale_range)
    noise = rng.normal(0.0, 1.0, size=coords.shape)
    if not config.rotate:
        angle = 0.0
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return scale * (coords @ rot.T) + config.jitter_sigma * noise
