"""Labeled synthetic ALS-like scenes.

Classes: 0 ground (rolling terrain), 1 building (flat or gabled roofs with
sparse facades), 2 tree (volumetric crowns), 3 pole (thin vertical
segments). Points are sampled as an airborne sensor would see them: one
return per horizontal sample, from the highest surface, plus a few
returns on vertical structures. One auxiliary channel carries a noisy,
class-dependent intensity.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, fields

import numpy as np

from .core import ClassCatalog, PointCloud

SCENE_CLASSES = ClassCatalog(("ground", "building", "tree", "pole"))

_INTENSITY = np.array([0.35, 0.55, 0.45, 0.60])


@dataclass
class SceneSpec:
    extent: float = 100.0            # side of the square scene, m
    density: float = 5.0             # top-surface points per m^2
    ground_roughness: float = 0.3    # amplitude of terrain noise, m
    terrain_relief: float = 2.0      # amplitude of smooth terrain undulation, m
    building_count: int = 8
    building_size_min: float = 8.0
    building_size_max: float = 20.0
    building_height_min: float = 3.0
    building_height_max: float = 14.0
    facade_density: float = 0.3      # points per m^2 of wall
    tree_count: int = 40
    tree_radius_min: float = 2.0
    tree_radius_max: float = 4.5
    tree_height_min: float = 3.0
    tree_height_max: float = 12.0
    canopy_hit_rate: float = 0.8     # fraction of crown samples returned by foliage
    pole_count: int = 20
    pole_height_min: float = 5.0
    pole_height_max: float = 10.0
    pole_points_per_meter: float = 3.0
    intensity_sigma: float = 0.12
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name != "seed" and v < 0:
                raise ValueError(f"{f.name} must be non-negative")
        if not (self.extent > 0 and self.density > 0):
            raise ValueError("extent and density must be positive")


def _terrain(spec: SceneSpec, rng):
    # a few random low-frequency waves plus fine noise
    waves = []
    for _ in range(4):
        k = rng.uniform(0.5, 2.0) * 2 * np.pi / spec.extent
        theta = rng.uniform(0, 2 * np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        waves.append((k * np.cos(theta), k * np.sin(theta), phase))

    def height(x, y, noise=True):
        z = np.zeros_like(x, dtype=np.float64)
        for kx, ky, ph in waves:
            z += 0.5 * spec.terrain_relief * np.sin(kx * x + ky * y + ph)
        if noise:
            z += rng.normal(0.0, spec.ground_roughness, size=np.shape(x))
        return z

    return height


def _place_buildings(spec: SceneSpec, rng):
    out = []
    tries = 0
    while len(out) < spec.building_count and tries < 100 * max(spec.building_count, 1):
        tries += 1
        w, d = rng.uniform(spec.building_size_min, spec.building_size_max, size=2)
        x0 = rng.uniform(0, spec.extent - w)
        y0 = rng.uniform(0, spec.extent - d)
        box = (x0, y0, x0 + w, y0 + d)
        if any(not (box[2] + 3 < b[0] or b[2] + 3 < box[0] or box[3] + 3 < b[1]
                    or b[3] + 3 < box[1]) for b, *_ in out):
            continue
        h = rng.uniform(spec.building_height_min, spec.building_height_max)
        gable = rng.uniform(0, 0.4) if rng.uniform() < 0.5 else 0.0
        out.append((box, h, gable))
    return out


def _roof_height(box, h, gable, x, y):
    # gabled roofs slope down from a ridge along the longer side
    x0, y0, x1, y1 = box
    if x1 - x0 >= y1 - y0:
        half = (y1 - y0) / 2
        off = np.abs(y - (y0 + half))
    else:
        half = (x1 - x0) / 2
        off = np.abs(x - (x0 + half))
    return h - gable * off


def synth_scene(spec: SceneSpec | None = None):
    """Generate ``(PointCloud, labels)`` deterministically from ``spec.seed``."""
    spec = spec or SceneSpec()
    rng = np.random.default_rng(spec.seed)
    for name, count in (("building", spec.building_count), ("tree", spec.tree_count),
                        ("pole", spec.pole_count)):
        if count == 0:
            warnings.warn(f"{name} count is zero; class omitted", stacklevel=2)
    ground = _terrain(spec, rng)
    buildings = _place_buildings(spec, rng)

    n_top = rng.poisson(spec.extent ** 2 * spec.density)
    x = rng.uniform(0, spec.extent, n_top)
    y = rng.uniform(0, spec.extent, n_top)
    z = ground(x, y)
    lab = np.zeros(n_top, dtype=np.int64)

    free = np.ones(n_top, dtype=bool)
    for box, h, gable in buildings:
        inside = (x >= box[0]) & (x <= box[2]) & (y >= box[1]) & (y <= box[3])
        cx, cy = (box[0] + box[2]) / 2, (box[1] + box[3]) / 2
        base = ground(np.array([cx]), np.array([cy]), noise=False)[0]
        z[inside] = base + _roof_height(box, h, gable, x[inside], y[inside]) \
            + rng.normal(0, 0.05, inside.sum())
        lab[inside] = 1
        free &= ~inside

    trees = []
    for _ in range(spec.tree_count):
        r = rng.uniform(spec.tree_radius_min, spec.tree_radius_max)
        cx, cy = rng.uniform(0, spec.extent, 2)
        # crowns never reach below 0.5 m above the terrain
        top = max(rng.uniform(spec.tree_height_min, spec.tree_height_max), 1.2 * r + 0.5)
        trees.append((cx, cy, r, top))
    for cx, cy, r, top in trees:
        d = np.hypot(x - cx, y - cy)
        crown = free & (d < r) & (rng.uniform(size=n_top) < spec.canopy_hit_rate)
        if not crown.any():
            continue
        rz = 0.6 * r
        zc = ground(np.array([cx]), np.array([cy]), noise=False)[0] + top - rz
        surf = rz * np.sqrt(np.clip(1 - (d[crown] / r) ** 2, 0, 1))
        # returns scatter through the upper half of the crown volume
        depth = rng.uniform(0, 1, crown.sum()) * (surf + 0.5 * rz)
        z[crown] = zc + surf - depth
        lab[crown] = 2
        free &= ~crown

    px, py, pz, pl = [x], [y], [z], [lab]
    for box, h, gable in buildings:
        x0, y0, x1, y1 = box
        cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
        base = ground(np.array([cx]), np.array([cy]), noise=False)[0]
        perim = 2 * ((x1 - x0) + (y1 - y0))
        m = rng.poisson(perim * h * spec.facade_density)
        t = rng.uniform(0, perim, m)
        fx = np.where(t < x1 - x0, x0 + t,
             np.where(t < (x1 - x0) + (y1 - y0), x1,
             np.where(t < 2 * (x1 - x0) + (y1 - y0), x1 - (t - (x1 - x0) - (y1 - y0)), x0)))
        fy = np.where(t < x1 - x0, y0,
             np.where(t < (x1 - x0) + (y1 - y0), y0 + (t - (x1 - x0)),
             np.where(t < 2 * (x1 - x0) + (y1 - y0), y1,
                      y1 - (t - 2 * (x1 - x0) - (y1 - y0)))))
        fz = base + rng.uniform(0, 1, m) * _roof_height(box, h, gable, fx, fy)
        px.append(fx + rng.normal(0, 0.05, m))
        py.append(fy + rng.normal(0, 0.05, m))
        pz.append(fz)
        pl.append(np.ones(m, dtype=np.int64))

    for _ in range(spec.pole_count):
        cx, cy = rng.uniform(0, spec.extent, 2)
        h = rng.uniform(spec.pole_height_min, spec.pole_height_max)
        m = max(3, rng.poisson(h * spec.pole_points_per_meter))
        base = ground(np.array([cx]), np.array([cy]), noise=False)[0]
        px.append(cx + rng.normal(0, 0.04, m))
        py.append(cy + rng.normal(0, 0.04, m))
        pz.append(base + rng.uniform(0.3, 1.0, m) * h)
        pl.append(np.full(m, 3, dtype=np.int64))

    coords = np.column_stack([np.concatenate(px), np.concatenate(py), np.concatenate(pz)])
    labels = np.concatenate(pl)
    intensity = np.clip(_INTENSITY[labels] + rng.normal(0, spec.intensity_sigma, len(labels)),
                        0.0, 1.0)
    return PointCloud(coords, intensity[:, None]), labels
