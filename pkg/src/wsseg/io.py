"""File formats: point clouds, weak-label sets, key=value configs, class catalogs.

Text clouds have one header line ``# columns=<n> features=<F> has_label=<0|1>``
followed by one whitespace-separated ``x y z f1 .. fF [label]`` row per
point. Files ending in ``.bin`` use the checkpoint block encoding instead.
"""

from __future__ import annotations

import dataclasses
import re
from pathlib import Path

import numpy as np

from .core import ClassCatalog, PointCloud
from .model import decode_blocks, encode_blocks
from .weak_labels import WeakLabelSet

CLOUD_MAGIC = b"WSSEGPCD"

_HEADER = re.compile(r"#\s*columns=(\d+)\s+features=(\d+)\s+has_label=([01])\s*$")


class DataError(ValueError):
    """Malformed or inconsistent input file."""


def write_cloud(path, cloud: PointCloud, labels=None):
    path = Path(path)
    f = cloud.feature_count
    if labels is not None and len(labels) != cloud.point_count:
        raise ValueError("label count differs from point count")
    if path.suffix == ".bin":
        blocks = [cloud.coords, cloud.features]
        if labels is not None:
            blocks.append(np.asarray(labels, dtype=np.float64))
        path.write_bytes(encode_blocks(CLOUD_MAGIC, blocks,
                                       {"features": f, "has_label": labels is not None}))
        return
    has = labels is not None
    cols = 3 + f + int(has)
    with open(path, "w") as out:
        out.write(f"# columns={cols} features={f} has_label={int(has)}\n")
        for i in range(cloud.point_count):
            vals = [repr(float(v)) for v in cloud.coords[i]]
            vals += [repr(float(v)) for v in cloud.features[i]]
            if has:
                vals.append(str(int(labels[i])))
            out.write(" ".join(vals) + "\n")


def read_cloud(path):
    """Return ``(PointCloud, labels or None)``."""
    path = Path(path)
    if path.suffix == ".bin":
        try:
            blocks, meta = decode_blocks(CLOUD_MAGIC, path.read_bytes())
        except (ValueError, KeyError) as exc:
            raise DataError(f"{path}: {exc}") from exc
        cloud = PointCloud(blocks[0].reshape(-1, 3), blocks[1].reshape(len(blocks[0]), -1))
        labels = blocks[2].astype(np.int64) if meta.get("has_label") else None
        return cloud, labels

    with open(path) as src:
        header = src.readline()
        m = _HEADER.match(header.strip())
        if not m:
            raise DataError(f"{path}:1: missing or malformed header")
        cols, f, has = int(m.group(1)), int(m.group(2)), m.group(3) == "1"
        if cols != 3 + f + int(has):
            raise DataError(f"{path}:1: unknown column count {cols} for features={f}")
        rows = []
        for lineno, line in enumerate(src, start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != cols:
                raise DataError(f"{path}:{lineno}: expected {cols} columns, got {len(parts)}")
            try:
                rows.append([float(v) for v in parts])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value") from None
    data = np.array(rows, dtype=np.float64).reshape(-1, cols)
    labels = None
    if has:
        labels = data[:, -1]
        if np.any(labels != np.round(labels)):
            raise DataError(f"{path}: labels must be integers")
        labels = labels.astype(np.int64)
    return PointCloud(data[:, :3], data[:, 3:3 + f]), labels


def write_weak_labels(path, weak: WeakLabelSet, seed=None):
    seed = weak.seed if seed is None else seed
    with open(path, "w") as out:
        out.write(f"# ratio={weak.target_ratio!r} cap={weak.per_class_cap} seed={seed} "
                  f"points={weak.total_points}\n")
        for i, c in zip(weak.labeled_indices, weak.labels):
            out.write(f"{int(i)} {int(c)}\n")


def read_weak_labels(path, total_points: int | None = None) -> WeakLabelSet:
    with open(path) as src:
        header = src.readline().strip()
        if not header.startswith("#"):
            raise DataError(f"{path}:1: missing header")
        fields = dict(kv.split("=", 1) for kv in header[1:].split() if "=" in kv)
        idx, lab = [], []
        for lineno, line in enumerate(src, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'index class'")
            try:
                idx.append(int(parts[0]))
                lab.append(int(parts[1]))
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer entry") from None
    n = total_points if total_points is not None else int(fields.get("points", 0))
    seed = fields.get("seed")
    seed = int(seed) if seed not in (None, "None") else None
    try:
        return WeakLabelSet(np.array(idx, dtype=np.int64), np.array(lab, dtype=np.int64),
                            int(fields.get("cap", 0)), n, seed=seed)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def _coerce(value: str, kind):
    if kind is bool:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if kind is int:
        return int(value)
    if kind is float:
        return float(value)
    if kind is tuple:
        return tuple(int(v) for v in value.replace(",", " ").split())
    return value


def read_key_values(path, target_cls):
    """Parse a flat ``key=value`` file into the dataclass ``target_cls``.

    Blank lines and ``#`` comments are skipped; unknown keys are rejected.
    """
    types = {f.name: f.type for f in dataclasses.fields(target_cls)}
    defaults = target_cls()
    values = {}
    with open(path) as src:
        for lineno, line in enumerate(src, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise DataError(f"{path}:{lineno}: unknown key {key!r}")
            kind = type(getattr(defaults, key))
            try:
                values[key] = _coerce(value, kind)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    try:
        return target_cls(**values)
    except (TypeError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def write_key_values(path, obj):
    with open(path, "w") as out:
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, tuple):
                v = " ".join(str(x) for x in v)
            out.write(f"{f.name}={v}\n")


def read_catalog(path) -> ClassCatalog:
    """One class name per line, in class-index order."""
    with open(path) as src:
        names = [ln.strip() for ln in src if ln.strip() and not ln.startswith("#")]
    try:
        return ClassCatalog(tuple(names))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def write_catalog(path, catalog: ClassCatalog):
    Path(path).write_text("\n".join(catalog.class_names) + "\n")
