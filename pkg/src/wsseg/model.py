"""Reference point classifier.

A backbone here is three functions: ``encode_features`` turns a batch of
points into per-point descriptor rows, ``forward`` maps rows to class
logits, and ``backward`` returns exact parameter gradients for a given
upstream gradient on the logits. The reference backbone is a shared
per-point perceptron over handcrafted covariance descriptors.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree


class DivergenceError(FloatingPointError):
    """Raised when training produces a non-finite loss or gradient."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


# ---------------------------------------------------------------- features

@dataclass
class PointFeatures:
    height: np.ndarray       # meters above the batch minimum
    linearity: np.ndarray
    planarity: np.ndarray
    sphericity: np.ndarray
    verticality: np.ndarray
    density: np.ndarray      # points per cubic meter
    aux: np.ndarray          # raw auxiliary channels, B x F

    def __len__(self):
        return len(self.height)

    def matrix(self, height_scale: float = 10.0) -> np.ndarray:
        """Network input rows: scaled height, four descriptors, log-density, aux."""
        cols = [
            self.height / height_scale,
            self.linearity,
            self.planarity,
            self.sphericity,
            self.verticality,
            np.log1p(self.density),
        ]
        return np.column_stack(cols + [self.aux]) if self.aux.size else np.column_stack(cols)


def feature_width(aux_count: int) -> int:
    return 6 + aux_count


def sym3_eigvals(a: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of a stack of symmetric 3x3 matrices, closed form."""
    a11, a22, a33 = a[:, 0, 0], a[:, 1, 1], a[:, 2, 2]
    a12, a13, a23 = a[:, 0, 1], a[:, 0, 2], a[:, 1, 2]
    q = (a11 + a22 + a33) / 3.0
    b11, b22, b33 = a11 - q, a22 - q, a33 - q
    p = np.sqrt((b11 ** 2 + b22 ** 2 + b33 ** 2 + 2.0 * (a12 ** 2 + a13 ** 2 + a23 ** 2)) / 6.0)
    ps = np.where(p > 0, p, 1.0)
    det = (b11 * (b22 * b33 - a23 * a23) - a12 * (a12 * b33 - a23 * a13)
           + a13 * (a12 * a23 - b22 * a13)) / ps ** 3
    phi = np.arccos(np.clip(det / 2.0, -1.0, 1.0)) / 3.0
    hi = q + 2.0 * p * np.cos(phi)
    lo = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    return np.stack([lo, 3.0 * q - hi - lo, hi], axis=1)


def _null_direction(m: np.ndarray) -> np.ndarray:
    # unit vector spanning the null space of rank-2 matrices m (B, 3, 3)
    r0, r1, r2 = m[:, 0], m[:, 1], m[:, 2]
    cands = np.stack([np.cross(r0, r1), np.cross(r0, r2), np.cross(r1, r2)], axis=1)
    norms = np.linalg.norm(cands, axis=2)
    best = np.argmax(norms, axis=1)
    v = cands[np.arange(len(m)), best]
    n = norms[np.arange(len(m)), best]
    return v / np.where(n > 0, n, 1.0)[:, None]


def eigen_descriptors(neigh: np.ndarray):
    """Covariance descriptors for neighbourhoods of shape (B, k, 3).

    Returns linearity, planarity, sphericity (each in [0, 1], summing to 1
    when the neighbourhood is not degenerate) and verticality,
    1 - |n_z| for the smallest-variance direction n. Where that direction
    is undefined (linear neighbourhoods) verticality is |e_z| of the
    principal direction e instead.
    """
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.matmul(centered.transpose(0, 2, 1), centered) / neigh.shape[1]
    vals = np.clip(sym3_eigvals(cov), 0.0, None)
    l3, l2, l1 = vals[:, 0], vals[:, 1], vals[:, 2]
    ok = l1 > 1e-12
    safe = np.where(ok, l1, 1.0)
    lin = np.where(ok, (l1 - l2) / safe, 0.0)
    plan = np.where(ok, (l2 - l3) / safe, 0.0)
    sph = np.where(ok, l3 / safe, 0.0)

    eye = np.eye(3)
    normal = _null_direction(cov - l3[:, None, None] * eye)
    principal = _null_direction(cov - l1[:, None, None] * eye)
    flat_normal = (l2 - l3) > 1e-9 * safe
    vert = np.where(flat_normal, 1.0 - np.abs(normal[:, 2]), np.abs(principal[:, 2]))
    vert = np.where(ok, vert, 0.0)
    return lin, plan, sph, np.clip(vert, 0.0, 1.0)


def encode_points(coords, aux, k_neighbors: int = 16) -> PointFeatures:
    """Descriptors from each point's ``k_neighbors`` nearest neighbours (itself included)."""
    if k_neighbors < 3:
        raise ValueError("k_neighbors must be >= 3")
    coords = np.asarray(coords, dtype=np.float64)
    b = len(coords)
    aux = np.zeros((b, 0)) if aux is None else np.asarray(aux, dtype=np.float64).reshape(b, -1)
    k_eff = min(k_neighbors, b)
    dist, idx = cKDTree(coords).query(coords, k=k_eff)
    dist = dist.reshape(b, k_eff)
    idx = idx.reshape(b, k_eff)
    if k_eff < k_neighbors:
        # too few points: repeat the nearest available neighbour
        fill = 1 if k_eff > 1 else 0
        pad = k_neighbors - k_eff
        idx = np.concatenate([idx, np.repeat(idx[:, fill:fill + 1], pad, axis=1)], axis=1)
        dist = np.concatenate([dist, np.repeat(dist[:, fill:fill + 1], pad, axis=1)], axis=1)
    lin, plan, sph, vert = eigen_descriptors(coords[idx])
    r = np.maximum(dist[:, -1], 1e-3)
    density = k_neighbors / (4.0 / 3.0 * np.pi * r ** 3)
    height = coords[:, 2] - coords[:, 2].min() if b else np.zeros(0)
    return PointFeatures(height, lin, plan, sph, vert, density, aux)


def encode_features(cloud, batch, k_neighbors: int = 16, coords=None) -> PointFeatures:
    """Encode the points of ``batch``; ``coords`` overrides them (e.g. augmented)."""
    pts = cloud.coords[batch.indices] if coords is None else coords
    return encode_points(pts, cloud.features[batch.indices], k_neighbors)


# ----------------------------------------------------------------- network

@dataclass
class ModelParameters:
    """Weights and biases of a fully connected network, input layer first."""

    weights: list
    biases: list

    @property
    def blocks(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def parameter_count(self) -> int:
        return sum(a.size for a in self.blocks)

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[0]

    @property
    def class_count(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "ModelParameters":
        return ModelParameters([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    @classmethod
    def from_blocks(cls, blocks) -> "ModelParameters":
        blocks = [np.asarray(a, dtype=np.float64) for a in blocks]
        return cls(blocks[0::2], blocks[1::2])


def init_params(input_width: int, class_count: int, rng, hidden=(64, 64)) -> ModelParameters:
    """He-normal weights, zero biases."""
    sizes = [input_width, *hidden, class_count]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ModelParameters(weights, biases)


@dataclass
class BackboneOutput:
    logits: np.ndarray
    params: ModelParameters = field(repr=False)
    # layer inputs, ending with the last hidden activation
    activations: list = field(repr=False, default_factory=list)


def forward(params: ModelParameters, x) -> BackboneOutput:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_width:
        raise ValueError(f"expected input width {params.input_width}, got shape {x.shape}")
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        if i < last:
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            h = z
    return BackboneOutput(h, params, acts)


def backward(output: BackboneOutput, grad_logits) -> ModelParameters:
    """Gradient of sum(logits * grad_logits) with respect to every parameter."""
    g = np.asarray(grad_logits, dtype=np.float64)
    if g.shape != output.logits.shape:
        raise ValueError("grad_logits shape does not match logits")
    params = output.params
    n = len(params.weights)
    gw, gb = [None] * n, [None] * n
    for i in range(n - 1, -1, -1):
        a = output.activations[i]
        gw[i] = a.T @ g
        gb[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ params.weights[i].T) * (a > 0)
    return ModelParameters(gw, gb)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(probs, grad_probs) -> np.ndarray:
    """Pull a gradient on probabilities back through the softmax."""
    return probs * (grad_probs - np.sum(grad_probs * probs, axis=1, keepdims=True))


# --------------------------------------------------------------- optimizer

class SGDMomentum:
    """Heavy-ball SGD: v <- mu v + g; theta <- theta - lr v."""

    def __init__(self, params: ModelParameters, lr: float = 1e-2, momentum: float = 0.98):
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(a) for a in params.blocks]

    def step(self, params: ModelParameters, grads: ModelParameters, lr: float | None = None):
        sgd_momentum_step(params, grads, self.lr if lr is None else lr, self.momentum,
                          self.velocity)
        return params


def sgd_momentum_step(params: ModelParameters, grads: ModelParameters, lr: float,
                      momentum: float, velocity: list) -> ModelParameters:
    """Update ``params`` and ``velocity`` in place; reject non-finite gradients."""
    pblocks, gblocks = params.blocks, grads.blocks
    if len(pblocks) != len(gblocks) or len(velocity) != len(pblocks):
        raise ValueError("parameter, gradient and velocity block counts differ")
    for p, g in zip(pblocks, gblocks):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient")
    for p, g, v in zip(pblocks, gblocks, velocity):
        v *= momentum
        v += g
        p -= lr * v
    return params


# -------------------------------------------------------------- checkpoint

CHECKPOINT_MAGIC = b"WSSEGCKP"
CHECKPOINT_VERSION = 1


def encode_blocks(magic: bytes, blocks, metadata: dict | None = None) -> bytes:
    """Binary layout: magic, u32 version, u32 metadata length, JSON metadata,
    u32 block count, then per block u32 ndim, u64 dims, little-endian f64 data."""
    meta = json.dumps(metadata or {}, sort_keys=True).encode()
    parts = [magic, struct.pack("<II", CHECKPOINT_VERSION, len(meta)), meta,
             struct.pack("<I", len(blocks))]
    for a in blocks:
        a = np.asarray(a, dtype="<f8")
        parts.append(struct.pack("<I", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        parts.append(np.ascontiguousarray(a).tobytes())
    return b"".join(parts)


def decode_blocks(magic: bytes, data: bytes):
    if data[:len(magic)] != magic:
        raise ValueError("bad magic string")
    pos = len(magic)
    version, meta_len = struct.unpack_from("<II", data, pos)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported version {version}")
    pos += 8
    metadata = json.loads(data[pos:pos + meta_len].decode())
    pos += meta_len
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    blocks = []
    for _ in range(count):
        (ndim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", data, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        blocks.append(np.frombuffer(data, dtype="<f8", count=size, offset=pos)
                      .reshape(shape).astype(np.float64))
        pos += 8 * size
    if pos != len(data):
        raise ValueError("trailing bytes after last block")
    return blocks, metadata


def save_checkpoint(path, params: ModelParameters, metadata: dict | None = None):
    with open(path, "wb") as f:
        f.write(encode_blocks(CHECKPOINT_MAGIC, params.blocks, metadata))


def load_checkpoint(path):
    """Return ``(ModelParameters, metadata)``."""
    with open(path, "rb") as f:
        blocks, meta = decode_blocks(CHECKPOINT_MAGIC, f.read())
    return ModelParameters.from_blocks(blocks), meta
