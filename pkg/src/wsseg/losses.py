"""Weak-supervision objectives.

Every loss returns ``(value, grad_probs)`` where ``grad_probs`` is the
gradient with respect to the batch probability matrix; chain it through
:func:`wsseg.model.softmax_backward` to reach the logits. Normalizers are
batch-local counts and logarithms are natural.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_FLOOR = 1e-12


@dataclass
class PredictionMatrix:
    probs: np.ndarray       # B x K
    point_ids: np.ndarray   # global index of each row

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.point_ids = np.asarray(self.point_ids, dtype=np.int64)
        if self.probs.ndim != 2 or len(self.probs) != len(self.point_ids):
            raise ValueError("probs must be B x K with one point id per row")

    @property
    def class_count(self) -> int:
        return self.probs.shape[1]


class EnsembleStore:
    """Per-point exponential moving average of predicted probabilities."""

    def __init__(self, n: int, class_count: int, alpha: float = 0.9):
        self.probs = np.zeros((n, class_count))
        self.visited = np.zeros(n, dtype=bool)
        self.alpha = alpha

    @property
    def class_count(self) -> int:
        return self.probs.shape[1]

    def update(self, preds: PredictionMatrix):
        ema_update(self, preds)
        return self


def ema_update(store: EnsembleStore, preds: PredictionMatrix) -> EnsembleStore:
    """Blend batch predictions into the store; first visits copy the prediction."""
    ids = preds.point_ids
    seen = store.visited[ids]
    old, new = ids[seen], ids[~seen]
    a = store.alpha
    store.probs[old] = a * store.probs[old] + (1.0 - a) * preds.probs[seen]
    store.probs[new] = preds.probs[~seen]
    store.visited[new] = True
    return store


def entropy(probs) -> np.ndarray:
    """Shannon entropy per row in nats, with 0 log 0 taken as 0."""
    p = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=1)


def seg_loss(preds: PredictionMatrix, labeled_mask, labels):
    """Mean cross entropy over labeled rows.

    ``labels`` holds one class per row; entries on unlabeled rows are ignored.
    """
    p = preds.probs
    mask = np.asarray(labeled_mask, dtype=bool)
    grad = np.zeros_like(p)
    rows = np.flatnonzero(mask)
    if len(rows) == 0:
        return 0.0, grad
    y = np.asarray(labels, dtype=np.int64)[rows]
    if np.any((y < 0) | (y >= p.shape[1])):
        raise ValueError("label outside [0, K)")
    py = np.maximum(p[rows, y], PROB_FLOOR)
    value = -np.mean(np.log(py))
    grad[rows, y] = -1.0 / (len(rows) * py)
    return float(value), grad


def entropy_loss(preds: PredictionMatrix, unlabeled_mask):
    """Mean entropy over unlabeled rows."""
    p = preds.probs
    mask = np.asarray(unlabeled_mask, dtype=bool)
    grad = np.zeros_like(p)
    n = int(mask.sum())
    if n == 0:
        return 0.0, grad
    q = np.maximum(p[mask], PROB_FLOOR)
    value = -np.sum(q * np.log(q)) / n
    grad[mask] = -(np.log(q) + 1.0) / n
    return float(value), grad


def epc_loss(preds: PredictionMatrix, store: EnsembleStore):
    """Mean squared distance to the ensemble over rows the store has seen.

    The ensemble is a constant target: no gradient flows into it.
    """
    p = preds.probs
    grad = np.zeros_like(p)
    seen = store.visited[preds.point_ids]
    n = int(seen.sum())
    if n == 0:
        return 0.0, grad
    diff = p[seen] - store.probs[preds.point_ids[seen]]
    grad[seen] = 2.0 * diff / n
    return float(np.sum(diff * diff) / n), grad


@dataclass
class ConfidenceField:
    entropy: np.ndarray
    weight: np.ndarray


def confidence_weights(probs, class_count: int | None = None) -> ConfidenceField:
    """w = 1 - H / ln K, so certain rows weigh 1 and uniform rows 0."""
    probs = np.asarray(probs, dtype=np.float64)
    k = probs.shape[1] if class_count is None else class_count
    h = entropy(probs)
    w = np.clip(1.0 - h / np.log(k), 0.0, 1.0)
    return ConfidenceField(h, w)


@dataclass
class PseudoLabelSet:
    point_ids: np.ndarray
    labels: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.point_ids)


def pseudo_labels(store: EnsembleStore, unlabeled_ids, weight_probs=None) -> PseudoLabelSet:
    """Argmax of the ensemble for every visited unlabeled point.

    Weights come from the ensemble's entropy unless ``weight_probs`` (rows
    aligned with ``unlabeled_ids``) is supplied.
    """
    ids = np.asarray(unlabeled_ids, dtype=np.int64)
    seen = store.visited[ids]
    ens = store.probs[ids[seen]]
    labels = np.argmax(ens, axis=1)  # first maximum wins ties
    source = ens if weight_probs is None else np.asarray(weight_probs)[seen]
    w = confidence_weights(source, store.class_count).weight
    return PseudoLabelSet(ids[seen], labels, w)


def pl_loss(preds: PredictionMatrix, pl: PseudoLabelSet):
    """Confidence-weighted cross entropy against pseudo-labels, mean over them."""
    p = preds.probs
    grad = np.zeros_like(p)
    if len(pl) == 0:
        return 0.0, grad
    order = np.argsort(preds.point_ids, kind="stable")
    pos = np.searchsorted(preds.point_ids, pl.point_ids, sorter=order)
    rows = order[np.minimum(pos, len(order) - 1)]
    if np.any(preds.point_ids[rows] != pl.point_ids):
        raise ValueError("pseudo-labeled points missing from the batch")
    n = len(pl)
    py = np.maximum(p[rows, pl.labels], PROB_FLOOR)
    value = -np.sum(pl.weights * np.log(py)) / n
    np.add.at(grad, (rows, pl.labels), -pl.weights / (n * py))
    return float(value), grad


def rampup_weight(step, rampup_length) -> float:
    """exp(-5 (1 - T)^2) with T = min(step / rampup_length, 1)."""
    if rampup_length < 1:
        raise ValueError("rampup_length must be >= 1")
    t = min(max(step, 0) / rampup_length, 1.0)
    return float(np.exp(-5.0 * (1.0 - t) ** 2))


@dataclass
class LossBreakdown:
    l_seg: float
    l_ent: float
    l_epc: float
    l_pl: float
    lambda_ent: float
    lambda_epc: float
    lambda_pl: float
    total: float
    grad_probs: np.ndarray
    pseudo: PseudoLabelSet | None = None


def combined_loss(stage: int, step: int, preds: PredictionMatrix, labeled_mask, labels,
                  store: EnsembleStore, *, rampup_length: int, use_ent: bool = True,
                  use_epc: bool = True, use_pl: bool = True,
                  confidence_source: str = "ensemble") -> LossBreakdown:
    """Weighted sum of the supervised and auxiliary losses for one step.

    Stage 1 ramps the entropy and consistency weights with
    :func:`rampup_weight` and keeps the pseudo-label weight at 0; stage 2
    sets every enabled weight to 1 and draws pseudo-labels from ``store``.
    Disabled terms get weight 0 and contribute no gradient. ``store`` must
    not yet include this step's predictions.
    """
    if stage not in (1, 2):
        raise ValueError(f"stage must be 1 or 2, got {stage}")
    if confidence_source not in ("ensemble", "instant"):
        raise ValueError("confidence_source must be 'ensemble' or 'instant'")
    labeled_mask = np.asarray(labeled_mask, dtype=bool)
    unlabeled = ~labeled_mask

    ramp = rampup_weight(step, rampup_length) if stage == 1 else 1.0
    lam_ent = ramp if use_ent else 0.0
    lam_epc = ramp if use_epc else 0.0
    lam_pl = 1.0 if (use_pl and stage == 2) else 0.0

    l_seg, grad = seg_loss(preds, labeled_mask, labels)
    l_ent, g_ent = entropy_loss(preds, unlabeled)
    l_epc, g_epc = epc_loss(preds, store)
    pl = None
    l_pl = 0.0
    if stage == 2 and use_pl:
        rows = np.flatnonzero(unlabeled)
        weight_probs = preds.probs[rows] if confidence_source == "instant" else None
        pl = pseudo_labels(store, preds.point_ids[rows], weight_probs)
        l_pl, g_pl = pl_loss(preds, pl)

    total = l_seg
    grad = grad.copy()
    if lam_ent:
        total += lam_ent * l_ent
        grad += lam_ent * g_ent
    if lam_epc:
        total += lam_epc * l_epc
        grad += lam_epc * g_epc
    if lam_pl:
        total += lam_pl * l_pl
        grad += lam_pl * g_pl
    return LossBreakdown(l_seg, l_ent, l_epc, l_pl, lam_ent, lam_epc, lam_pl,
                         float(total), grad, pl)
