"""Confusion matrix, per-class precision/recall/F1, overall accuracy, entropy maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import entropy


def confusion(pred, truth, class_count: int) -> np.ndarray:
    """K x K counts, rows = truth, columns = prediction."""
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    for name, arr in (("pred", pred), ("truth", truth)):
        if arr.size and (arr.min() < 0 or arr.max() >= class_count):
            raise ValueError(f"{name} entries must lie in [0, {class_count})")
    flat = truth * class_count + pred
    return np.bincount(flat, minlength=class_count * class_count).reshape(class_count, class_count)


@dataclass
class MetricsReport:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    oa: float
    absent: np.ndarray      # classes with no truth and no predictions
    class_names: tuple = ()

    @property
    def average_f1(self) -> float:
        return float(np.mean(self.f1))

    def format(self) -> str:
        names = self.class_names or tuple(str(i) for i in range(len(self.f1)))
        width = max(8, max(len(n) for n in names))
        lines = [f"{'class':<{width}}  {'precision':>9}  {'recall':>9}  {'F1':>9}"]
        for i, n in enumerate(names):
            flag = "  (absent)" if self.absent[i] else ""
            lines.append(f"{n:<{width}}  {self.precision[i]:9.4f}  {self.recall[i]:9.4f}"
                         f"  {self.f1[i]:9.4f}{flag}")
        lines.append(f"{'avg F1':<{width}}  {'':>9}  {'':>9}  {self.average_f1:9.4f}")
        lines.append(f"{'OA':<{width}}  {'':>9}  {'':>9}  {self.oa:9.4f}")
        return "\n".join(lines)

    def csv_rows(self):
        names = self.class_names or tuple(str(i) for i in range(len(self.f1)))
        rows = [("class", "tp", "fp", "fn", "precision", "recall", "f1")]
        for i, n in enumerate(names):
            rows.append((n, int(self.tp[i]), int(self.fp[i]), int(self.fn[i]),
                         repr(float(self.precision[i])), repr(float(self.recall[i])),
                         repr(float(self.f1[i]))))
        rows.append(("avg_f1", "", "", "", "", "", repr(self.average_f1)))
        rows.append(("oa", "", "", "", "", "", repr(self.oa)))
        return rows


def metrics(cm, class_names=()) -> MetricsReport:
    cm = np.asarray(cm, dtype=np.int64)
    total = cm.sum()
    if total <= 0:
        raise ValueError("confusion matrix is empty")
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f1 = np.where(precision + recall > 0,
                      2.0 * precision * recall / (precision + recall), 0.0)
    absent = (cm.sum(axis=0) == 0) & (cm.sum(axis=1) == 0)
    return MetricsReport(tp.astype(np.int64), fp.astype(np.int64), fn.astype(np.int64),
                         precision, recall, f1, float(tp.sum() / total), absent,
                         tuple(class_names))


def entropy_map(probs, class_count: int | None = None) -> np.ndarray:
    """Entropy normalized by ln K, one value in [0, 1] per point."""
    probs = np.asarray(probs, dtype=np.float64)
    k = probs.shape[1] if class_count is None else class_count
    return np.clip(entropy(probs) / np.log(k), 0.0, 1.0)
