"""Confusion-matrix evaluation metrics for binary segmentation masks."""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class MetricsReport:
    dice: float
    iou: float
    recall: float
    precision: float
    accuracy: float
    f2: float
    n_images: int = 1

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


METRIC_NAMES = ("dice", "iou", "recall", "precision", "accuracy", "f2")


def binarize(m: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Threshold a probability map to {0, 1}; p >= threshold maps to 1."""
    return (np.asarray(m) >= threshold).astype(np.float32)


def _require_binary(name: str, m: np.ndarray) -> np.ndarray:
    m = np.asarray(m)
    if not np.isin(m, (0, 1)).all():
        raise ValueError(f"{name} mask must be binary (values in {{0, 1}})")
    return m


def confusion_counts(m_true: np.ndarray, m_pred: np.ndarray) -> ConfusionCounts:
    """Pixel tallies of a predicted binary mask against the ground truth."""
    t = _require_binary("true", m_true)
    p = _require_binary("pred", m_pred)
    if t.shape != p.shape:
        raise ValueError(f"mask shape mismatch: {t.shape} vs {p.shape}")
    t = t.astype(bool)
    p = p.astype(bool)
    tp = int(np.count_nonzero(t & p))
    fp = int(np.count_nonzero(~t & p))
    fn = int(np.count_nonzero(t & ~p))
    tn = int(np.count_nonzero(~t & ~p))
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def _ratio(num: float, den: float, c: ConfusionCounts) -> float:
    # Degenerate denominators arise only when positives are absent on one
    # side; score 1.0 iff the prediction is also exactly right in that
    # respect (no positives anywhere), else 0.0.
    if den == 0:
        return 1.0 if (c.tp + c.fp + c.fn) == 0 else 0.0
    return num / den


def compute_metrics(c: ConfusionCounts) -> MetricsReport:
    """Single-image metrics from confusion counts.

    Dice = 2TP/(2TP+FP+FN), IoU = TP/(TP+FP+FN), Recall = TP/(TP+FN),
    Precision = TP/(TP+FP), Accuracy = (TP+TN)/N, F2 = 5PR/(4P+R).
    """
    dice = _ratio(2.0 * c.tp, 2.0 * c.tp + c.fp + c.fn, c)
    iou = _ratio(float(c.tp), float(c.tp + c.fp + c.fn), c)
    recall = _ratio(float(c.tp), float(c.tp + c.fn), c)
    precision = _ratio(float(c.tp), float(c.tp + c.fp), c)
    accuracy = (c.tp + c.tn) / c.total
    f2 = _ratio(5.0 * precision * recall, 4.0 * precision + recall, c)
    return MetricsReport(
        dice=dice,
        iou=iou,
        recall=recall,
        precision=precision,
        accuracy=accuracy,
        f2=f2,
        n_images=1,
    )


def evaluate_dataset(
    predict_fn,
    samples,
    threshold: float = 0.5,
    csv_path: str | Path | None = None,
) -> MetricsReport:
    """Average per-image metrics of ``predict_fn`` over ``samples``.

    ``predict_fn`` maps an image array (H, W, 3) in [0, 1] to a probability
    map broadcastable to the sample's mask shape. Per-image metrics are
    averaged arithmetically. With ``csv_path`` set, writes one row per image
    plus a final ``mean`` row.
    """
    rows: list[tuple[str, MetricsReport]] = []
    for sample in samples:
        prob = np.asarray(predict_fn(sample.image))
        pred = binarize(prob.reshape(sample.mask.shape), threshold)
        counts = confusion_counts(sample.mask, pred)
        rows.append((sample.id, compute_metrics(counts)))
    if not rows:
        raise ValueError("cannot evaluate an empty dataset")

    means = {
        name: float(np.mean([getattr(r, name) for _, r in rows]))
        for name in METRIC_NAMES
    }
    report = MetricsReport(n_images=len(rows), **means)

    if csv_path is not None:
        write_metrics_csv(csv_path, rows, report)
    return report


def write_metrics_csv(
    path: str | Path,
    rows: list[tuple[str, MetricsReport]],
    mean_report: MetricsReport,
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", *METRIC_NAMES])
        for image_id, r in rows:
            writer.writerow([image_id] + [f"{getattr(r, m):.6f}" for m in METRIC_NAMES])
        writer.writerow(["mean"] + [f"{getattr(mean_report, m):.6f}" for m in METRIC_NAMES])
