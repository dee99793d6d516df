"""Confusion matrix, per-class mean accuracy, and structured metric reports.

Under label shift, overall accuracy rewards predicting the majority class;
averaging per-class recall weights every class equally, which is the metric
all experiments here report."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .data import LabeledDataset


def confusion_matrix(
    true_labels: np.ndarray, pred_labels: np.ndarray, n_classes: int
) -> np.ndarray:
    """Count matrix [K, K]: entry (i, j) is #samples of true class i predicted j."""
    true_labels = np.asarray(true_labels, dtype=np.int64)
    pred_labels = np.asarray(pred_labels, dtype=np.int64)
    if true_labels.shape != pred_labels.shape or true_labels.ndim != 1:
        raise ValueError(
            f"label vectors must be 1-D and equal length, got "
            f"{true_labels.shape} and {pred_labels.shape}"
        )
    for name, vec in (("true", true_labels), ("pred", pred_labels)):
        if vec.size and (vec.min() < 0 or vec.max() >= n_classes):
            raise ValueError(
                f"{name} labels outside [0, {n_classes}): "
                f"range [{vec.min()}, {vec.max()}]"
            )
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (true_labels, pred_labels), 1)
    return cm


def per_class_mean_accuracy(
    confusion: np.ndarray, class_counts: np.ndarray | None = None
) -> tuple[np.ndarray, float]:
    """Per-class recall diag(C)/counts and its mean over non-empty classes.

    ``class_counts`` defaults to the confusion row sums and must match them
    when passed explicitly.  Empty classes get NaN recall and are excluded
    from the mean; a confusion matrix with no samples at all is an error.
    """
    confusion = np.asarray(confusion)
    if confusion.ndim != 2 or confusion.shape[0] != confusion.shape[1]:
        raise ValueError(f"confusion must be square, got shape {confusion.shape}")
    counts = confusion.sum(axis=1)
    if class_counts is not None:
        class_counts = np.asarray(class_counts, dtype=np.int64)
        if class_counts.shape != counts.shape or (class_counts != counts).any():
            raise ValueError("class_counts do not match confusion row sums")
    if counts.sum() == 0:
        raise ValueError("confusion matrix has no samples")
    per_class = np.full(confusion.shape[0], np.nan)
    nonempty = counts > 0
    per_class[nonempty] = np.diag(confusion)[nonempty] / counts[nonempty]
    return per_class, float(per_class[nonempty].mean())


@dataclass
class MetricsReport:
    """One run's evaluation: confusion counts, per-class recall, and provenance."""

    confusion: np.ndarray
    per_class_acc: np.ndarray
    mean_acc: float
    class_counts: np.ndarray
    run_metadata: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "confusion": self.confusion.tolist(),
            "per_class_acc": [
                None if math.isnan(v) else v for v in self.per_class_acc.tolist()
            ],
            "mean_acc": self.mean_acc,
            "class_counts": self.class_counts.tolist(),
            "run_metadata": self.run_metadata,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "MetricsReport":
        return cls(
            confusion=np.asarray(d["confusion"], dtype=np.int64),
            per_class_acc=np.array(
                [np.nan if v is None else v for v in d["per_class_acc"]]
            ),
            mean_acc=float(d["mean_acc"]),
            class_counts=np.asarray(d["class_counts"], dtype=np.int64),
            run_metadata=dict(d.get("run_metadata", {})),
        )

    def write_json(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def write_confusion_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        k = self.confusion.shape[0]
        lines = ["true\\pred," + ",".join(str(j) for j in range(k))]
        for i in range(k):
            lines.append(f"{i}," + ",".join(str(v) for v in self.confusion[i]))
        path.write_text("\n".join(lines) + "\n")


def predict(model, ds: LabeledDataset, batch_size: int = 512) -> np.ndarray:
    """Classifier argmax over the whole dataset, never touching labels."""
    preds = []
    with torch.no_grad():
        for start in range(0, len(ds), batch_size):
            x = torch.from_numpy(ds.features[start : start + batch_size].copy())
            _, logits = model(x)
            preds.append(logits.argmax(dim=1).numpy())
    return np.concatenate(preds)


def evaluate(
    model, ds: LabeledDataset, metadata: dict[str, Any] | None = None
) -> MetricsReport:
    """Score ``model`` on ``ds``; this is the one place target labels are read."""
    preds = predict(model, ds)
    cm = confusion_matrix(ds.labels, preds, ds.n_classes)
    per_class, mean_acc = per_class_mean_accuracy(cm)
    return MetricsReport(
        confusion=cm,
        per_class_acc=per_class,
        mean_acc=mean_acc,
        class_counts=cm.sum(axis=1),
        run_metadata=dict(metadata or {}),
    )
