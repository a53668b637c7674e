"""Classification metrics with "high" (1) as the positive class."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    f1: float
    f1_undefined: bool = False   # precision + recall was 0; f1 reported as 0


def compute_metrics(predictions, labels, threshold: float = 0.5) -> Metrics:
    """Accuracy and F1 of probabilities (or hard 0/1 predictions) against binary labels."""
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if p.size == 0:
        raise ValueError("cannot score an empty prediction set")
    if p.shape != y.shape:
        raise ValueError(f"{p.size} predictions but {y.size} labels")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    pred = p >= threshold
    truth = y == 1
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    accuracy = float(np.mean(pred == truth))
    if 2 * tp + fp + fn == 0 or tp == 0:
        return Metrics(accuracy, 0.0, True)
    # 2PR/(P+R) reduces to 2TP/(2TP+FP+FN).
    return Metrics(accuracy, 2.0 * tp / (2 * tp + fp + fn), False)
