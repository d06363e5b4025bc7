"""Classification metrics: accuracy, per-class precision/recall/F1, macro F1,
and support-weighted detection rate.

Per-class F1 is 0 whenever its precision/recall denominators vanish, and
classes with no samples still count in the macro mean. The detection rate is
recall weighted by class support.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    macro_f1: float
    detection_rate: float
    per_class: dict
    confusion: np.ndarray  # rows actual, columns predicted, in class order
    classes: tuple


def compute_metrics(predictions, labels, classes) -> Metrics:
    predictions = list(predictions)
    labels = list(labels)
    if not predictions or len(predictions) != len(labels):
        raise ValueError("need equal, non-empty prediction and label lists")
    classes = tuple(classes)
    index = {c: i for i, c in enumerate(classes)}
    for value in labels:
        if value not in index:
            raise ValueError(f"label {value!r} not in class list")
    for value in predictions:
        if value not in index:
            raise ValueError(f"prediction {value!r} not in class list")

    k = len(classes)
    confusion = np.zeros((k, k), dtype=np.int64)
    for pred, actual in zip(predictions, labels):
        confusion[index[actual], index[pred]] += 1

    per_class = {}
    total = len(labels)
    correct = int(np.trace(confusion))
    weighted_recall = 0.0
    f1_sum = 0.0
    for i, name in enumerate(classes):
        tp = int(confusion[i, i])
        support = int(confusion[i, :].sum())
        predicted = int(confusion[:, i].sum())
        precision = tp / predicted if predicted else 0.0
        recall = tp / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if (precision + recall) else 0.0
        per_class[name] = ClassScores(precision, recall, f1, support)
        weighted_recall += support * recall
        f1_sum += f1

    return Metrics(
        accuracy=correct / total,
        macro_f1=f1_sum / k,
        detection_rate=weighted_recall / total,
        per_class=per_class,
        confusion=confusion,
        classes=classes,
    )
