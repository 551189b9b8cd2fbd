from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ifdl.data import Label, NUM_CLASSES


@dataclass
class DetectionReport:
    per_class: dict[str, tuple[float, float]]  # class -> (accuracy, f1)
    overall_accuracy: float
    overall_f1: float
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_class": {k: {"accuracy": a, "f1": f} for k, (a, f) in self.per_class.items()},
            "overall_accuracy": self.overall_accuracy,
            "overall_f1": self.overall_f1,
            "flags": list(self.flags),
        }


def macro_average(values: Sequence[float]) -> float:
    """Unweighted mean over classes (the "Overall" column)."""
    if not len(values):
        raise ValueError("nothing to average")
    return float(sum(values) / len(values))


def _as_index(v) -> int:
    return v.index if isinstance(v, Label) else int(v)


def detection_scores(preds: Sequence, labels: Sequence, num_classes: int = NUM_CLASSES) -> DetectionReport:
    """Per-class one-vs-rest accuracy and F1, macro-averaged.

    A class that never occurs in ``labels`` gets F1 = 0 if it was predicted at least
    once and F1 = 1 otherwise; either case is recorded in ``flags``.
    """
    if len(preds) != len(labels):
        raise ValueError(f"{len(preds)} predictions for {len(labels)} labels")
    if not len(labels):
        raise ValueError("empty evaluation set")
    p = np.array([_as_index(v) for v in preds])
    y = np.array([_as_index(v) for v in labels])
    n = len(y)
    per_class: dict[str, tuple[float, float]] = {}
    flags = []
    for c in range(num_classes):
        name = Label.from_index(c).value if num_classes == NUM_CLASSES else str(c)
        tp = int(np.sum((p == c) & (y == c)))
        fp = int(np.sum((p == c) & (y != c)))
        fn = int(np.sum((p != c) & (y == c)))
        tn = n - tp - fp - fn
        acc = (tp + tn) / n
        if tp + fn == 0:
            f1 = 0.0 if fp else 1.0
            flags.append(f"class {name} absent from labels; F1 set to {f1:g}")
        else:
            f1 = 2 * tp / (2 * tp + fp + fn)
        per_class[name] = (acc, f1)
    return DetectionReport(
        per_class=per_class,
        overall_accuracy=macro_average([a for a, _ in per_class.values()]),
        overall_f1=macro_average([f for _, f in per_class.values()]),
        flags=flags,
    )
