"""Frame-wise evaluation: accuracy, class-wise precision/recall/F1, joint accuracy and fold aggregates.

Accuracy is computed per video and then averaged over videos. Precision and
recall pool every frame of the evaluated set before the class-wise counts
are taken.
"""

import csv
import io
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics import confusion_matrix

from src.file_utils import atomic_write_text
from src.logger import get_logger
from .errors import InvalidArgumentError

logger = get_logger(__name__)

SUMMARY_METRICS = ("accuracy", "macro_precision", "macro_recall", "macro_f1")


def _labels(values, name: str) -> np.ndarray:
    array = np.asarray(values)
    if array.ndim != 1:
        raise InvalidArgumentError(f"{name} must be a 1-D label sequence, got shape {array.shape}")
    if array.size and not np.issubdtype(array.dtype, np.integer):
        raise InvalidArgumentError(f"{name} must hold integer class ids")
    return array.astype(np.int64)


def _same_length(*arrays: np.ndarray) -> int:
    lengths = {a.shape[0] for a in arrays}
    if len(lengths) != 1:
        raise InvalidArgumentError(f"label sequences differ in length: {sorted(lengths)}")
    frames = lengths.pop()
    if frames == 0:
        raise InvalidArgumentError("label sequences are empty")
    return frames


def _mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values)


def frame_accuracy(gt, pred) -> float:
    """Fraction of frames of one video whose prediction equals the ground truth."""
    gt, pred = _labels(gt, "gt"), _labels(pred, "pred")
    frames = _same_length(gt, pred)
    return int(np.count_nonzero(gt == pred)) / frames


def dataset_accuracy(gts: Sequence, preds: Sequence, pooled: bool = False) -> float:
    """Mean of per-video accuracies, or the accuracy over all pooled frames."""
    if len(gts) != len(preds) or not gts:
        raise InvalidArgumentError("need the same non-zero number of ground-truth and predicted videos")
    if pooled:
        return frame_accuracy(np.concatenate([_labels(g, "gt") for g in gts]),
                              np.concatenate([_labels(p, "pred") for p in preds]))
    return _mean(frame_accuracy(g, p) for g, p in zip(gts, preds))


def joint_accuracy(phase_gt, phase_pred, step_gt, step_pred) -> float:
    """Fraction of frames where phase and step are both correct."""
    arrays = [_labels(phase_gt, "phase_gt"), _labels(phase_pred, "phase_pred"),
              _labels(step_gt, "step_gt"), _labels(step_pred, "step_pred")]
    frames = _same_length(*arrays)
    both = (arrays[0] == arrays[1]) & (arrays[2] == arrays[3])
    return int(np.count_nonzero(both)) / frames


def dataset_joint_accuracy(phase_gts, phase_preds, step_gts, step_preds, pooled: bool = False) -> float:
    """Joint accuracy per video averaged over videos (or over pooled frames)."""
    if not (len(phase_gts) == len(phase_preds) == len(step_gts) == len(step_preds)) or not phase_gts:
        raise InvalidArgumentError("need the same non-zero number of videos for every label set")
    if pooled:
        return joint_accuracy(*(np.concatenate([np.asarray(v) for v in group])
                                for group in (phase_gts, phase_preds, step_gts, step_preds)))
    return _mean(joint_accuracy(*video) for video in zip(phase_gts, phase_preds, step_gts, step_preds))


@dataclass(frozen=True)
class ClassScores:
    class_id: int
    precision: float
    recall: float
    f1: float
    support: int
    predicted: int

    @property
    def excluded(self) -> bool:
        return self.support == 0 and self.predicted == 0


@dataclass(frozen=True)
class MetricsReport:
    """Accuracy plus class-wise and macro precision, recall and F1 for one task."""

    accuracy: float
    per_class: Tuple[ClassScores, ...]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    excluded_classes: Tuple[int, ...]

    def summary(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in SUMMARY_METRICS}

    def to_dict(self):
        return {
            **self.summary(),
            "excluded_classes": list(self.excluded_classes),
            "per_class": [
                {"class_id": c.class_id, "precision": c.precision, "recall": c.recall, "f1": c.f1,
                 "support": c.support, "predicted": c.predicted}
                for c in self.per_class
            ],
        }


def _ratio(numerator: int, denominator: int) -> float:
    return numerator / denominator if denominator else 0.0


def per_class_prf(gt, pred, num_classes: int, accuracy: Optional[float] = None) -> MetricsReport:
    """Class-wise PR = |GT_c & P_c| / |P_c| and RE = |GT_c & P_c| / |GT_c| over all given frames.

    Classes absent from both sequences are left out of the macro means and
    listed in ``excluded_classes``. An empty denominator yields 0.
    ``accuracy`` defaults to the frame accuracy of the given frames.
    """
    gt, pred = _labels(gt, "gt"), _labels(pred, "pred")
    _same_length(gt, pred)
    if num_classes < 1:
        raise InvalidArgumentError("num_classes must be positive")
    for name, labels in (("gt", gt), ("pred", pred)):
        if labels.min() < 0 or labels.max() >= num_classes:
            raise InvalidArgumentError(f"{name} labels must lie in [0, {num_classes})")

    counts = confusion_matrix(gt, pred, labels=np.arange(num_classes))
    hits = np.diag(counts)
    support = counts.sum(axis=1)
    predicted = counts.sum(axis=0)
    scores = []
    for c in range(num_classes):
        precision = _ratio(int(hits[c]), int(predicted[c]))
        recall = _ratio(int(hits[c]), int(support[c]))
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        scores.append(ClassScores(c, precision, recall, f1, int(support[c]), int(predicted[c])))

    included = [s for s in scores if not s.excluded]
    excluded = tuple(s.class_id for s in scores if s.excluded)
    if accuracy is None:
        accuracy = frame_accuracy(gt, pred)
    return MetricsReport(
        accuracy=accuracy,
        per_class=tuple(scores),
        macro_precision=_mean(s.precision for s in included),
        macro_recall=_mean(s.recall for s in included),
        macro_f1=_mean(s.f1 for s in included),
        excluded_classes=excluded,
    )


def evaluate_task(gts: Sequence, preds: Sequence, num_classes: int) -> MetricsReport:
    """Per-video mean accuracy with PR/RE/F1 pooled over every frame of every video."""
    accuracy = dataset_accuracy(gts, preds)
    return per_class_prf(np.concatenate([_labels(g, "gt") for g in gts]),
                         np.concatenate([_labels(p, "pred") for p in preds]),
                         num_classes, accuracy=accuracy)


@dataclass(frozen=True)
class FoldAggregate:
    """Mean and sample standard deviation (n - 1) of each metric over folds."""

    mean: Dict[str, float]
    std: Dict[str, float]
    folds: int

    def to_dict(self):
        return {"folds": self.folds, "mean": dict(self.mean), "std": dict(self.std)}


def _metric_values(report) -> Mapping[str, float]:
    return report.summary() if isinstance(report, MetricsReport) else report


def aggregate_folds(reports: Sequence) -> FoldAggregate:
    """Aggregate :class:`MetricsReport` objects (or metric-name mappings) across folds."""
    if not reports:
        raise InvalidArgumentError("cannot aggregate an empty list of fold reports")
    values = [_metric_values(r) for r in reports]
    names = list(values[0])
    for other in values[1:]:
        if list(other) != names:
            raise InvalidArgumentError("fold reports disagree on metric names")
    mean, std = {}, {}
    for name in names:
        column = np.array([v[name] for v in values], dtype=np.float64)
        mean[name] = _mean(column)
        std[name] = float(np.std(column, ddof=1)) if column.size > 1 else 0.0
    return FoldAggregate(mean, std, len(values))


def critical_class_rows(report: MetricsReport, ontology, task: str) -> List[Dict]:
    """Precision, recall and F1 of the classes the ontology flags as critical."""
    rows = []
    for cls in ontology.classes(task):
        if not cls.critical:
            continue
        scores = report.per_class[cls.id]
        rows.append({"code": cls.code, "name": cls.name, "precision": scores.precision,
                     "recall": scores.recall, "f1": scores.f1, "support": scores.support})
    return rows


def rank_videos(accuracies: Mapping[str, float], count: int = 3) -> Tuple[List[str], List[str]]:
    """``(best, worst)`` video ids by accuracy; ties break on the id."""
    if count < 1:
        raise InvalidArgumentError("count must be positive")
    ranked = sorted(accuracies.items(), key=lambda item: (-item[1], item[0]))
    best = [video for video, _ in ranked[:count]]
    worst = [video for video, _ in sorted(accuracies.items(), key=lambda item: (item[1], item[0]))[:count]]
    return best, worst


def write_label_csv(path, columns: Mapping[str, Sequence[int]]):
    """Per-frame labels, one column per named sequence, led by a frame index."""
    arrays = {name: _labels(values, name) for name, values in columns.items()}
    frames = _same_length(*arrays.values())
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["frame", *arrays])
    for t in range(frames):
        writer.writerow([t, *(int(a[t]) for a in arrays.values())])
    atomic_write_text(path, buffer.getvalue())
    logger.debug("Wrote %d label rows to %s", frames, path)
    return path
