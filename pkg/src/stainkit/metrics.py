"""Object-level detection scoring: precision, recall and F1.

Predicted objects are the 8-connected components of a binary mask;
ground truth comes from an annotation set. Matching is greedy
one-to-one on descending IoU with a configurable threshold (default
0.5), with a centroid-in-truth alternative for sensitivity studies.
Repetitions aggregate as mean and population std of the per-run
metrics.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy import ndimage

from .errors import DimensionError, DomainError, EmptyInput
from .tissue_patching import AnnotationSet

__all__ = [
    "DetectionCounts",
    "Scores",
    "DetectionReport",
    "match_objects",
    "detection_scores",
    "f1_score",
    "build_report",
    "aggregate_runs",
    "write_report_json",
    "write_report_csv",
]

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)
MATCH_MODES = ("iou", "centroid")
AGGREGATIONS = ("pooled", "per_slide")


@dataclass(frozen=True)
class DetectionCounts:
    true_positives: int = 0
    false_positives: int = 0
    false_negatives: int = 0

    def __post_init__(self):
        for name in ("true_positives", "false_positives", "false_negatives"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise DomainError(f"{name} must be a non-negative integer, got {value}")
            object.__setattr__(self, name, int(value))

    def __add__(self, other: "DetectionCounts") -> "DetectionCounts":
        return DetectionCounts(
            self.true_positives + other.true_positives,
            self.false_positives + other.false_positives,
            self.false_negatives + other.false_negatives,
        )

    def to_dict(self) -> dict:
        return {
            "tp": self.true_positives,
            "fp": self.false_positives,
            "fn": self.false_negatives,
        }


class Scores(NamedTuple):
    precision: float
    recall: float
    f1: float


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall, 0 when both vanish."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def detection_scores(counts: DetectionCounts) -> Scores:
    """Precision, recall and F1 with the zero-denominator convention 0."""
    tp, fp, fn = counts.true_positives, counts.false_positives, counts.false_negatives
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return Scores(precision, recall, f1_score(precision, recall))


def match_objects(
    pred_mask,
    truth: AnnotationSet,
    iou_threshold: float = 0.5,
    mode: str = "iou",
) -> DetectionCounts:
    """Greedy one-to-one matching of predicted components to truth objects.

    Candidate pairs are ranked by descending IoU; in ``iou`` mode a pair
    qualifies when IoU >= threshold, in ``centroid`` mode when the
    predicted component's centroid lies inside the truth object.
    Unmatched predictions count as false positives, unmatched truths as
    false negatives.
    """
    if mode not in MATCH_MODES:
        raise DomainError(f"unknown match mode {mode!r}; one of {MATCH_MODES}")
    if not 0.0 < iou_threshold < 1.0:
        raise DomainError(f"iou_threshold must be in (0, 1), got {iou_threshold}")
    pred = np.asarray(pred_mask)
    if pred.ndim != 2:
        raise DimensionError(f"prediction mask must be 2-D, got shape {pred.shape}")
    height, width = pred.shape
    for obj in truth:
        x0, y0, x1, y1 = obj.bbox()
        if x0 < 0 or y0 < 0 or x1 > width - 1 or y1 > height - 1:
            raise DimensionError(
                f"annotation {obj.id} extends beyond the {height}x{width} prediction mask"
            )

    labels, n_pred = ndimage.label(pred > 0, structure=_EIGHT_CONNECTED)
    n_truth = len(truth)
    if n_pred == 0 or n_truth == 0:
        return DetectionCounts(0, n_pred, n_truth)
    pred_sizes = np.bincount(labels.ravel(), minlength=n_pred + 1)

    if mode == "centroid":
        centroids = ndimage.center_of_mass(pred > 0, labels, range(1, n_pred + 1))

    candidates = []  # (iou, pred_label, truth_index)
    for j, obj in enumerate(truth):
        x0, y0, x1, y1 = obj.bbox()
        r0, r1 = int(np.floor(y0)), int(np.ceil(y1))
        c0, c1 = int(np.floor(x0)), int(np.ceil(x1))
        window = obj.rasterise(r0, c0, r1 - r0 + 1, c1 - c0 + 1)
        truth_area = int(window.sum())
        if truth_area == 0:
            continue
        crop = labels[r0 : r1 + 1, c0 : c1 + 1]
        inter = np.bincount(crop[window], minlength=n_pred + 1)
        for i in np.nonzero(inter[1:])[0] + 1:
            iou = inter[i] / (pred_sizes[i] + truth_area - inter[i])
            if mode == "iou":
                if iou >= iou_threshold:
                    candidates.append((float(iou), int(i), j))
            else:
                cy, cx = centroids[i - 1]
                if obj.contains(cx, cy):
                    candidates.append((float(iou), int(i), j))

    candidates.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_pred: set[int] = set()
    used_truth: set[int] = set()
    tp = 0
    for _, i, j in candidates:
        if i in used_pred or j in used_truth:
            continue
        used_pred.add(i)
        used_truth.add(j)
        tp += 1
    return DetectionCounts(tp, n_pred - tp, n_truth - tp)


@dataclass(frozen=True)
class DetectionReport:
    """Scores of one run (or the aggregate of several).

    For aggregates the headline precision/recall/f1 are means over the
    runs, with per-metric mean/std recorded alongside.
    """

    slides: Mapping[str, DetectionCounts]
    precision: float
    recall: float
    f1: float
    aggregation: str = "pooled"
    mean: Mapping[str, float] | None = None
    std: Mapping[str, float] | None = None
    n_runs: int = 1

    def to_dict(self) -> dict:
        doc = {
            "aggregation": self.aggregation,
            "slides": {name: counts.to_dict() for name, counts in self.slides.items()},
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "n_runs": self.n_runs,
        }
        if self.mean is not None:
            doc["mean"] = dict(self.mean)
            doc["std"] = dict(self.std)
        return doc


def build_report(
    slide_counts: Mapping[str, DetectionCounts],
    aggregation: str = "pooled",
) -> DetectionReport:
    """Score one run over its slides.

    ``pooled`` sums counts across slides before scoring; ``per_slide``
    scores each slide and averages the metrics.
    """
    if aggregation not in AGGREGATIONS:
        raise DomainError(f"unknown aggregation {aggregation!r}; one of {AGGREGATIONS}")
    if not slide_counts:
        raise EmptyInput("no slides to score")
    if aggregation == "pooled":
        total = DetectionCounts()
        for counts in slide_counts.values():
            total = total + counts
        scores = detection_scores(total)
    else:
        per_slide = [detection_scores(c) for c in slide_counts.values()]
        scores = Scores(
            float(np.mean([s.precision for s in per_slide])),
            float(np.mean([s.recall for s in per_slide])),
            float(np.mean([s.f1 for s in per_slide])),
        )
    return DetectionReport(dict(slide_counts), *scores, aggregation=aggregation)


def aggregate_runs(reports: Sequence[DetectionReport]) -> DetectionReport:
    """Mean and population std of each metric across repeated runs."""
    reports = list(reports)
    if not reports:
        raise EmptyInput("no reports to aggregate")
    metrics = {
        "precision": np.array([r.precision for r in reports]),
        "recall": np.array([r.recall for r in reports]),
        "f1": np.array([r.f1 for r in reports]),
    }
    mean = {name: float(v.mean()) for name, v in metrics.items()}
    std = {name: float(v.std()) for name, v in metrics.items()}
    merged: dict[str, DetectionCounts] = {}
    for k, report in enumerate(reports):
        for name, counts in report.slides.items():
            merged[f"run{k}/{name}"] = counts
    return DetectionReport(
        merged,
        mean["precision"],
        mean["recall"],
        mean["f1"],
        aggregation=reports[0].aggregation,
        mean=mean,
        std=std,
        n_runs=len(reports),
    )


def write_report_json(path, report: DetectionReport, config: Mapping | None = None) -> None:
    doc = report.to_dict()
    if config is not None:
        doc["config"] = dict(config)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def write_report_csv(path, report: DetectionReport) -> None:
    """Delimited export: one row per metric, mean and std columns."""
    mean = report.mean or {
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
    }
    std = report.std or {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["metric", "mean", "std"])
        for name in ("f1", "precision", "recall"):
            writer.writerow([name, f"{mean[name]:.4f}", f"{std[name]:.4f}"])
