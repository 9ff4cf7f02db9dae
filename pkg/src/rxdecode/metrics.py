"""Document-level extraction metrics and geometric segmentation quality.

Empty-set conventions (fixed here for determinism): with no predictions the
precision term is 0 unless the ground truth is also empty, in which case
every term is 1. The Jaccard term of two empty sets is 1. Segmentation
quality is a per-document mean of greedily matched box IoUs, averaged over
documents.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import DataError
from .geometry import RotatedBox, box_iou

__all__ = ["DocScore", "ExtractionReport", "SegReport", "jaccard_metrics", "seg_miou", "box_iou", "RotatedBox"]


@dataclass(frozen=True)
class DocScore:
    predicted: frozenset
    truth: frozenset
    jaccard: float
    precision: float
    recall: float


@dataclass
class ExtractionReport:
    mean_jaccard: float
    mean_precision: float
    mean_recall: float
    per_doc: list[DocScore] = field(default_factory=list)

    @property
    def n_docs(self) -> int:
        return len(self.per_doc)

    def as_dict(self) -> dict:
        return {
            "n_docs": self.n_docs,
            "mean_jaccard": self.mean_jaccard,
            "mean_precision": self.mean_precision,
            "mean_recall": self.mean_recall,
            "per_doc": [
                {
                    "predicted": sorted(d.predicted),
                    "truth": sorted(d.truth),
                    "jaccard": d.jaccard,
                    "precision": d.precision,
                    "recall": d.recall,
                }
                for d in self.per_doc
            ],
        }


def _doc_score(pred: Iterable[str], truth: Iterable[str]) -> DocScore:
    p = frozenset(x.lower() for x in pred)
    g = frozenset(x.lower() for x in truth)
    inter = len(p & g)
    union = len(p | g)
    jaccard = inter / union if union else 1.0
    precision = inter / len(p) if p else (1.0 if not g else 0.0)
    recall = inter / len(g) if g else (1.0 if not p else 0.0)
    return DocScore(p, g, jaccard, precision, recall)


def jaccard_metrics(preds: Sequence[Iterable[str]], truths: Sequence[Iterable[str]]) -> ExtractionReport:
    """Mean Jaccard index, precision, and recall over aligned documents."""
    if len(preds) != len(truths):
        raise DataError(f"preds/truths length mismatch: {len(preds)} != {len(truths)}")
    if not preds:
        raise DataError("no documents to evaluate")
    per_doc = [_doc_score(p, g) for p, g in zip(preds, truths)]
    m = len(per_doc)
    return ExtractionReport(
        mean_jaccard=sum(d.jaccard for d in per_doc) / m,
        mean_precision=sum(d.precision for d in per_doc) / m,
        mean_recall=sum(d.recall for d in per_doc) / m,
        per_doc=per_doc,
    )


@dataclass
class SegReport:
    mean_iou: float
    per_doc: list[float] = field(default_factory=list)
    matched_ious: list[list[float]] = field(default_factory=list)


def _greedy_match(preds: Sequence[RotatedBox], truths: Sequence[RotatedBox]) -> list[tuple[int, int, float]]:
    pairs = []
    for ti, tb in enumerate(truths):
        for pi, pb in enumerate(preds):
            iou = box_iou(pb, tb)
            if iou > 0:
                pairs.append((iou, ti, pi))
    pairs.sort(key=lambda x: (-x[0], x[1], x[2]))
    used_t: set[int] = set()
    used_p: set[int] = set()
    matches = []
    for iou, ti, pi in pairs:
        if ti in used_t or pi in used_p:
            continue
        used_t.add(ti)
        used_p.add(pi)
        matches.append((ti, pi, iou))
    return matches


def seg_miou(pred_boxes: Sequence[Sequence[RotatedBox]], truth_boxes: Sequence[Sequence[RotatedBox]]) -> SegReport:
    """Greedy one-to-one box matching; unmatched boxes on either side count 0."""
    if len(pred_boxes) != len(truth_boxes):
        raise DataError(f"preds/truths length mismatch: {len(pred_boxes)} != {len(truth_boxes)}")
    per_doc = []
    matched_all = []
    for preds, truths in zip(pred_boxes, truth_boxes):
        matches = _greedy_match(preds, truths)
        matched = [m[2] for m in matches]
        slots = len(truths) + (len(preds) - len(matches))
        per_doc.append(sum(matched) / slots if slots else 1.0)
        matched_all.append(matched)
    mean = sum(per_doc) / len(per_doc) if per_doc else 1.0
    return SegReport(mean_iou=mean, per_doc=per_doc, matched_ious=matched_all)
