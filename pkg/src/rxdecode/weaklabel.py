"""Weak labels (medicine lists) to strong labels (boxes), iteratively.

The first pass decodes every text unit top-k and claims a unit's box for
the first ground-truth medicine found among its paths, each medicine at
most once, in document reading order. Documents whose claimed-box count
reaches the coverage threshold seed the training set. Later passes train a
fresh segmenter on the current training set, predict boxes on *all*
documents, union them with previously accumulated boxes (boxes with IoU
above ``dedup_iou`` merge, keeping the earlier one), and re-apply the
coverage threshold. Boxes only accumulate, so the admitted set never
shrinks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from .decoder import DecoderConfig, decode_topk
from .errors import ConfigError, DataError
from .geometry import RotatedBox, box_iou
from .matcher import exact_matches
from .simulator import SimDocument


@dataclass(frozen=True)
class LabeledBox:
    box: RotatedBox
    medicine: str | None
    source: str  # "ocr-fn" or "seg-fn-<t>"


@dataclass
class WeakLabeledDoc:
    doc: SimDocument
    weak_labels: frozenset

    @classmethod
    def from_sim(cls, doc: SimDocument) -> "WeakLabeledDoc":
        if not doc.weak_labels:
            raise DataError(f"doc {doc.doc_id}: empty weak label set")
        return cls(doc=doc, weak_labels=frozenset(n.lower() for n in doc.weak_labels))


@dataclass
class StrongLabeledDoc:
    doc: SimDocument
    boxes: list[LabeledBox]


@dataclass
class IterationConfig:
    iterations: int = 3
    coverage_threshold: float = 0.9
    k_label: int = 20_000
    dedup_iou: float = 0.5

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if not (0.0 < self.coverage_threshold <= 1.0):
            raise ConfigError(f"coverage threshold {self.coverage_threshold} outside (0, 1]")


@dataclass
class IterationStats:
    iteration: int
    admitted: int
    total: int
    admitted_fraction: float
    boxes_total: int
    boxes_by_source: dict[str, int]


@dataclass
class IterationResult:
    stats: IterationStats
    admitted_ids: list[int]
    training_set: list[StrongLabeledDoc]
    segmenter: "Segmenter | None" = None


class Segmenter(Protocol):
    def train(self, docs: Sequence[StrongLabeledDoc]) -> None: ...
    def predict(self, doc: SimDocument) -> list[RotatedBox]: ...


def ocr_labeling_fn(weak_doc: WeakLabeledDoc, decoder_cfg: DecoderConfig) -> list[LabeledBox]:
    """Claim unit boxes for ground-truth medicines via top-k decoding."""
    remaining = set(weak_doc.weak_labels)
    out: list[LabeledBox] = []
    for unit in weak_doc.doc.units:
        if not remaining:
            break
        paths = decode_topk(unit.logits, decoder_cfg)
        wanted = frozenset(remaining)
        claimed = None
        for path in paths:
            for name in exact_matches(path.text, wanted):
                claimed = name
                break
            if claimed:
                break
        if claimed:
            remaining.discard(claimed)
            out.append(LabeledBox(box=unit.box, medicine=claimed, source="ocr-fn"))
    return out


def coverage_accept(matched: int, total: int, threshold: float) -> bool:
    if total < 1:
        raise DataError(f"coverage over empty label set (total={total})")
    return matched / total >= threshold


def _merge_boxes(existing: list[LabeledBox], new_boxes: Iterable[RotatedBox],
                 source: str, dedup_iou: float) -> list[LabeledBox]:
    merged = list(existing)
    for box in new_boxes:
        if any(box_iou(box, kept.box) > dedup_iou for kept in merged):
            continue
        merged.append(LabeledBox(box=box, medicine=None, source=source))
    return merged


def iterate(dataset: Sequence[WeakLabeledDoc], segmenter_factory: Callable[[], Segmenter],
            cfg: IterationConfig, decoder_cfg: DecoderConfig) -> list[IterationResult]:
    """Run the two labeling functions for ``cfg.iterations`` rounds."""
    if not dataset:
        raise DataError("empty dataset")
    label_cfg = DecoderConfig(k=cfg.k_label, beam_width=max(cfg.k_label, decoder_cfg.beam_width),
                              alpha=decoder_cfg.alpha, lm=decoder_cfg.lm)

    accumulated: dict[int, list[LabeledBox]] = {}
    for weak_doc in dataset:
        accumulated[weak_doc.doc.doc_id] = ocr_labeling_fn(weak_doc, label_cfg)

    results: list[IterationResult] = []
    for t in range(1, cfg.iterations + 1):
        segmenter = None
        if t >= 2:
            if not results[-1].training_set:
                raise DataError("no seed labels")
            segmenter = segmenter_factory()
            segmenter.train(results[-1].training_set)
            source = f"seg-fn-{t}"
            for weak_doc in dataset:
                doc_id = weak_doc.doc.doc_id
                accumulated[doc_id] = _merge_boxes(
                    accumulated[doc_id], segmenter.predict(weak_doc.doc), source, cfg.dedup_iou)

        admitted: list[StrongLabeledDoc] = []
        admitted_ids: list[int] = []
        by_source: dict[str, int] = {}
        boxes_total = 0
        for weak_doc in dataset:
            boxes = accumulated[weak_doc.doc.doc_id]
            boxes_total += len(boxes)
            for b in boxes:
                by_source[b.source] = by_source.get(b.source, 0) + 1
            if coverage_accept(len(boxes), len(weak_doc.weak_labels), cfg.coverage_threshold):
                admitted.append(StrongLabeledDoc(doc=weak_doc.doc, boxes=list(boxes)))
                admitted_ids.append(weak_doc.doc.doc_id)
        stats = IterationStats(
            iteration=t,
            admitted=len(admitted),
            total=len(dataset),
            admitted_fraction=len(admitted) / len(dataset),
            boxes_total=boxes_total,
            boxes_by_source=dict(sorted(by_source.items())),
        )
        results.append(IterationResult(stats=stats, admitted_ids=admitted_ids,
                                       training_set=admitted, segmenter=segmenter))
    return results


# ----------------------------------------------------------------------
# segmenter implementations
# ----------------------------------------------------------------------


class OracleSegmenter:
    """Returns the ground-truth medicine unit boxes; training is a no-op."""

    def train(self, docs: Sequence[StrongLabeledDoc]) -> None:
        pass

    def predict(self, doc: SimDocument) -> list[RotatedBox]:
        return doc.medicine_boxes()


class NullSegmenter:
    """Predicts nothing; freezes the training set after the first pass."""

    def train(self, docs: Sequence[StrongLabeledDoc]) -> None:
        pass

    def predict(self, doc: SimDocument) -> list[RotatedBox]:
        return []


class FeatureSegmenter:
    """Logistic regression over unit feature vectors, fit by full-batch
    gradient descent. A single-class training set degenerates to the
    majority-class constant classifier."""

    def __init__(self, epochs: int = 300, lr: float = 0.5, l2: float = 1e-4,
                 match_iou: float = 0.5):
        self.epochs = epochs
        self.lr = lr
        self.l2 = l2
        self.match_iou = match_iou
        self.weights: np.ndarray | None = None
        self.bias = 0.0
        self.mean: np.ndarray | None = None
        self.scale: np.ndarray | None = None
        self.constant: bool | None = None

    def train(self, docs: Sequence[StrongLabeledDoc]) -> None:
        feats, labels = [], []
        for strong in docs:
            label_boxes = [b.box for b in strong.boxes]
            for unit in strong.doc.units:
                feats.append(unit.features)
                positive = any(box_iou(unit.box, lb) > self.match_iou for lb in label_boxes)
                labels.append(1.0 if positive else 0.0)
        if not feats:
            raise DataError("no training units for the segmenter")
        x = np.asarray(feats)
        y = np.asarray(labels)
        if y.min() == y.max():
            self.constant = bool(y[0] > 0.5)
            return
        self.constant = None
        self.mean = x.mean(axis=0)
        self.scale = np.maximum(x.std(axis=0), 1e-9)
        xs = (x - self.mean) / self.scale
        w = np.zeros(xs.shape[1])
        b = 0.0
        n = len(y)
        for _ in range(self.epochs):
            z = xs @ w + b
            p = 1.0 / (1.0 + np.exp(-z))
            grad_w = xs.T @ (p - y) / n + self.l2 * w
            grad_b = float((p - y).mean())
            w -= self.lr * grad_w
            b -= self.lr * grad_b
        self.weights = w
        self.bias = b

    def predict(self, doc: SimDocument) -> list[RotatedBox]:
        if self.constant is not None:
            return [u.box for u in doc.units] if self.constant else []
        if self.weights is None:
            raise DataError("segmenter not trained")
        out = []
        for unit in doc.units:
            xs = (unit.features - self.mean) / self.scale
            if 1.0 / (1.0 + np.exp(-(xs @ self.weights + self.bias))) > 0.5:
                out.append(unit.box)
        return out


SEGMENTERS: dict[str, Callable[[], Segmenter]] = {
    "oracle": OracleSegmenter,
    "null": NullSegmenter,
    "reference": FeatureSegmenter,
}


# ----------------------------------------------------------------------
# strong-label files: JSONL, one document per line
# ----------------------------------------------------------------------


def save_strong_labels(docs: Iterable[StrongLabeledDoc], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for strong in docs:
            record = {
                "doc_id": strong.doc.doc_id,
                "boxes": [
                    {"t": b.box.top, "l": b.box.left, "h": b.box.height,
                     "w": b.box.width, "r": b.box.rotation,
                     "medicine": b.medicine, "source": b.source}
                    for b in strong.boxes
                ],
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_strong_labels(path: str | Path) -> dict[int, list[LabeledBox]]:
    out: dict[int, list[LabeledBox]] = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: line {line_no}: invalid JSON: {exc}") from exc
        out[record["doc_id"]] = [
            LabeledBox(box=RotatedBox(top=b["t"], left=b["l"], height=b["h"],
                                      width=b["w"], rotation=b["r"]),
                       medicine=b["medicine"], source=b["source"])
            for b in record["boxes"]
        ]
    return out
