"""End-to-end extraction runs: decode, match, score.

Segmented mode decodes segmenter-selected units with the chosen decoder
configuration and everything else with the vanilla one; full-page mode
decodes every unit with the chosen configuration. All decoded lines feed
the matcher, whose per-document union of predictions is scored against the
weak labels.
"""

from __future__ import annotations

import multiprocessing
import os
from dataclasses import dataclass
from typing import Callable, Sequence

from .decoder import DecoderConfig, decode_topk
from .errors import ConfigError
from .geometry import RotatedBox, box_iou
from .grammar import GrammarSpec, MedicineVocabulary, build_corpus
from .lm import NGramModel, train_ngram
from .matcher import MatchStrategy, match_line
from .metrics import ExtractionReport, jaccard_metrics
from .simulator import SimDocument

MODES = ("full_page", "segmented")


@dataclass
class ExtractionRun:
    report: ExtractionReport
    predictions: dict[int, list[str]]
    n_chosen_units: int
    n_vanilla_units: int


def worker_count() -> int:
    raw = os.environ.get("RXDECODE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"RXDECODE_THREADS must be an integer, got {raw!r}")


def select_units(doc: SimDocument, seg_boxes: Sequence[RotatedBox], iou_thr: float = 0.5) -> set[int]:
    """Indexes of units overlapping any segmenter-predicted box."""
    selected = set()
    for idx, unit in enumerate(doc.units):
        if any(box_iou(unit.box, b) > iou_thr for b in seg_boxes):
            selected.add(idx)
    return selected


def _decode_doc(doc: SimDocument, mode: str, segment_fn, chosen_cfg: DecoderConfig,
                vanilla_cfg: DecoderConfig, vocab, strategy: MatchStrategy):
    if mode == "segmented":
        selected = select_units(doc, segment_fn(doc))
    else:
        selected = set(range(len(doc.units)))
    predictions = set()
    n_chosen = 0
    for idx, unit in enumerate(doc.units):
        cfg = chosen_cfg if idx in selected else vanilla_cfg
        n_chosen += idx in selected
        paths = decode_topk(unit.logits, cfg)
        pred = match_line(paths, vocab, strategy)
        if pred.medicine is not None:
            predictions.add(pred.medicine.lower())
    return doc.doc_id, sorted(predictions), n_chosen, len(doc.units) - n_chosen


_POOL_ARGS: dict = {}


def _pool_decode(doc_index: int):
    a = _POOL_ARGS
    return _decode_doc(a["docs"][doc_index], a["mode"], a["segment_fn"],
                       a["chosen_cfg"], a["vanilla_cfg"], a["vocab"], a["strategy"])


def extract_documents(docs: Sequence[SimDocument], *, mode: str, chosen_cfg: DecoderConfig,
                      vanilla_cfg: DecoderConfig, vocab: MedicineVocabulary,
                      strategy: MatchStrategy,
                      segment_fn: Callable[[SimDocument], list[RotatedBox]] | None = None,
                      workers: int | None = None) -> ExtractionRun:
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "segmented" and segment_fn is None:
        raise ConfigError("segmented mode requires a segmenter")
    workers = worker_count() if workers is None else max(1, workers)

    if workers > 1 and len(docs) >= 4 and hasattr(os, "fork"):
        _POOL_ARGS.update(docs=docs, mode=mode, segment_fn=segment_fn, chosen_cfg=chosen_cfg,
                          vanilla_cfg=vanilla_cfg, vocab=vocab, strategy=strategy)
        try:
            ctx = multiprocessing.get_context("fork")
            with ctx.Pool(processes=workers) as pool:
                rows = pool.map(_pool_decode, range(len(docs)))
        finally:
            _POOL_ARGS.clear()
    else:
        rows = [_decode_doc(doc, mode, segment_fn, chosen_cfg, vanilla_cfg, vocab, strategy)
                for doc in docs]

    predictions = {doc_id: preds for doc_id, preds, _, _ in rows}
    report = jaccard_metrics(
        [predictions[doc.doc_id] for doc in docs],
        [sorted(doc.weak_labels) for doc in docs],
    )
    return ExtractionRun(
        report=report,
        predictions=predictions,
        n_chosen_units=sum(r[2] for r in rows),
        n_vanilla_units=sum(r[3] for r in rows),
    )


def train_medicine_lm(spec: GrammarSpec, order: int, discount: float = 0.4,
                      mode: str = "exhaustive", samples_per_entry: int = 1,
                      seed: int = 0, entries=None) -> NGramModel:
    corpus = build_corpus(spec, mode=mode, samples_per_entry=samples_per_entry,
                          seed=seed, entries=entries)
    return train_ngram(corpus, order=order, discount=discount)


def train_vanilla_lm(lines: Sequence[str], order: int, discount: float = 0.4) -> NGramModel:
    return train_ngram([l for l in lines if l.strip()], order=order, discount=discount)
