"""Weakly supervised medicine-name extraction over a simulated optical stack."""

__version__ = "0.1.0"

from .decoder import DecodedPath, DecoderConfig, LogitMatrix, collapse, decode_top1, decode_topk
from .geometry import RotatedBox, box_iou
from .grammar import GrammarSpec, MedicineEntry, MedicineVocabulary, build_corpus, enumerate_lines, sample_line
from .lm import BOS, EOS, UNK, NGramModel, load_lm, save_lm, train_ngram
from .matcher import LinePrediction, MatchStrategy, match_line, predict_document
from .metrics import ExtractionReport, SegReport, jaccard_metrics, seg_miou
from .simulator import SimConfig, SimDocument, emit_logits, gen_dataset
from .weaklabel import (
    FeatureSegmenter,
    IterationConfig,
    NullSegmenter,
    OracleSegmenter,
    WeakLabeledDoc,
    coverage_accept,
    iterate,
    ocr_labeling_fn,
)

__all__ = [
    "BOS", "EOS", "UNK",
    "DecodedPath", "DecoderConfig", "LogitMatrix", "collapse", "decode_top1", "decode_topk",
    "RotatedBox", "box_iou",
    "GrammarSpec", "MedicineEntry", "MedicineVocabulary", "build_corpus", "enumerate_lines", "sample_line",
    "NGramModel", "load_lm", "save_lm", "train_ngram",
    "LinePrediction", "MatchStrategy", "match_line", "predict_document",
    "ExtractionReport", "SegReport", "jaccard_metrics", "seg_miou",
    "SimConfig", "SimDocument", "emit_logits", "gen_dataset",
    "FeatureSegmenter", "IterationConfig", "NullSegmenter", "OracleSegmenter",
    "WeakLabeledDoc", "coverage_accept", "iterate", "ocr_labeling_fn",
]
