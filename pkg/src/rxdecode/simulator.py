"""Synthetic weakly-labeled documents and CTC-consistent logit matrices.

Each document stacks medicine lines (drawn from the grammar) and distractor
lines (drawn from a clinical-style text corpus) vertically, with a
per-writer indent. A text unit carries its box, ground-truth string,
medicine flag, a small feature vector, and a logit matrix that emits
``frames_per_char`` frames per character separated by single blank-favoring
frames. Writer confusion profiles add mass to confusable symbols before
Gaussian noise is applied, standing in for handwriting variation.

Train/test splits partition writers, never documents of one writer.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .decoder import LogitMatrix, logits_from_bytes, logits_to_bytes
from .errors import ConfigError, DataError
from .geometry import RotatedBox
from .grammar import GrammarSpec, MedicineVocabulary, sample_line

SIM_ALPHABET: tuple[str, ...] = ("",) + tuple("abcdefghijklmnopqrstuvwxyz0123456789 .-()/*")
_CHAR_INDEX = {c: i for i, c in enumerate(SIM_ALPHABET)}

DEFAULT_CONFUSIONS: list[tuple[str, str, float]] = [
    ("o", "0", 0.8), ("0", "o", 0.8),
    ("i", "l", 0.8), ("l", "i", 0.8),
    ("s", "5", 0.6), ("5", "s", 0.6),
]

LINE_HEIGHT = 18.0
CHAR_WIDTH = 10.0
LINE_GAP = 8.0


@dataclass
class SimConfig:
    n_docs: int = 200
    medicines_per_doc: float = 4.5
    distractors_per_doc: float = 3.0
    writers: int = 12
    noise_sigma: float = 2.0
    frames_per_char: int = 3
    confusion_pairs: list[tuple[str, str, float]] = field(default_factory=lambda: list(DEFAULT_CONFUSIONS))
    train_fraction: float = 0.8
    seed: int = 0
    target_logit: float = 4.0
    rotation_jitter: float = 0.0
    granularity: str = "line"
    logits_inline: bool = True

    def __post_init__(self):
        if self.frames_per_char < 2:
            raise ConfigError(f"frames_per_char must be >= 2, got {self.frames_per_char}")
        if self.granularity not in ("line", "word"):
            raise ConfigError(f"granularity must be 'line' or 'word', got {self.granularity!r}")
        if not (0.0 < self.train_fraction < 1.0):
            raise ConfigError(f"train_fraction must be in (0, 1), got {self.train_fraction}")


@dataclass
class WriterProfile:
    writer_id: int
    indent: float
    confusions: list[tuple[str, str, float]]


@dataclass
class TextUnit:
    box: RotatedBox
    text: str
    is_medicine: bool
    medicine: str | None
    features: np.ndarray
    logits: LogitMatrix


@dataclass
class SimDocument:
    doc_id: int
    writer_id: int
    units: list[TextUnit]
    weak_labels: set[str]

    def medicine_boxes(self) -> list[RotatedBox]:
        return [u.box for u in self.units if u.is_medicine]


def line_features(text: str, enum_tokens: frozenset, type_tokens: frozenset, indent: float) -> np.ndarray:
    """[starts-with-enum, has-type-token, token count, digit fraction, x indent]."""
    tokens = text.split()
    has_enum = 1.0 if tokens and tokens[0] in enum_tokens else 0.0
    has_type = 1.0 if any(t in type_tokens for t in tokens) else 0.0
    n_chars = max(len(text.replace(" ", "")), 1)
    digit_frac = sum(c.isdigit() for c in text) / n_chars
    return np.array([has_enum, has_type, float(len(tokens)), digit_frac, indent], dtype=np.float64)


def emit_logits(text: str, profile: WriterProfile, cfg: SimConfig,
                rng: np.random.Generator | None = None) -> LogitMatrix:
    """CTC-consistent logits for ``text`` under one writer's confusion profile."""
    if rng is None:
        rng = np.random.default_rng([cfg.seed, profile.writer_id])
    bad = sorted(set(text) - set(SIM_ALPHABET[1:]))
    if bad:
        raise DataError(f"characters outside the simulator alphabet: {bad!r}")
    a = len(SIM_ALPHABET)
    f = cfg.frames_per_char
    n = len(text)
    t = max(1, n * f + max(0, n - 1))
    rows = np.zeros((t, a), dtype=np.float64)
    if n == 0:
        rows[0, 0] = cfg.target_logit
    pos = 0
    for i, ch in enumerate(text):
        if i > 0:
            rows[pos, 0] = cfg.target_logit  # blank separator
            pos += 1
        idx = _CHAR_INDEX[ch]
        rows[pos:pos + f, idx] = cfg.target_logit
        for src, dst, strength in profile.confusions:
            if src == ch and dst in _CHAR_INDEX:
                rows[pos:pos + f, _CHAR_INDEX[dst]] += strength * cfg.target_logit
        pos += f
    if cfg.noise_sigma > 0:
        rows += rng.normal(0.0, cfg.noise_sigma, size=rows.shape)
    return LogitMatrix(frames=rows, alphabet=SIM_ALPHABET)


def writer_profile(cfg: SimConfig, writer_id: int) -> WriterProfile:
    rng = np.random.default_rng([cfg.seed, 7919, writer_id])
    indent = float(rng.uniform(0.0, 30.0))
    confusions = [(src, dst, float(strength * rng.uniform(0.6, 1.4)))
                  for src, dst, strength in cfg.confusion_pairs]
    return WriterProfile(writer_id=writer_id, indent=indent, confusions=confusions)


def _doc_units(lines: list[tuple[str, bool, str | None]], profile: WriterProfile, cfg: SimConfig,
               enum_tokens: frozenset, type_tokens: frozenset,
               rng: np.random.Generator) -> list[TextUnit]:
    units = []
    y = 10.0
    for text, is_med, medicine in lines:
        rotation = float(rng.uniform(-cfg.rotation_jitter, cfg.rotation_jitter)) if cfg.rotation_jitter > 0 else 0.0
        if cfg.granularity == "line":
            pieces = [(text, is_med, medicine, profile.indent)]
        else:
            pieces = []
            x = profile.indent
            for word in text.split():
                word_is_med = is_med and medicine is not None and word == medicine
                pieces.append((word, word_is_med, medicine if word_is_med else None, x))
                x += CHAR_WIDTH * (len(word) + 1)
        for piece, piece_is_med, piece_med, x in pieces:
            box = RotatedBox(top=y, left=x, height=LINE_HEIGHT,
                             width=max(CHAR_WIDTH * len(piece), CHAR_WIDTH), rotation=rotation)
            units.append(TextUnit(
                box=box,
                text=piece,
                is_medicine=piece_is_med,
                medicine=piece_med,
                features=line_features(piece, enum_tokens, type_tokens, profile.indent),
                logits=emit_logits(piece, profile, cfg, rng),
            ))
        y += LINE_HEIGHT + LINE_GAP
    return units


def gen_dataset(cfg: SimConfig, vocab: MedicineVocabulary, spec: GrammarSpec,
                distractors: Sequence[str]) -> tuple[list[SimDocument], list[SimDocument]]:
    """Generate (train, test) documents with a writer-disjoint split."""
    if len(vocab) == 0:
        raise DataError("empty vocabulary")
    distractors = [d.lower() for d in distractors if d.strip()]
    if not distractors:
        raise DataError("empty distractor corpus")
    enum_tokens = frozenset(spec.enum_tokens)
    type_tokens = frozenset(f for forms in spec.type_tokens.values() for f in forms)
    profiles = {w: writer_profile(cfg, w) for w in range(cfg.writers)}
    n_train_writers = min(cfg.writers - 1, max(1, round(cfg.writers * cfg.train_fraction)))
    train_writers = set(range(n_train_writers)) if cfg.writers > 1 else {0}

    entries = list(spec.entries)
    train_docs, test_docs = [], []
    for doc_id in range(cfg.n_docs):
        rng = np.random.default_rng([cfg.seed, doc_id])
        writer_id = doc_id % cfg.writers
        profile = profiles[writer_id]
        n_med = min(max(1, int(rng.poisson(cfg.medicines_per_doc))), len(entries))
        n_dist = int(rng.poisson(cfg.distractors_per_doc))
        med_entries = [entries[i] for i in rng.choice(len(entries), size=n_med, replace=False)]
        lines: list[tuple[str, bool, str | None]] = []
        for entry in med_entries:
            text = sample_line(spec, entry, seed=int(rng.integers(0, 2**31 - 1)))
            lines.append((text, True, entry.name))
        for _ in range(n_dist):
            lines.append((distractors[int(rng.integers(0, len(distractors)))], False, None))
        order = rng.permutation(len(lines))
        lines = [lines[i] for i in order]
        doc = SimDocument(
            doc_id=doc_id,
            writer_id=writer_id,
            units=_doc_units(lines, profile, cfg, enum_tokens, type_tokens, rng),
            weak_labels={e.name for e in med_entries},
        )
        (train_docs if writer_id in train_writers else test_docs).append(doc)
    return train_docs, test_docs


# ----------------------------------------------------------------------
# dataset files: JSONL, logits inline (base64 LGT1) or sidecar files
# ----------------------------------------------------------------------


def _unit_dict(unit: TextUnit, logits_ref: str | None) -> dict:
    d = {
        "box": {"t": unit.box.top, "l": unit.box.left, "h": unit.box.height,
                "w": unit.box.width, "r": unit.box.rotation},
        "text": unit.text,
        "is_medicine": unit.is_medicine,
        "medicine": unit.medicine,
        "features": [float(x) for x in unit.features],
    }
    if logits_ref is None:
        d["logits_b64"] = base64.b64encode(logits_to_bytes(unit.logits)).decode("ascii")
    else:
        d["logits_path"] = logits_ref
    return d


def save_dataset(docs: Iterable[SimDocument], path: str | Path, inline: bool = True) -> None:
    path = Path(path)
    sidecar_dir = path.parent / (path.stem + "_logits")
    if not inline:
        sidecar_dir.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for doc in docs:
            unit_dicts = []
            for u_idx, unit in enumerate(doc.units):
                ref = None
                if not inline:
                    ref = f"{sidecar_dir.name}/doc{doc.doc_id}_u{u_idx}.lgt"
                    (path.parent / ref).write_bytes(logits_to_bytes(unit.logits))
                unit_dicts.append(_unit_dict(unit, ref))
            record = {
                "doc_id": doc.doc_id,
                "writer_id": doc.writer_id,
                "weak_labels": sorted(doc.weak_labels),
                "units": unit_dicts,
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_dataset(path: str | Path) -> list[SimDocument]:
    path = Path(path)
    docs = []
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: line {line_no}: invalid JSON: {exc}") from exc
        units = []
        for u in record["units"]:
            if "logits_b64" in u:
                logits = logits_from_bytes(base64.b64decode(u["logits_b64"]))
            else:
                logits = logits_from_bytes((path.parent / u["logits_path"]).read_bytes())
            box = u["box"]
            units.append(TextUnit(
                box=RotatedBox(top=box["t"], left=box["l"], height=box["h"],
                               width=box["w"], rotation=box["r"]),
                text=u["text"],
                is_medicine=u["is_medicine"],
                medicine=u["medicine"],
                features=np.array(u["features"], dtype=np.float64),
                logits=logits,
            ))
        docs.append(SimDocument(
            doc_id=record["doc_id"],
            writer_id=record["writer_id"],
            units=units,
            weak_labels=set(record["weak_labels"]),
        ))
    return docs


def dataset_stats(docs: Sequence[SimDocument]) -> dict:
    n = len(docs)
    if n == 0:
        return {"n_docs": 0, "n_writers": 0, "mean_medicines_per_doc": 0.0,
                "mean_units_per_doc": 0.0}
    meds = [len(d.weak_labels) for d in docs]
    units = [len(d.units) for d in docs]
    return {
        "n_docs": n,
        "n_writers": len({d.writer_id for d in docs}),
        "mean_medicines_per_doc": sum(meds) / n,
        "mean_units_per_doc": sum(units) / n,
    }
