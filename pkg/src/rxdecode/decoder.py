"""CTC top-k prefix beam search with shallow n-gram LM fusion.

The search keeps one entry per distinct collapsed string ("prefix") and
tracks two path masses per prefix: paths ending in blank and paths ending
in the prefix's last symbol. Extending, repeating, and blank transitions
follow the usual CTC collapse rule; masses of all label paths mapping to
the same string are summed, in log space.

With a fused language model, every character extension adds
``alpha * log P(char | prefix)`` (line-initial context, so the per-path LM
total telescopes to the LM's full sequence score) and string termination
adds the weighted end-of-line score. Ranking is by combined score; ties
break lexicographically on the text so results are reproducible.

Per frame, candidate prefixes are scored with vectorized array math and
merged by prefix identity through a segmented log-sum-exp; only a bounded
number of candidate extensions is realized per frame, so beams in the tens
of thousands stay tractable. When the candidate pool fits the bound, the
search is exact over surviving prefixes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError
from .lm import BOS, EOS, NEG_INF, UNK, NGramModel

BLANK = 0


@dataclass
class LogitMatrix:
    """Per-frame, per-symbol log-scores; rows are log-softmax normalized."""

    frames: np.ndarray
    alphabet: tuple[str, ...]

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise DataError(f"logit matrix must be 2-D, got shape {self.frames.shape}")
        t, a = self.frames.shape
        if t < 1 or a < 2:
            raise DataError(f"logit matrix needs T >= 1 and A >= 2, got {t}x{a}")
        self.alphabet = tuple(self.alphabet)
        if len(self.alphabet) != a:
            raise DataError(f"alphabet size {len(self.alphabet)} != logit columns {a}")
        # normalize rows (idempotent for already-normalized input)
        mx = self.frames.max(axis=1, keepdims=True)
        self.frames = self.frames - mx
        self.frames -= np.log(np.exp(self.frames).sum(axis=1, keepdims=True))

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class DecoderConfig:
    k: int = 1
    beam_width: int | None = None
    alpha: float = 0.0
    lm: NGramModel | None = None
    _fusion: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.k < 1:
            raise DataError(f"k must be >= 1, got {self.k}")
        if self.beam_width is None:
            self.beam_width = max(self.k, 32)
        if self.beam_width < self.k:
            raise DataError(f"beam_width {self.beam_width} < k {self.k}")
        if self.alpha < 0:
            raise DataError(f"alpha must be >= 0, got {self.alpha}")


@dataclass(frozen=True)
class DecodedPath:
    text: str
    combined_score: float
    optical_score: float
    lm_score: float = 0.0


def collapse(labels: Sequence[int], alphabet: Sequence[str]) -> str:
    """CTC collapse: drop repeated adjacent labels, then drop blanks."""
    out = []
    prev = -1
    for idx in labels:
        if idx != prev and idx != BLANK:
            out.append(alphabet[idx])
        prev = idx
    return "".join(out)


class _LmFusion:
    """Maps decoder alphabet indexes onto an n-gram model and caches the
    model's dense next-symbol score vectors per resolved context."""

    def __init__(self, model: NGramModel, alphabet: tuple[str, ...]):
        self.model = model
        self.ctx_len = model.order - 1
        chars = model.characters
        self.syms: list[str | None] = [None]
        for ch in alphabet[1:]:
            low = ch.lower()
            self.syms.append(low if low in chars else UNK)
        self._cache: dict[tuple[str, ...], tuple[np.ndarray, float]] = {}

    def init_window(self) -> tuple[str, ...]:
        return (BOS,) * self.ctx_len

    def child_window(self, window: tuple[str, ...], char_idx: int) -> tuple[str, ...]:
        if self.ctx_len == 0:
            return ()
        return (window + (self.syms[char_idx],))[-self.ctx_len:]

    def vectors(self, window: tuple[str, ...]) -> tuple[np.ndarray, float]:
        """(next-char scores aligned to the decoder alphabet, EOS score)."""
        key = self.model.resolve(window)
        hit = self._cache.get(key)
        if hit is None:
            probs = self.model.tables[len(key)][key].probs
            vec = np.full(len(self.syms), NEG_INF)
            for i in range(1, len(self.syms)):
                vec[i] = probs.get(self.syms[i], NEG_INF)
            hit = (vec, probs.get(EOS, NEG_INF))
            self._cache[key] = hit
        return hit


def _segment_lse2(keys: np.ndarray, va: np.ndarray, vb: np.ndarray):
    """Per-unique-key log-sum-exp of two value arrays."""
    order = np.argsort(keys, kind="stable")
    k = keys[order]
    bounds = np.flatnonzero(np.r_[True, k[1:] != k[:-1]])
    lengths = np.diff(np.append(bounds, len(k)))
    out = []
    with np.errstate(divide="ignore"):
        for values in (va[order], vb[order]):
            mx = np.maximum.reduceat(values, bounds)
            safe = np.where(np.isneginf(mx), 0.0, mx)
            sums = np.add.reduceat(np.exp(values - np.repeat(safe, lengths)), bounds)
            lse = safe + np.log(sums)
            lse[np.isneginf(mx)] = NEG_INF
            out.append(lse)
    return k[bounds], out[0], out[1]


def decode_topk(logits: LogitMatrix, cfg: DecoderConfig) -> list[DecodedPath]:
    """Top-k distinct collapsed strings ranked by combined score."""
    frames = logits.frames
    n_sym = len(logits.alphabet)
    use_lm = cfg.lm is not None and cfg.alpha > 0
    alpha = cfg.alpha if use_lm else 0.0

    fusion = None
    if use_lm:
        fusion = cfg._fusion.get(logits.alphabet)
        if fusion is None or fusion.model is not cfg.lm:
            fusion = _LmFusion(cfg.lm, logits.alphabet)
            cfg._fusion[logits.alphabet] = fusion

    # prefix registry, indexed by prefix id; scalar fields live in growable
    # arrays so per-frame gathers stay vectorized
    table_cap = 1024
    reg_text = [""]
    reg_window: list[tuple] = [()]
    reg_last = np.full(table_cap, -1, dtype=np.int64)
    reg_lm = np.zeros(table_cap)
    reg_eos = np.zeros(table_cap)
    vec_matrix = None
    if fusion is not None:
        w0 = fusion.init_window()
        reg_window = [w0]
        vec0, eos0 = fusion.vectors(w0)
        vec_matrix = np.zeros((table_cap, n_sym))
        vec_matrix[0] = vec0
        reg_eos[0] = eos0

    # child_table[parent, c] is the realized prefix id of parent + alphabet[c]
    child_table = np.full((table_cap, n_sym), -1, dtype=np.int64)

    def grow() -> None:
        nonlocal table_cap, reg_last, reg_lm, reg_eos, vec_matrix, child_table
        table_cap *= 2
        reg_last = np.concatenate([reg_last, np.full(table_cap // 2, -1, dtype=np.int64)])
        reg_lm = np.concatenate([reg_lm, np.zeros(table_cap // 2)])
        reg_eos = np.concatenate([reg_eos, np.zeros(table_cap // 2)])
        if vec_matrix is not None:
            vec_matrix = np.concatenate([vec_matrix, np.zeros((table_cap // 2, n_sym))])
        grown = np.full((table_cap, n_sym), -1, dtype=np.int64)
        grown[:table_cap // 2] = child_table
        child_table = grown

    beam_ids = np.array([0], dtype=np.int64)
    pb = np.array([0.0])
    pnb = np.array([NEG_INF])

    chars = np.arange(1, n_sym)
    n_ext = n_sym - 1
    ext_cap = max(2 * cfg.beam_width, 64)

    for t in range(logits.n_frames):
        row = frames[t]
        beam_last = reg_last[beam_ids]
        beam_lm = reg_lm[beam_ids]
        tot = np.logaddexp(pb, pnb)

        # same-prefix transitions: blank after anything, or repeat of the last symbol
        stay_pb = tot + row[BLANK]
        stay_nb = np.where(beam_last >= 0, pnb + row[beam_last], NEG_INF)

        # extensions by any non-blank symbol
        ext_base = np.where(chars[None, :] == beam_last[:, None], pb[:, None], tot[:, None])
        ext_val = ext_base + row[None, 1:]
        if fusion is not None:
            ext_lm = beam_lm[:, None] + vec_matrix[beam_ids][:, 1:]
            ext_rank = ext_val + alpha * ext_lm
        else:
            ext_lm = None
            ext_rank = ext_val

        flat_rank = ext_rank.ravel()
        finite = np.flatnonzero(flat_rank > NEG_INF)
        if len(finite) > ext_cap:
            top = np.argpartition(flat_rank[finite], -ext_cap)[-ext_cap:]
            selected = finite[top]
        else:
            selected = finite

        # merge on prefix identity before realizing anything: extensions to
        # already-realized prefixes use that id, fresh ones a unique negative key
        sel_rows = selected // n_ext
        sel_cols = selected % n_ext + 1
        sel_parents = beam_ids[sel_rows]
        existing = child_table[sel_parents, sel_cols]
        ext_keys = np.where(existing >= 0, existing, -(selected + 1))

        keys = np.concatenate([beam_ids, ext_keys])
        pb_parts = np.concatenate([stay_pb, np.full(len(ext_keys), NEG_INF)])
        nb_parts = np.concatenate([stay_nb, ext_val.ravel()[selected]])
        merged_keys, new_pb, new_pnb = _segment_lse2(keys, pb_parts, nb_parts)

        optical = np.logaddexp(new_pb, new_pnb)
        alive = optical > NEG_INF
        merged_keys, new_pb, new_pnb, optical = (merged_keys[alive], new_pb[alive],
                                                 new_pnb[alive], optical[alive])
        if fusion is not None:
            fresh = merged_keys < 0
            lm_merged = reg_lm[np.where(fresh, 0, merged_keys)]
            flat_fresh = -(merged_keys[fresh] + 1)
            lm_merged[fresh] = ext_lm.ravel()[flat_fresh]
            score = optical + alpha * lm_merged
        else:
            score = optical
        if len(merged_keys) > cfg.beam_width:
            keep = np.argpartition(score, -cfg.beam_width)[-cfg.beam_width:]
            merged_keys, new_pb, new_pnb = merged_keys[keep], new_pb[keep], new_pnb[keep]

        # realize only the surviving fresh prefixes
        new_ids = merged_keys.copy()
        for j in np.flatnonzero(merged_keys < 0):
            flat_idx = int(-(merged_keys[j] + 1))
            parent = int(beam_ids[flat_idx // n_ext])
            c = flat_idx % n_ext + 1
            cid = child_table[parent, c]
            if cid < 0:
                cid = len(reg_text)
                if cid >= table_cap:
                    grow()
                child_table[parent, c] = cid
                reg_text.append(reg_text[parent] + logits.alphabet[c])
                reg_last[cid] = c
                if fusion is not None:
                    reg_lm[cid] = reg_lm[parent] + vec_matrix[parent, c]
                    window = fusion.child_window(reg_window[parent], c)
                    reg_window.append(window)
                    vec, eos = fusion.vectors(window)
                    vec_matrix[cid] = vec
                    reg_eos[cid] = eos
                else:
                    reg_window.append(())
            new_ids[j] = cid
        beam_ids, pb, pnb = new_ids, new_pb, new_pnb

    optical = np.logaddexp(pb, pnb)
    results = []
    for i, pid in enumerate(beam_ids):
        lm_total = reg_lm[pid] + reg_eos[pid] if fusion is not None else 0.0
        combined = optical[i] + alpha * lm_total if fusion is not None else optical[i]
        results.append(DecodedPath(
            text=reg_text[pid],
            combined_score=float(combined),
            optical_score=float(optical[i]),
            lm_score=float(lm_total),
        ))
    results.sort(key=lambda p: (-p.combined_score, p.text))
    return results[:cfg.k]


def decode_top1(logits: LogitMatrix, cfg: DecoderConfig) -> DecodedPath:
    return decode_topk(logits, cfg)[0]


# ----------------------------------------------------------------------
# logits file formats: LGT1 binary and JSON
# ----------------------------------------------------------------------

_MAGIC = b"LGT1"


def save_logits(matrix: LogitMatrix, path: str | Path) -> None:
    Path(path).write_bytes(logits_to_bytes(matrix))


def logits_to_bytes(matrix: LogitMatrix) -> bytes:
    t, a = matrix.frames.shape
    blob = [_MAGIC, struct.pack("<II", t, a)]
    for sym in matrix.alphabet:
        enc = sym.encode("utf-8")
        blob.append(struct.pack("<I", len(enc)))
        blob.append(enc)
    blob.append(np.asarray(matrix.frames, dtype="<f4").tobytes())
    return b"".join(blob)


def logits_from_bytes(data: bytes) -> LogitMatrix:
    if data[:4] != _MAGIC:
        raise DataError("not an LGT1 blob (bad magic)")
    try:
        t, a = struct.unpack_from("<II", data, 4)
        pos = 12
        alphabet = []
        for _ in range(a):
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            alphabet.append(data[pos:pos + n].decode("utf-8"))
            pos += n
        frames = np.frombuffer(data, dtype="<f4", count=t * a, offset=pos).reshape(t, a)
    except (struct.error, ValueError) as exc:
        raise DataError(f"truncated or malformed LGT1 blob: {exc}") from exc
    return LogitMatrix(frames=np.array(frames, dtype=np.float64), alphabet=tuple(alphabet))


def load_logits(path: str | Path) -> LogitMatrix:
    """Read logits from an LGT1 binary file or its JSON equivalent."""
    data = Path(path).read_bytes()
    if data[:4] == _MAGIC:
        return logits_from_bytes(data)
    try:
        obj = json.loads(data.decode("utf-8"))
        return LogitMatrix(frames=np.array(obj["frames"], dtype=np.float64),
                           alphabet=tuple(obj["alphabet"]))
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: neither LGT1 nor logits JSON: {exc}") from exc
